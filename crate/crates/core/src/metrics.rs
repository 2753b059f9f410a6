//! Threshold-swept error curves, equal error rate and the detection cost
//! function.
//!
//! The decision rule is: accept iff score >= threshold. FPR and FNR are
//! step functions of the threshold, so every quantity of interest is
//! attained at one of the distinct observed scores or at the two virtual
//! endpoints (-inf: accept everything, +inf: reject everything). Rates
//! are kept as integer counts internally and only become floating point
//! at the reporting boundary.

use serde::{Deserialize, Serialize};

use crate::error::AuditError;

/// Parameters of the detection cost function
/// `C_Det(t) = c_fn * p_target * FNR(t) + c_fp * (1 - p_target) * FPR(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcfConfig {
    pub p_target: f64,
    pub c_fn: f64,
    pub c_fp: f64,
    pub preset_name: Option<String>,
}

impl Default for DcfConfig {
    fn default() -> Self {
        DcfConfig {
            p_target: 0.05,
            c_fn: 1.0,
            c_fp: 1.0,
            preset_name: Some("sre19".to_string()),
        }
    }
}

impl DcfConfig {
    pub fn new(p_target: f64, c_fn: f64, c_fp: f64) -> Self {
        DcfConfig {
            p_target,
            c_fn,
            c_fp,
            preset_name: None,
        }
    }

    pub fn validate(&self) -> Result<(), AuditError> {
        if !(self.p_target > 0.0 && self.p_target < 1.0) {
            return Err(AuditError::InvalidConfig(format!(
                "p_target must be in (0,1), got {}",
                self.p_target
            )));
        }
        if self.c_fn < 0.0 || self.c_fp < 0.0 || (self.c_fn == 0.0 && self.c_fp == 0.0) {
            return Err(AuditError::InvalidConfig(
                "cost weights must be non-negative and not both zero".to_string(),
            ));
        }
        Ok(())
    }
}

/// Detection cost at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub cost: f64,
}

/// The detection cost function.
pub fn dcf(fpr: f64, fnr: f64, config: &DcfConfig) -> f64 {
    config.c_fn * config.p_target * fnr + config.c_fp * (1.0 - config.p_target) * fpr
}

/// FPR/FNR step functions over the candidate thresholds of a score set.
///
/// Thresholds are the distinct observed scores plus the virtual endpoints
/// -inf (FPR 1, FNR 0) and +inf (FPR 0, FNR 1), ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurve {
    thresholds: Vec<f64>,
    fp_counts: Vec<u64>,
    fn_counts: Vec<u64>,
    n_target: u64,
    n_nontarget: u64,
}

impl ErrorCurve {
    /// Sweeps all candidate thresholds over the given score sets.
    pub fn compute(targets: &[f64], nontargets: &[f64]) -> Result<Self, AuditError> {
        if targets.is_empty() {
            return Err(AuditError::EmptyScoreSide { side: "target" });
        }
        if nontargets.is_empty() {
            return Err(AuditError::EmptyScoreSide { side: "nontarget" });
        }
        for &s in targets.iter().chain(nontargets) {
            if !s.is_finite() {
                return Err(AuditError::Eval(format!("non-finite score {s}")));
            }
        }
        let mut sorted_targets = targets.to_vec();
        let mut sorted_nontargets = nontargets.to_vec();
        sorted_targets.sort_by(f64::total_cmp);
        sorted_nontargets.sort_by(f64::total_cmp);

        let mut distinct: Vec<f64> = sorted_targets
            .iter()
            .chain(&sorted_nontargets)
            .copied()
            .collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();

        let n_target = sorted_targets.len() as u64;
        let n_nontarget = sorted_nontargets.len() as u64;

        let mut thresholds = Vec::with_capacity(distinct.len() + 2);
        let mut fp_counts = Vec::with_capacity(distinct.len() + 2);
        let mut fn_counts = Vec::with_capacity(distinct.len() + 2);

        thresholds.push(f64::NEG_INFINITY);
        fp_counts.push(n_nontarget);
        fn_counts.push(0);

        for &t in &distinct {
            // accepted nontargets: scores >= t; rejected targets: scores < t
            let below_nt = sorted_nontargets.partition_point(|&s| s < t) as u64;
            let below_t = sorted_targets.partition_point(|&s| s < t) as u64;
            thresholds.push(t);
            fp_counts.push(n_nontarget - below_nt);
            fn_counts.push(below_t);
        }

        thresholds.push(f64::INFINITY);
        fp_counts.push(0);
        fn_counts.push(n_target);

        Ok(ErrorCurve {
            thresholds,
            fp_counts,
            fn_counts,
            n_target,
            n_nontarget,
        })
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn n_target(&self) -> u64 {
        self.n_target
    }

    pub fn n_nontarget(&self) -> u64 {
        self.n_nontarget
    }

    pub fn threshold(&self, i: usize) -> f64 {
        self.thresholds[i]
    }

    pub fn fpr(&self, i: usize) -> f64 {
        self.fp_counts[i] as f64 / self.n_nontarget as f64
    }

    pub fn fnr(&self, i: usize) -> f64 {
        self.fn_counts[i] as f64 / self.n_target as f64
    }

    /// (threshold, fpr, fnr) triples in ascending threshold order.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..self.len()).map(|i| (self.threshold(i), self.fpr(i), self.fnr(i)))
    }

    /// Raw (false-positive, false-negative) counts at an arbitrary
    /// threshold under the accept-iff-score>=t rule.
    pub fn counts_at(&self, threshold: f64) -> (u64, u64) {
        let i = self.index_at(threshold);
        (self.fp_counts[i], self.fn_counts[i])
    }

    fn index_at(&self, threshold: f64) -> usize {
        // Counts at t equal counts at the smallest candidate >= t.
        self.thresholds.partition_point(|&c| c < threshold)
    }

    /// The rate where FPR = FNR, by linear interpolation between the
    /// bracketing curve points. Exact crossings are returned as-is.
    pub fn eer(&self) -> f64 {
        // d = fnr - fpr is non-decreasing along the curve, from -1 to +1.
        let mut prev = (self.fpr(0), self.fnr(0));
        for i in 1..self.len() {
            let cur = (self.fpr(i), self.fnr(i));
            let d_cur = cur.1 - cur.0;
            if d_cur >= 0.0 {
                if d_cur == 0.0 {
                    return cur.0;
                }
                let d_prev = prev.1 - prev.0;
                if d_prev == 0.0 {
                    return prev.0;
                }
                let t = -d_prev / (d_cur - d_prev);
                return (1.0 - t) * prev.0 + t * cur.0;
            }
            prev = cur;
        }
        // Unreachable: the +inf endpoint has d = +1.
        prev.0
    }

    /// The cost-minimizing operating point; ties broken by smallest
    /// threshold.
    pub fn min_dcf(&self, config: &DcfConfig) -> OperatingPoint {
        let mut best = 0usize;
        let mut best_cost = dcf(self.fpr(0), self.fnr(0), config);
        for i in 1..self.len() {
            let cost = dcf(self.fpr(i), self.fnr(i), config);
            if cost < best_cost {
                best = i;
                best_cost = cost;
            }
        }
        OperatingPoint {
            threshold: self.threshold(best),
            fpr: self.fpr(best),
            fnr: self.fnr(best),
            cost: best_cost,
        }
    }

    /// Reads the curve at an arbitrary (possibly off-grid) threshold.
    pub fn operating_point_at(&self, threshold: f64, config: &DcfConfig) -> OperatingPoint {
        let i = self.index_at(threshold);
        let fpr = self.fpr(i);
        let fnr = self.fnr(i);
        OperatingPoint {
            threshold,
            fpr,
            fnr,
            cost: dcf(fpr, fnr, config),
        }
    }

    /// CSV export: `threshold,fpr,fnr` with 9 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,fnr\n");
        for (t, fpr, fnr) in self.points() {
            out.push_str(&format!(
                "{},{},{}\n",
                fmt_sig9(t),
                fmt_sig9(fpr),
                fmt_sig9(fnr)
            ));
        }
        out
    }
}

pub(crate) fn fmt_sig9(x: f64) -> String {
    if x == f64::NEG_INFINITY {
        "-inf".to_string()
    } else if x == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{x:.8e}")
    }
}
