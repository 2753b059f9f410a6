//! DET-space transforms and plotting: probit (inverse standard-normal
//! CDF), per-curve normal-deviate point sets, and deterministic SVG
//! output.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::AuditError;
use crate::metrics::{fmt_sig9, ErrorCurve, OperatingPoint};

/// Rates outside [CLAMP, 1-CLAMP] are clamped before the probit
/// transform. Plot/deviate output only; numeric tables keep raw rates.
pub const PROBIT_CLAMP: f64 = 1e-6;

/// Inverse standard-normal CDF via Wichura's AS241 (PPND16) rational
/// approximation. Inputs outside the clamp band are clamped.
pub fn probit(p: f64) -> Result<f64, AuditError> {
    if p.is_nan() {
        return Err(AuditError::Eval("probit of NaN".to_string()));
    }
    let p = p.clamp(PROBIT_CLAMP, 1.0 - PROBIT_CLAMP);
    Ok(ppnd16(p))
}

fn ppnd16(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_608e0,
        1.331_416_678_917_843_774_5e2,
        1.971_590_950_306_551_442_7e3,
        1.373_169_376_550_946_112_5e4,
        4.592_195_393_154_987_145_7e4,
        6.726_577_092_700_870_085_3e4,
        3.343_057_558_358_812_810_5e4,
        2.509_080_928_730_122_672_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091_125_2e1,
        6.871_870_074_920_579_083e2,
        5.394_196_021_424_751_107_7e3,
        2.121_379_430_158_659_586_7e4,
        3.930_789_580_009_271_061e4,
        2.872_908_573_572_194_267_4e4,
        5.226_495_278_852_854_561e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34e0,
        4.630_337_846_156_545_295_9e0,
        5.769_497_221_460_691_405_5e0,
        3.647_848_324_763_204_605_04e0,
        1.270_458_252_452_368_382_58e0,
        2.417_807_251_774_506_117_7e-1,
        2.272_384_498_926_918_458_33e-2,
        7.745_450_142_783_414_076_4e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87e0,
        1.676_384_830_183_803_849_4e0,
        6.897_673_349_851_000_045_5e-1,
        1.481_039_764_274_800_745_9e-1,
        1.519_866_656_361_645_719_66e-2,
        5.475_938_084_995_344_946e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2e0,
        5.463_784_911_164_114_369_9e0,
        1.784_826_539_917_291_335_8e0,
        2.965_605_718_285_048_912_3e-1,
        2.653_218_952_657_612_309_3e-2,
        1.242_660_947_388_078_438_6e-3,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879_376_9e-1,
        1.369_298_809_227_358_053_1e-1,
        1.487_536_129_085_061_485_25e-2,
        7.868_691_311_456_132_591e-4,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_888_7e-7,
        2.044_263_103_389_939_785_64e-15,
    ];

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

fn poly(coeffs: &[f64; 8], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Standard normal CDF, accurate to near machine precision via the erf
/// Maclaurin series for small arguments and the erfc continued fraction
/// for the tails.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        2.0 - erfc(-x)
    } else if x < 2.0 {
        1.0 - erf_series(x)
    } else {
        erfc_continued_fraction(x)
    }
}

fn erf_series(x: f64) -> f64 {
    // erf(x) = 2/sqrt(pi) * sum (-1)^n x^(2n+1) / (n! (2n+1))
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 1.0;
    while n < 200.0 {
        term *= -x2 / n;
        let delta = term / (2.0 * n + 1.0);
        sum += delta;
        if delta.abs() < 1e-17 * sum.abs() {
            break;
        }
        n += 1.0;
    }
    std::f64::consts::FRAC_2_SQRT_PI * sum
}

fn erfc_continued_fraction(x: f64) -> f64 {
    // erfc(x) = exp(-x^2)/sqrt(pi) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    let mut tail = 0.0;
    for n in (1..=80).rev() {
        tail = (n as f64 / 2.0) / (x + tail);
    }
    (-x * x).exp() * (std::f64::consts::FRAC_2_SQRT_PI / 2.0) / (x + tail)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarkerKind {
    /// Operating point at the overall minimum threshold.
    Triangle,
    /// Operating point at the subgroup's own minimum threshold.
    Cross,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub label: String,
    pub kind: MarkerKind,
    pub point: OperatingPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub fpr: f64,
    pub fnr: f64,
    pub fpr_deviate: f64,
    pub fnr_deviate: f64,
}

/// An error curve mapped onto normal-deviate axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetCurve {
    /// Subgroup label or `overall`.
    pub source: String,
    pub points: Vec<DetPoint>,
    pub markers: Vec<Marker>,
}

/// Transforms an error curve to DET space. Points are deduplicated to
/// strictly increasing FPR deviates; for equal FPR the lowest FNR is kept.
pub fn det_curve(
    curve: &ErrorCurve,
    source: &str,
    markers: Vec<Marker>,
) -> Result<DetCurve, AuditError> {
    // Thresholds ascend, so FPR descends; keep the first (lowest-FNR)
    // point of each FPR run and reverse.
    let mut raw: Vec<(f64, f64)> = Vec::new();
    for (_, fpr, fnr) in curve.points() {
        match raw.last() {
            Some(&(prev_fpr, _)) if prev_fpr == fpr => {}
            _ => raw.push((fpr, fnr)),
        }
    }
    raw.reverse();

    let mut points: Vec<DetPoint> = Vec::with_capacity(raw.len());
    for (fpr, fnr) in raw {
        let fpr_deviate = probit(fpr)?;
        let fnr_deviate = probit(fnr)?;
        match points.last_mut() {
            // Distinct rates can clamp onto the same deviate; keep the
            // lower FNR deviate.
            Some(last) if last.fpr_deviate == fpr_deviate => {
                if fnr_deviate < last.fnr_deviate {
                    *last = DetPoint {
                        fpr,
                        fnr,
                        fpr_deviate,
                        fnr_deviate,
                    };
                }
            }
            _ => points.push(DetPoint {
                fpr,
                fnr,
                fpr_deviate,
                fnr_deviate,
            }),
        }
    }
    Ok(DetCurve {
        source: source.to_string(),
        points,
        markers,
    })
}

impl DetCurve {
    /// CSV export: `fpr,fnr,fpr_deviate,fnr_deviate`. Rates are unclamped;
    /// deviates carry the clamp.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,fnr,fpr_deviate,fnr_deviate\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{}\n",
                fmt_sig9(p.fpr),
                fmt_sig9(p.fnr),
                fmt_sig9(p.fpr_deviate),
                fmt_sig9(p.fnr_deviate)
            ));
        }
        out
    }
}

/// Plot geometry and axis configuration for DET rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct DetPlotStyle {
    pub width: u32,
    pub height: u32,
    pub title: String,
    /// Axis tick positions as rates.
    pub tick_rates: Vec<f64>,
    /// Axis range as rates.
    pub axis_min_rate: f64,
    pub axis_max_rate: f64,
}

impl Default for DetPlotStyle {
    fn default() -> Self {
        DetPlotStyle {
            width: 720,
            height: 540,
            title: "DET curves".to_string(),
            tick_rates: vec![0.001, 0.005, 0.01, 0.02, 0.05, 0.10, 0.20, 0.40],
            axis_min_rate: 0.0005,
            axis_max_rate: 0.55,
        }
    }
}

const PALETTE: [&str; 18] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf", "#aec7e8", "#ffbb78", "#98df8a", "#ff9896", "#c5b0d5", "#c49c94",
    "#f7b6d2", "#dbdb8d",
];

struct AxisMap {
    dmin: f64,
    dmax: f64,
    x0: f64,
    y0: f64,
    plot_w: f64,
    plot_h: f64,
}

impl AxisMap {
    fn x(&self, deviate: f64) -> f64 {
        let d = deviate.clamp(self.dmin, self.dmax);
        self.x0 + (d - self.dmin) / (self.dmax - self.dmin) * self.plot_w
    }

    fn y(&self, deviate: f64) -> f64 {
        let d = deviate.clamp(self.dmin, self.dmax);
        // SVG y grows downward.
        self.y0 + self.plot_h - (d - self.dmin) / (self.dmax - self.dmin) * self.plot_h
    }
}

fn fmt_px(v: f64) -> String {
    format!("{v:.2}")
}

fn tick_label(rate: f64) -> String {
    let pct = rate * 100.0;
    if pct < 1.0 {
        format!("{pct}%")
    } else {
        format!("{pct:.0}%")
    }
}

/// Renders DET curves to SVG markup. The `overall` series is drawn dotted
/// black; markers follow the triangle/cross convention. Output bytes are
/// a pure function of the inputs.
pub fn render_det_svg(curves: &[DetCurve], style: &DetPlotStyle) -> Result<String, AuditError> {
    if curves.is_empty() {
        return Err(AuditError::Eval("no curves to render".to_string()));
    }
    let margin_left = 70.0;
    let margin_right = 170.0;
    let margin_top = 40.0;
    let margin_bottom = 55.0;
    let axes = AxisMap {
        dmin: ppnd16(style.axis_min_rate.max(PROBIT_CLAMP)),
        dmax: ppnd16(style.axis_max_rate.min(1.0 - PROBIT_CLAMP)),
        x0: margin_left,
        y0: margin_top,
        plot_w: style.width as f64 - margin_left - margin_right,
        plot_h: style.height as f64 - margin_top - margin_bottom,
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n",
        style.width, style.height, style.width, style.height
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"white\"/>\n",
        style.width, style.height
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        fmt_px(axes.x0 + axes.plot_w / 2.0),
        xml_escape(&style.title)
    ));
    // plot frame
    svg.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>\n",
        fmt_px(axes.x0),
        fmt_px(axes.y0),
        fmt_px(axes.plot_w),
        fmt_px(axes.plot_h)
    ));

    // grid + percent tick labels on both axes
    for &rate in &style.tick_rates {
        let d = ppnd16(rate);
        let x = axes.x(d);
        let y = axes.y(d);
        svg.push_str(&format!(
            "<line x1=\"{x1}\" y1=\"{y1}\" x2=\"{x2}\" y2=\"{y2}\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
            x1 = fmt_px(x),
            y1 = fmt_px(axes.y0),
            x2 = fmt_px(x),
            y2 = fmt_px(axes.y0 + axes.plot_h)
        ));
        svg.push_str(&format!(
            "<line x1=\"{x1}\" y1=\"{y1}\" x2=\"{x2}\" y2=\"{y2}\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
            x1 = fmt_px(axes.x0),
            y1 = fmt_px(y),
            x2 = fmt_px(axes.x0 + axes.plot_w),
            y2 = fmt_px(y)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            fmt_px(x),
            fmt_px(axes.y0 + axes.plot_h + 16.0),
            tick_label(rate)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
            fmt_px(axes.x0 - 6.0),
            fmt_px(y + 4.0),
            tick_label(rate)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">False positive rate</text>\n",
        fmt_px(axes.x0 + axes.plot_w / 2.0),
        fmt_px(axes.y0 + axes.plot_h + 40.0)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">False negative rate</text>\n",
        fmt_px(axes.y0 + axes.plot_h / 2.0),
        fmt_px(axes.y0 + axes.plot_h / 2.0)
    ));

    let mut color_idx = 0usize;
    let mut legend = Vec::new();
    for curve in curves {
        let overall = curve.source == "overall";
        let color = if overall {
            "black"
        } else {
            let c = PALETTE[color_idx % PALETTE.len()];
            color_idx += 1;
            c
        };
        let dash = if overall { " stroke-dasharray=\"4,3\"" } else { "" };
        let coords: Vec<String> = curve
            .points
            .iter()
            .map(|p| format!("{},{}", fmt_px(axes.x(p.fpr_deviate)), fmt_px(axes.y(p.fnr_deviate))))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"{} points=\"{}\"/>\n",
            color,
            dash,
            coords.join(" ")
        ));
        for marker in &curve.markers {
            let x = axes.x(ppnd16(marker.point.fpr.clamp(PROBIT_CLAMP, 1.0 - PROBIT_CLAMP)));
            let y = axes.y(ppnd16(marker.point.fnr.clamp(PROBIT_CLAMP, 1.0 - PROBIT_CLAMP)));
            match marker.kind {
                MarkerKind::Triangle => {
                    svg.push_str(&format!(
                        "<path d=\"M {} {} L {} {} L {} {} Z\" fill=\"{}\"/>\n",
                        fmt_px(x),
                        fmt_px(y - 5.0),
                        fmt_px(x - 4.5),
                        fmt_px(y + 3.5),
                        fmt_px(x + 4.5),
                        fmt_px(y + 3.5),
                        color
                    ));
                }
                MarkerKind::Cross => {
                    svg.push_str(&format!(
                        "<path d=\"M {} {} L {} {} M {} {} L {} {}\" stroke=\"{}\" stroke-width=\"1.8\" fill=\"none\"/>\n",
                        fmt_px(x - 4.0),
                        fmt_px(y - 4.0),
                        fmt_px(x + 4.0),
                        fmt_px(y + 4.0),
                        fmt_px(x - 4.0),
                        fmt_px(y + 4.0),
                        fmt_px(x + 4.0),
                        fmt_px(y - 4.0),
                        color
                    ));
                }
            }
        }
        legend.push((curve.source.clone(), color.to_string(), overall));
    }

    let legend_x = axes.x0 + axes.plot_w + 16.0;
    for (i, (name, color, overall)) in legend.iter().enumerate() {
        let y = axes.y0 + 10.0 + i as f64 * 18.0;
        let dash = if *overall { " stroke-dasharray=\"4,3\"" } else { "" };
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\" stroke-width=\"1.5\"{}/>\n",
            fmt_px(legend_x),
            fmt_px(y),
            fmt_px(legend_x + 22.0),
            fmt_px(y),
            color,
            dash
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            fmt_px(legend_x + 28.0),
            fmt_px(y + 4.0),
            xml_escape(name)
        ));
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Renders a paired-bias scatter with the equality diagonal.
pub fn render_scatter_svg(pairs: &[(String, f64, f64)], title: &str) -> String {
    let width = 560.0;
    let height = 560.0;
    let margin = 70.0;
    let plot = width - 2.0 * margin;
    let max = pairs
        .iter()
        .flat_map(|(_, a, b)| [*a, *b])
        .fold(1.0f64, f64::max)
        * 1.1;

    let to_x = |v: f64| margin + v / max * plot;
    let to_y = |v: f64| height - margin - v / max * plot;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"28\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n",
        fmt_px(width / 2.0),
        xml_escape(title)
    ));
    svg.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        fmt_px(margin),
        fmt_px(margin),
        fmt_px(plot),
        fmt_px(plot)
    ));
    // axis ticks, 5 divisions
    for i in 0..=5 {
        let v = max * i as f64 / 5.0;
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{:.2}</text>\n",
            fmt_px(to_x(v)),
            fmt_px(height - margin + 18.0),
            v
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{:.2}</text>\n",
            fmt_px(margin - 8.0),
            fmt_px(to_y(v) + 4.0),
            v
        ));
    }
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#999999\" stroke-dasharray=\"5,4\"/>\n",
        fmt_px(to_x(0.0)),
        fmt_px(to_y(0.0)),
        fmt_px(to_x(max)),
        fmt_px(to_y(max))
    ));
    for (label, a, b) in pairs {
        svg.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"#1f77b4\"/>\n",
            fmt_px(to_x(*a)),
            fmt_px(to_y(*b))
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"9\">{}</text>\n",
            fmt_px(to_x(*a) + 6.0),
            fmt_px(to_y(*b) - 4.0),
            xml_escape(label)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">subgroup bias, run A</text>\n",
        fmt_px(width / 2.0),
        fmt_px(height - 22.0)
    ));
    svg.push_str(&format!(
        "<text x=\"20\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 20 {})\">subgroup bias, run B</text>\n",
        fmt_px(height / 2.0),
        fmt_px(height / 2.0)
    ));
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes SVG content to disk.
pub fn write_svg(path: &Path, content: &str) -> Result<(), AuditError> {
    std::fs::write(path, content).map_err(|e| AuditError::io(path, e))
}
