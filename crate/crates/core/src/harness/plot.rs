//! Deterministic plot rendering.
//!
//! A small self-contained rasterizer: axes with nice-number ticks,
//! polyline series with optional markers and dashing, a horizontal
//! threshold line, a legend, and a fixed 5×7 bitmap font. Given the same
//! spec it produces the same pixels, and the PNG encoder adds no
//! timestamps, so plot files are byte-reproducible — they can be diffed
//! across runs like any other artifact.
//!
//! Two canned layouts cover the harness's needs: a learning curve over
//! environment steps (held-out return and success rate, with a black
//! dashed line at the consistent-success level) and a per-trial
//! reward-decoder trace (predicted reward mean and variance against the
//! step index).

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::harness::metrics::MetricsRow;

pub const WIDTH: u32 = 720;
pub const HEIGHT: u32 = 480;

const MARGIN_LEFT: u32 = 78;
const MARGIN_RIGHT: u32 = 24;
const MARGIN_TOP: u32 = 46;
const MARGIN_BOTTOM: u32 = 56;

const BLACK: [u8; 3] = [0, 0, 0];
const WHITE: [u8; 3] = [255, 255, 255];
const GREY: [u8; 3] = [176, 176, 176];

/// Default series palette (blue, orange, green, red, purple).
pub const PALETTE: [[u8; 3]; 5] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
];

/// Success-rate level treated as "consistent task success" for a family,
/// drawn as the dashed threshold on success learning curves.
pub fn success_threshold() -> f64 {
    0.8
}

/// One curve.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub color: [u8; 3],
    pub dashed: bool,
    /// Draw 3×3 markers at the data points (always on for singleton
    /// series, which have no line to show).
    pub markers: bool,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>, color: [u8; 3]) -> Self {
        Series {
            label: label.into(),
            points,
            color,
            dashed: false,
            markers: true,
        }
    }
}

/// Full description of one figure.
#[derive(Debug, Clone)]
pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Horizontal dashed threshold: (y value, legend label).
    pub threshold: Option<(f64, String)>,
}

impl PlotSpec {
    pub fn new(
        title: impl Into<String>,
        x_label: impl Into<String>,
        y_label: impl Into<String>,
    ) -> Self {
        PlotSpec {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
            threshold: None,
        }
    }

    pub fn has_data(&self) -> bool {
        self.series.iter().any(|s| !s.points.is_empty())
    }

    /// Render and write as PNG. Refuses to write an all-empty figure.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        if !self.has_data() {
            return Err(Error::Usage(format!(
                "plot `{}` has no data points",
                self.title
            )));
        }
        let img = render(self);
        let path = path.as_ref();
        img.save(path)
            .map_err(|e| Error::Serde(format!("writing plot {}: {e}", path.display())))
    }
}

// ---------------------------------------------------------------------------
// Rasterization primitives
// ---------------------------------------------------------------------------

struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn new() -> Self {
        Canvas {
            img: RgbImage::from_pixel(WIDTH, HEIGHT, Rgb(WHITE)),
        }
    }

    fn set(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if (0..WIDTH as i64).contains(&x) && (0..HEIGHT as i64).contains(&y) {
            self.img.put_pixel(x as u32, y as u32, Rgb(c));
        }
    }

    fn fill_rect(&mut self, x: i64, y: i64, w: i64, h: i64, c: [u8; 3]) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.set(xx, yy, c);
            }
        }
    }

    /// Bresenham line; `dash` skips pixels in an 6-on/4-off pattern,
    /// phased by a running pixel counter so consecutive segments of a
    /// polyline continue the pattern.
    fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: [u8; 3], dash: bool, phase: &mut u32) {
        let (mut x, mut y) = (x0, y0);
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            if !dash || *phase % 10 < 6 {
                self.set(x, y, c);
            }
            *phase += 1;
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn marker(&mut self, x: i64, y: i64, c: [u8; 3]) {
        self.fill_rect(x - 1, y - 1, 3, 3, c);
    }

    /// 5×7 bitmap text; lowercase folds to uppercase. Returns the x
    /// position after the last character.
    fn text(&mut self, x: i64, y: i64, s: &str, c: [u8; 3], scale: i64) -> i64 {
        let mut cx = x;
        for ch in s.chars() {
            let rows = glyph(ch.to_ascii_uppercase());
            for (ry, bits) in rows.iter().enumerate() {
                for rx in 0..5 {
                    if bits & (0x10 >> rx) != 0 {
                        self.fill_rect(
                            cx + rx as i64 * scale,
                            y + ry as i64 * scale,
                            scale,
                            scale,
                            c,
                        );
                    }
                }
            }
            cx += 6 * scale;
        }
        cx
    }
}

fn text_width(s: &str, scale: i64) -> i64 {
    s.chars().count() as i64 * 6 * scale
}

/// 5-bit rows of the 7-row glyph; unknown characters render blank.
fn glyph(ch: char) -> [u8; 7] {
    match ch {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        ',' => [0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '+' => [0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08],
        '/' => [0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10],
        '%' => [0x19, 0x19, 0x02, 0x04, 0x08, 0x13, 0x13],
        '_' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F],
        '=' => [0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00],
        _ => [0; 7],
    }
}

// ---------------------------------------------------------------------------
// Axis layout
// ---------------------------------------------------------------------------

/// Smallest {1,2,5}·10^k step that covers `range` in at most `target`
/// intervals.
fn nice_step(range: f64, target: usize) -> f64 {
    let raw = range / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let nice = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn tick_label(v: f64, step: f64) -> String {
    // Clamp near-zero values produced by stepping, so "-0" never shows.
    let v = if v.abs() < step * 1e-9 { 0.0 } else { v };
    if step >= 1.0 {
        format!("{v:.0}")
    } else if step >= 0.1 {
        format!("{v:.1}")
    } else if step >= 0.01 {
        format!("{v:.2}")
    } else if step >= 0.001 {
        format!("{v:.3}")
    } else {
        format!("{v:e}")
    }
}

struct Axis {
    min: f64,
    max: f64,
    step: f64,
}

impl Axis {
    /// Padded data range with tick step; degenerate ranges get a unit of
    /// breathing room so a single point still renders mid-plot.
    fn fit(lo: f64, hi: f64) -> Axis {
        let (mut lo, mut hi) = (lo, hi);
        if !lo.is_finite() || !hi.is_finite() {
            lo = 0.0;
            hi = 1.0;
        }
        if hi - lo < 1e-12 {
            let pad = lo.abs().max(1.0) * 0.5;
            lo -= pad;
            hi += pad;
        } else {
            let pad = (hi - lo) * 0.05;
            lo -= pad;
            hi += pad;
        }
        let step = nice_step(hi - lo, 6);
        Axis { min: lo, max: hi, step }
    }

    fn ticks(&self) -> Vec<f64> {
        let mut v = (self.min / self.step).ceil() * self.step;
        let mut out = Vec::new();
        while v <= self.max + self.step * 1e-9 {
            out.push(v);
            v += self.step;
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Figure assembly
// ---------------------------------------------------------------------------

/// Rasterize a spec. Pure: same spec, same pixels.
pub fn render(spec: &PlotSpec) -> RgbImage {
    let mut cv = Canvas::new();
    let (x0, x1) = (MARGIN_LEFT as i64, (WIDTH - MARGIN_RIGHT) as i64);
    let (y0, y1) = (MARGIN_TOP as i64, (HEIGHT - MARGIN_BOTTOM) as i64);

    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in &spec.series {
        for &(x, y) in &s.points {
            xs.push(x);
            ys.push(y);
        }
    }
    if let Some((ty, _)) = &spec.threshold {
        ys.push(*ty);
    }
    let fold = |v: &[f64]| {
        (
            v.iter().copied().fold(f64::INFINITY, f64::min),
            v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    };
    let (xl, xh) = fold(&xs);
    let (yl, yh) = fold(&ys);
    let ax = Axis::fit(xl, xh);
    let ay = Axis::fit(yl, yh);

    let px = |v: f64| x0 + ((v - ax.min) / (ax.max - ax.min) * (x1 - x0) as f64).round() as i64;
    let py = |v: f64| y1 - ((v - ay.min) / (ay.max - ay.min) * (y1 - y0) as f64).round() as i64;

    // Frame and ticks.
    let mut solid = 0u32;
    cv.line(x0, y0, x0, y1, BLACK, false, &mut solid);
    cv.line(x0, y1, x1, y1, BLACK, false, &mut solid);
    for tv in ax.ticks() {
        let x = px(tv);
        cv.line(x, y1, x, y1 + 4, BLACK, false, &mut solid);
        let mut grid = 0u32;
        cv.line(x, y0, x, y1 - 1, GREY, true, &mut grid);
        let label = tick_label(tv, ax.step);
        cv.text(x - text_width(&label, 1) / 2, y1 + 8, &label, BLACK, 1);
    }
    for tv in ay.ticks() {
        let y = py(tv);
        cv.line(x0 - 4, y, x0, y, BLACK, false, &mut solid);
        let mut grid = 0u32;
        cv.line(x0 + 1, y, x1, y, GREY, true, &mut grid);
        let label = tick_label(tv, ay.step);
        cv.text(x0 - 8 - text_width(&label, 1), y - 3, &label, BLACK, 1);
    }

    // Threshold line under the data series.
    if let Some((ty, _)) = &spec.threshold {
        let y = py(*ty);
        let mut phase = 0u32;
        cv.line(x0 + 1, y, x1, y, BLACK, true, &mut phase);
    }

    // Series.
    for s in &spec.series {
        let mut phase = 0u32;
        for w in s.points.windows(2) {
            cv.line(
                px(w[0].0),
                py(w[0].1),
                px(w[1].0),
                py(w[1].1),
                s.color,
                s.dashed,
                &mut phase,
            );
        }
        if s.markers || s.points.len() < 2 {
            for &(x, y) in &s.points {
                cv.marker(px(x), py(y), s.color);
            }
        }
    }

    // Labels.
    cv.text(
        (WIDTH as i64 - text_width(&spec.title, 2)) / 2,
        12,
        &spec.title,
        BLACK,
        2,
    );
    cv.text(
        (WIDTH as i64 - text_width(&spec.x_label, 1)) / 2,
        HEIGHT as i64 - 18,
        &spec.x_label,
        BLACK,
        1,
    );
    cv.text(6, y0 - 14, &spec.y_label, BLACK, 1);

    // Legend, top-right inside the frame.
    let mut entries: Vec<(String, [u8; 3], bool)> = spec
        .series
        .iter()
        .map(|s| (s.label.clone(), s.color, s.dashed))
        .collect();
    if let Some((_, label)) = &spec.threshold {
        entries.push((label.clone(), BLACK, true));
    }
    let widest = entries
        .iter()
        .map(|(l, _, _)| text_width(l, 1))
        .max()
        .unwrap_or(0);
    let lx = x1 - widest - 30;
    let mut ly = y0 + 8;
    for (label, color, dashed) in entries {
        let mut phase = 0u32;
        cv.line(lx, ly + 3, lx + 18, ly + 3, color, dashed, &mut phase);
        cv.text(lx + 24, ly, &label, BLACK, 1);
        ly += 12;
    }

    cv.img
}

// ---------------------------------------------------------------------------
// Canned figures
// ---------------------------------------------------------------------------

/// Held-out return over environment steps: mean per-trial return plus
/// first/last-episode returns. `None` when no row carries evaluation
/// columns.
pub fn learning_curve_return(rows: &[MetricsRow]) -> Option<PlotSpec> {
    let evals: Vec<(&MetricsRow, &super::metrics::EvalColumns)> = rows
        .iter()
        .filter_map(|r| r.eval.as_ref().map(|e| (r, e)))
        .collect();
    if evals.is_empty() {
        return None;
    }
    let pts = |f: &dyn Fn(&super::metrics::EvalColumns) -> f64| {
        evals
            .iter()
            .map(|(r, e)| (r.env_steps as f64, f(e)))
            .collect::<Vec<_>>()
    };
    let mut spec = PlotSpec::new("HELD-OUT RETURN", "ENV STEPS", "RETURN");
    spec.series.push(Series::new(
        "TRIAL MEAN",
        pts(&|e| e.mean_shaped),
        PALETTE[0],
    ));
    spec.series.push(Series::new(
        "EPISODE 1",
        pts(&|e| e.first_shaped),
        PALETTE[1],
    ));
    spec.series.push(Series::new(
        "EPISODE 2",
        pts(&|e| e.last_shaped),
        PALETTE[2],
    ));
    Some(spec)
}

/// Held-out final-episode success rate over environment steps, with the
/// consistent-success threshold dashed in black.
pub fn learning_curve_success(rows: &[MetricsRow]) -> Option<PlotSpec> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| {
            r.eval
                .as_ref()
                .map(|e| (r.env_steps as f64, e.last_success))
        })
        .collect();
    if pts.is_empty() {
        return None;
    }
    let mut spec = PlotSpec::new("HELD-OUT SUCCESS", "ENV STEPS", "SUCCESS RATE");
    spec.series
        .push(Series::new("FINAL EPISODE", pts, PALETTE[0]));
    spec.threshold = Some((success_threshold(), "SUCCESS LEVEL".into()));
    Some(spec)
}

/// Reward-decoder diagnostic for one trial: predicted reward mean and
/// variance against the step index, with the observed reward channel for
/// reference.
pub fn reward_decoder_figure(
    predicted: &[(f64, f64)],
    observed: &[f64],
    boundaries: &[usize],
) -> PlotSpec {
    let mut spec = PlotSpec::new("REWARD DECODER", "STEP", "REWARD");
    let means: Vec<(f64, f64)> = predicted
        .iter()
        .enumerate()
        .map(|(t, &(m, _))| (t as f64, m))
        .collect();
    let vars: Vec<(f64, f64)> = predicted
        .iter()
        .enumerate()
        .map(|(t, &(_, v))| (t as f64, v))
        .collect();
    let obs: Vec<(f64, f64)> = observed
        .iter()
        .enumerate()
        .map(|(t, &r)| (t as f64, r))
        .collect();
    spec.series.push(Series::new("OBSERVED", obs, PALETTE[2]));
    spec.series
        .push(Series::new("PREDICTED MEAN", means, PALETTE[0]));
    let mut var_series = Series::new("PREDICTED VAR", vars, PALETTE[3]);
    var_series.dashed = true;
    spec.series.push(var_series);
    let (ylo, yhi) = spec
        .series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    for &b in boundaries {
        // Vertical dashed rule at each episode boundary.
        spec.series.push(Series {
            label: "BOUNDARY".into(),
            points: vec![(b as f64, ylo), (b as f64, yhi)],
            color: GREY,
            dashed: true,
            markers: false,
        });
    }
    spec
}
