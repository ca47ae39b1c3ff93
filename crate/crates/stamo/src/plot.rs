//! Minimal deterministic chart rendering to PNG.
//!
//! No plotting backend dependency: bars, lines, axes, and a built-in 5×7
//! bitmap font, rasterized into an [`Observation`] buffer and written with
//! the crate's PNG writer. Identical inputs produce byte-identical files.

use crate::error::Result;
use crate::gripperworld::Observation;
use crate::imageio;
use std::path::Path;

pub struct Canvas {
    img: Observation,
}

const BG: [f64; 3] = [1.0, 1.0, 1.0];
const AXIS: [f64; 3] = [0.15, 0.15, 0.15];

/// Series palette (colorblind-safe-ish).
pub const SERIES_COLORS: [[f64; 3]; 6] = [
    [0.16, 0.35, 0.75],
    [0.85, 0.42, 0.10],
    [0.22, 0.60, 0.28],
    [0.60, 0.20, 0.60],
    [0.75, 0.15, 0.20],
    [0.35, 0.35, 0.35],
];

impl Canvas {
    pub fn new(width: usize, height: usize) -> Self {
        let mut img = Observation::zeros(height, width);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    img.set(y, x, c, BG[c]);
                }
            }
        }
        Canvas { img }
    }

    pub fn width(&self) -> usize {
        self.img.width()
    }

    pub fn height(&self) -> usize {
        self.img.height()
    }

    pub fn set_px(&mut self, x: i64, y: i64, color: [f64; 3]) {
        if x < 0 || y < 0 || x as usize >= self.img.width() || y as usize >= self.img.height() {
            return;
        }
        for c in 0..3 {
            self.img.set(y as usize, x as usize, c, color[c]);
        }
    }

    pub fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, color: [f64; 3]) {
        for y in y0.min(y1)..=y0.max(y1) {
            for x in x0.min(x1)..=x0.max(x1) {
                self.set_px(x, y, color);
            }
        }
    }

    pub fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, color: [f64; 3]) {
        // Bresenham
        let (mut x, mut y) = (x0, y0);
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.set_px(x, y, color);
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

    pub fn text(&mut self, x: i64, y: i64, s: &str, color: [f64; 3]) {
        let mut cx = x;
        for ch in s.chars() {
            let glyph = font5x7(ch.to_ascii_uppercase());
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..5 {
                    if bits & (1 << (4 - col)) != 0 {
                        self.set_px(cx + col as i64, y + row as i64, color);
                    }
                }
            }
            cx += 6;
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        imageio::save_png(path, &self.img)
    }
}

/// 5×7 glyphs for digits, uppercase letters, and a little punctuation.
fn font5x7(c: char) -> [u8; 7] {
    match c {
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
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        ',' => [0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '+' => [0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00],
        '_' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        '=' => [0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00],
        '/' => [0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08],
        '%' => [0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03],
        'e' => [0x00, 0x00, 0x0E, 0x11, 0x1F, 0x10, 0x0E],
        ' ' => [0; 7],
        _ => [0x1F, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1F], // unknown box
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 0.01 && v.abs() < 10_000.0 {
        format!("{v:.3}")
    } else {
        format!("{v:.1e}")
    }
}

/// Grouped bar chart. `groups` are x-axis labels (e.g. horizons); each
/// series has one value per group. `log_y` plots log10 of the values.
pub struct BarChart<'a> {
    pub title: &'a str,
    pub groups: Vec<String>,
    pub series: Vec<(String, Vec<f64>)>,
    pub log_y: bool,
}

impl BarChart<'_> {
    pub fn render(&self, path: &Path) -> Result<()> {
        let w = 640;
        let h = 420;
        let mut canvas = Canvas::new(w, h);
        let (x0, y0, x1, y1) = (60i64, 40i64, w as i64 - 20, h as i64 - 50);

        let tx = |v: f64| -> f64 {
            if self.log_y {
                v.max(1e-12).log10()
            } else {
                v
            }
        };
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (_, vals) in &self.series {
            for v in vals {
                lo = lo.min(tx(*v));
                hi = hi.max(tx(*v));
            }
        }
        if !self.log_y {
            lo = lo.min(0.0);
        }
        if (hi - lo).abs() < 1e-12 {
            hi = lo + 1.0;
        }
        let pad = (hi - lo) * 0.08;
        let (lo, hi) = (lo - pad, hi + pad);
        let to_y = |v: f64| -> i64 { y1 - ((tx(v) - lo) / (hi - lo) * (y1 - y0) as f64) as i64 };

        canvas.text(x0, 14, self.title, AXIS);
        canvas.line(x0, y0, x0, y1, AXIS);
        canvas.line(x0, y1, x1, y1, AXIS);
        // y ticks
        for i in 0..=4 {
            let v = lo + (hi - lo) * i as f64 / 4.0;
            let y = y1 - ((v - lo) / (hi - lo) * (y1 - y0) as f64) as i64;
            canvas.line(x0 - 3, y, x0, y, AXIS);
            let label = if self.log_y { format!("1e{v:.1}") } else { fmt_tick(v) };
            canvas.text(2, y - 3, &label, AXIS);
        }

        let n_groups = self.groups.len().max(1);
        let n_series = self.series.len().max(1);
        let group_w = (x1 - x0) / n_groups as i64;
        let bar_w = ((group_w - 10) / n_series as i64).max(2);
        for (gi, glabel) in self.groups.iter().enumerate() {
            let gx = x0 + gi as i64 * group_w;
            canvas.text(gx + group_w / 2 - 6, y1 + 8, glabel, AXIS);
            for (si, (_, vals)) in self.series.iter().enumerate() {
                if let Some(v) = vals.get(gi) {
                    let bx = gx + 5 + si as i64 * bar_w;
                    let by = to_y(*v);
                    let color = SERIES_COLORS[si % SERIES_COLORS.len()];
                    canvas.fill_rect(bx, by.min(y1 - 1), bx + bar_w - 2, y1 - 1, color);
                }
            }
        }
        // legend
        let mut lx = x0 + 4;
        for (si, (name, _)) in self.series.iter().enumerate() {
            let color = SERIES_COLORS[si % SERIES_COLORS.len()];
            canvas.fill_rect(lx, 26, lx + 8, 34, color);
            canvas.text(lx + 12, 27, name, AXIS);
            lx += 12 + 6 * name.len() as i64 + 14;
        }
        canvas.save(path)
    }
}

/// Simple multi-series line chart over a shared x grid.
pub struct LineChart<'a> {
    pub title: &'a str,
    pub xs: Vec<f64>,
    pub series: Vec<(String, Vec<f64>)>,
}

impl LineChart<'_> {
    pub fn render(&self, path: &Path) -> Result<()> {
        let w = 640;
        let h = 420;
        let mut canvas = Canvas::new(w, h);
        let (x0, y0, x1, y1) = (60i64, 40i64, w as i64 - 20, h as i64 - 40);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (_, vals) in &self.series {
            for v in vals {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
        }
        if (hi - lo).abs() < 1e-12 {
            hi = lo + 1.0;
        }
        let xlo = self.xs.first().cloned().unwrap_or(0.0);
        let xhi = self.xs.last().cloned().unwrap_or(1.0);
        let to_xy = |x: f64, v: f64| -> (i64, i64) {
            (
                x0 + ((x - xlo) / (xhi - xlo).max(1e-12) * (x1 - x0) as f64) as i64,
                y1 - ((v - lo) / (hi - lo) * (y1 - y0) as f64) as i64,
            )
        };
        canvas.text(x0, 14, self.title, AXIS);
        canvas.line(x0, y0, x0, y1, AXIS);
        canvas.line(x0, y1, x1, y1, AXIS);
        for i in 0..=4 {
            let v = lo + (hi - lo) * i as f64 / 4.0;
            let (_, y) = to_xy(xlo, v);
            canvas.line(x0 - 3, y, x0, y, AXIS);
            canvas.text(2, y - 3, &fmt_tick(v), AXIS);
        }
        for (si, (name, vals)) in self.series.iter().enumerate() {
            let color = SERIES_COLORS[si % SERIES_COLORS.len()];
            for win in vals.windows(2).enumerate() {
                let (i, pair) = win;
                let (ax, ay) = to_xy(self.xs[i], pair[0]);
                let (bx, by) = to_xy(self.xs[i + 1], pair[1]);
                canvas.line(ax, ay, bx, by, color);
            }
            canvas.fill_rect(x0 + 4 + si as i64 * 120, 26, x0 + 12 + si as i64 * 120, 34, color);
            canvas.text(x0 + 16 + si as i64 * 120, 27, name, AXIS);
        }
        canvas.save(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_render_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let chart = BarChart {
            title: "LP-MSE BY HORIZON",
            groups: vec!["1".into(), "2".into(), "4".into(), "8".into()],
            series: vec![
                ("ours".into(), vec![1e-5, 2e-5, 4e-5, 9e-5]),
                ("pixels".into(), vec![4e-4, 5e-4, 6e-4, 8e-4]),
            ],
            log_y: true,
        };
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        chart.render(&a).unwrap();
        chart.render(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

        let line = LineChart {
            title: "LOSS",
            xs: (0..50).map(|i| i as f64).collect(),
            series: vec![("train".into(), (0..50).map(|i| 1.0 / (1.0 + i as f64)).collect())],
        };
        line.render(&dir.path().join("c.png")).unwrap();
    }
}
