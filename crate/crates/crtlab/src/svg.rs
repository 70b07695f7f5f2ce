//! Standalone SVG scatter and line plots.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 52.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Markers,
    Line,
    /// Markers joined by a line.
    Both,
    Dashed,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

#[derive(Debug, Clone)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_scale: Scale,
    pub y_scale: Scale,
    pub series: Vec<Series>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Axis {
    scale: Scale,
    lo: f64,
    hi: f64,
}

impl Axis {
    fn new(scale: Scale, values: impl Iterator<Item = f64>) -> Self {
        let t = |v: f64| if scale == Scale::Log { v.log10() } else { v };
        let (mut lo, mut hi) = values.map(t).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        } else {
            let pad = 0.05 * (hi - lo);
            lo -= pad;
            hi += pad;
        }
        Axis { scale, lo, hi }
    }

    fn unit(&self, v: f64) -> f64 {
        let v = if self.scale == Scale::Log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    /// Tick values in data units.
    fn ticks(&self) -> Vec<f64> {
        match self.scale {
            Scale::Log => {
                let (a, b) = (self.lo.ceil() as i32, self.hi.floor() as i32);
                if b >= a {
                    (a..=b).map(|e| 10f64.powi(e)).collect()
                } else {
                    vec![10f64.powf((self.lo + self.hi) / 2.0)]
                }
            }
            Scale::Linear => {
                let span = self.hi - self.lo;
                let raw = span / 5.0;
                let mag = 10f64.powf(raw.log10().floor());
                let step = [1.0, 2.0, 5.0, 10.0].into_iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
                let mut t = (self.lo / step).ceil() * step;
                let mut out = Vec::new();
                while t <= self.hi + 1e-9 * step {
                    out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
                    t += step;
                }
                out
            }
        }
    }
}

fn label(v: f64, scale: Scale) -> String {
    if scale == Scale::Log && v > 0.0 {
        let e = v.log10();
        if (e - e.round()).abs() < 1e-9 {
            return format!("1e{}", e.round() as i32);
        }
        return format!("{v:.3e}");
    }
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

impl Plot {
    pub fn new(title: &str, x_label: &str, y_label: &str, x_scale: Scale, y_scale: Scale) -> Self {
        Plot { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), x_scale, y_scale, series: Vec::new() }
    }

    pub fn with(mut self, name: &str, points: Vec<(f64, f64)>, style: Style) -> Self {
        self.series.push(Series { name: name.into(), points, style });
        self
    }

    fn usable(&self, (x, y): (f64, f64)) -> bool {
        x.is_finite() && y.is_finite() && (self.x_scale == Scale::Linear || x > 0.0) && (self.y_scale == Scale::Linear || y > 0.0)
    }

    pub fn render(&self) -> String {
        let pts = || self.series.iter().flat_map(|s| s.points.iter().copied()).filter(|&p| self.usable(p));
        let xa = Axis::new(self.x_scale, pts().map(|p| p.0));
        let ya = Axis::new(self.y_scale, pts().map(|p| p.1));
        let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
        let px = |x: f64| LEFT + xa.unit(x) * pw;
        let py = |y: f64| TOP + (1.0 - ya.unit(y)) * ph;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, esc(&self.title));
        let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        for t in xa.ticks() {
            let x = px(t);
            let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/>"##, TOP + ph);
            let _ = writeln!(
                s,
                r#"<text class="xtick" x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                TOP + ph + 16.0,
                label(t, self.x_scale)
            );
        }
        for t in ya.ticks() {
            let y = py(t);
            let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, LEFT + pw);
            let _ = writeln!(
                s,
                r#"<text class="ytick" x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                LEFT - 6.0,
                y + 4.0,
                label(t, self.y_scale)
            );
        }
        let scale_name = |sc: Scale| if sc == Scale::Log { "log" } else { "linear" };
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" data-scale="{}">{}</text>"#,
            LEFT + pw / 2.0,
            H - 12.0,
            scale_name(self.x_scale),
            esc(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})" data-scale="{}">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            scale_name(self.y_scale),
            esc(&self.y_label)
        );
        for (i, ser) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let mut p: Vec<(f64, f64)> = ser.points.iter().copied().filter(|&q| self.usable(q)).collect();
            let _ = writeln!(s, r#"<g class="series" data-name="{}">"#, esc(&ser.name));
            if matches!(ser.style, Style::Line | Style::Both | Style::Dashed) && p.len() > 1 {
                p.sort_by(|a, b| a.0.total_cmp(&b.0));
                let path: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
                let dash = if ser.style == Style::Dashed { r#" stroke-dasharray="5,4""# } else { "" };
                let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#, path.join(" "));
            }
            if matches!(ser.style, Style::Markers | Style::Both) {
                for &(x, y) in &p {
                    let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(x), py(y));
                }
            }
            let ly = TOP + 14.0 + 16.0 * i as f64;
            let lx = LEFT + pw + 12.0;
            let _ = writeln!(s, r#"<rect x="{lx:.2}" y="{:.2}" width="10" height="10" fill="{color}"/>"#, ly - 9.0);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#, lx + 14.0, esc(&ser.name));
            s.push_str("</g>\n");
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_axes_get_decade_ticks() {
        let svg = Plot::new("t", "FLOPs", "loss", Scale::Log, Scale::Log)
            .with("a & b", vec![(1e9, 2.0), (1e12, 1.0), (-1.0, 3.0)], Style::Both)
            .render();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains(">1e10<") && svg.contains(">1e11<"));
        assert!(svg.contains("a &amp; b"));
        assert_eq!(svg.matches("<circle").count(), 2);
        assert_eq!(svg.matches(r#"data-scale="log""#).count(), 2);
    }

    #[test]
    fn empty_plot_renders() {
        let svg = Plot::new("t", "x", "y", Scale::Linear, Scale::Linear).render();
        assert!(svg.ends_with("</svg>\n"));
    }
}
