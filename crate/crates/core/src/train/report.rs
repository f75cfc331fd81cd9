//! Minimal SVG line chart of the training loss.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::io::write_atomic;

use super::trainer::EpochMetrics;

const W: f64 = 640.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;

pub fn loss_svg(rows: &[EpochMetrics]) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.train_loss.is_finite())
        .map(|r| (r.epoch as f64, r.train_loss))
        .collect();
    if let (Some(first), Some(last)) = (pts.first(), pts.last()) {
        let (x0, x1) = (first.0, last.0.max(first.0 + 1.0));
        let y1 = pts.iter().map(|p| p.1).fold(f64::MIN, f64::max).max(1e-12);
        let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
        let sy = |y: f64| H - MARGIN - y / y1 * (H - 2.0 * MARGIN);
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"{}\"/>",
            path.join(" ")
        )
        .unwrap();
        writeln!(
            s,
            "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
             <line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>",
            m = MARGIN,
            b = H - MARGIN,
            r = W - MARGIN
        )
        .unwrap();
        writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\">epoch {x0}..{x1}</text>\n\
             <text x=\"4\" y=\"{}\" font-size=\"12\">{y1:.3}</text>\n\
             <text x=\"{}\" y=\"20\" font-size=\"14\">train loss</text>",
            W / 2.0 - 40.0,
            H - 12.0,
            MARGIN,
            W / 2.0 - 30.0
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_loss_svg(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    write_atomic(path, loss_svg(rows).as_bytes())
}
