use std::io::Write;
use std::path::{Path, PathBuf};

use kobalab::Real;

use crate::CliError;

/// Writes `bytes` to `dir/name` through a temporary file in `dir` and a rename.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    let io = |e: std::io::Error| CliError::Io(path.display().to_string(), e.to_string());
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(&path).map_err(|e| io(e.error))?;
    Ok(path)
}

/// Plot geometry shared by the renderer and anyone recomputing coordinates.
pub const SVG_WIDTH: f64 = 640.0;
pub const SVG_HEIGHT: f64 = 420.0;
pub const SVG_MARGIN: f64 = 60.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Frame {
    /// Data range padded by a tenth on each side (at least 1 decade wide).
    pub fn fit(xs: &[f64], ys: &[f64]) -> Frame {
        let span = |v: &[f64]| {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let pad = ((hi - lo) * 0.1).max(0.5);
            (lo - pad, hi + pad)
        };
        let (x_min, x_max) = span(xs);
        let (y_min, y_max) = span(ys);
        Frame { x_min, x_max, y_min, y_max }
    }

    /// Pixel position of `(log10 x, log10 y)`.
    pub fn map(&self, lx: f64, ly: f64) -> (f64, f64) {
        let w = SVG_WIDTH - 2.0 * SVG_MARGIN;
        let h = SVG_HEIGHT - 2.0 * SVG_MARGIN;
        let px = SVG_MARGIN + (lx - self.x_min) / (self.x_max - self.x_min) * w;
        let py = SVG_HEIGHT - SVG_MARGIN - (ly - self.y_min) / (self.y_max - self.y_min) * h;
        (px, py)
    }
}

pub fn log10<T: Real>(x: &T) -> f64 {
    x.ln_abs_f64() / std::f64::consts::LN_10
}

/// A log-log chart of the certified bound and the linear baseline against
/// `δ_n`. Every marker carries its data coordinates.
pub fn decay_svg(points: &[(f64, f64, f64)]) -> String {
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().flat_map(|p| [p.1, p.2]).collect();
    let frame = Frame::fit(&xs, &ys);
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_WIDTH}\" height=\"{SVG_HEIGHT}\" \
         data-x-min=\"{:.6}\" data-x-max=\"{:.6}\" data-y-min=\"{:.6}\" data-y-max=\"{:.6}\">\n",
        frame.x_min, frame.x_max, frame.y_min, frame.y_max
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let (x0, y0) = frame.map(frame.x_min, frame.y_min);
    let (x1, y1) = frame.map(frame.x_max, frame.y_max);
    s.push_str(&format!(
        "<path d=\"M{x0:.3} {y1:.3} L{x0:.3} {y0:.3} L{x1:.3} {y0:.3}\" stroke=\"black\" fill=\"none\"/>\n"
    ));
    s.push_str(&format!(
        "<text x=\"{:.3}\" y=\"{:.3}\" text-anchor=\"middle\" font-size=\"13\">log10 delta_n</text>\n",
        (x0 + x1) / 2.0,
        SVG_HEIGHT - 20.0
    ));
    s.push_str(&format!(
        "<text x=\"18\" y=\"{:.3}\" font-size=\"13\" transform=\"rotate(-90 18 {:.3})\" text-anchor=\"middle\">log10 F_K upper bound</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    ));
    for (series, idx, color) in [("upper_bound", 1, "#c0392b"), ("baseline_bound", 2, "#2c3e50")] {
        let pts: Vec<(f64, f64)> = points
            .iter()
            .map(|p| frame.map(p.0, if idx == 1 { p.1 } else { p.2 }))
            .collect();
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.3},{y:.3}")).collect();
        s.push_str(&format!(
            "<polyline data-series=\"{series}\" points=\"{}\" stroke=\"{color}\" fill=\"none\"/>\n",
            path.join(" ")
        ));
        for (p, (x, y)) in points.iter().zip(&pts) {
            let ly = if idx == 1 { p.1 } else { p.2 };
            s.push_str(&format!(
                "<circle data-series=\"{series}\" data-log-x=\"{:.6}\" data-log-y=\"{ly:.6}\" cx=\"{x:.3}\" cy=\"{y:.3}\" r=\"3\" fill=\"{color}\"/>\n",
                p.0
            ));
        }
    }
    s.push_str(&format!(
        "<text x=\"{:.3}\" y=\"{:.3}\" font-size=\"12\" fill=\"#c0392b\">1/(a_n delta_n)</text>\n",
        x1 - 140.0,
        SVG_MARGIN
    ));
    s.push_str(&format!(
        "<text x=\"{:.3}\" y=\"{:.3}\" font-size=\"12\" fill=\"#2c3e50\">1/delta_n</text>\n",
        x1 - 140.0,
        SVG_MARGIN + 16.0
    ));
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_maps_corners() {
        let f = Frame {
            x_min: -10.0,
            x_max: 0.0,
            y_min: 0.0,
            y_max: 5.0,
        };
        assert_eq!(f.map(-10.0, 0.0), (SVG_MARGIN, SVG_HEIGHT - SVG_MARGIN));
        assert_eq!(f.map(0.0, 5.0), (SVG_WIDTH - SVG_MARGIN, SVG_MARGIN));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        write_atomic(dir.path(), "a.txt", b"one").unwrap();
        write_atomic(dir.path(), "a.txt", b"two").unwrap();
        assert_eq!(std::fs::read(dir.path().join("a.txt")).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
