//! Pointer input and the three-point calibration from sensor space onto the
//! grid.
//!
//! Sensor `(x, y)` goes through a 2x3 affine map into continuous grid
//! coordinates where cell `(c, r)` covers `[c, c+1) x [r, r+1)`, so its
//! center sits at `(c + 0.5, r + 0.5)`. Depth `z` only drives opacity.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Cell, GridDims, Opacity};

/// Smallest sensor-space triangle area accepted for calibration.
pub const MIN_TRIANGLE_AREA: f64 = 1e-6;
/// Default depth range, in sensor units, spread over the four opacity bands.
pub const DEFAULT_Z_SPAN: f64 = 200.0;

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("calibration points are collinear or repeated (area {area:e}); point at the corners again")]
    Degenerate { area: f64 },
    #[error("z span must be positive and finite, got {0}")]
    InvalidSpan(f64),
    #[error("malformed calibration file: {0}")]
    Parse(String),
}

/// One raw pointer reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointerSample {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub t_ms: u64,
}

impl PointerSample {
    pub fn new(x: f64, y: f64, z: f64, t_ms: u64) -> Self {
        Self { x, y, z, t_ms }
    }
}

/// Sensor-to-grid mapping plus the depth reference used for opacity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Row-major `[[a, b, tx], [c, d, ty]]`: `u = a x + b y + tx`, `v = c x + d y + ty`.
    pub affine: [[f64; 3]; 2],
    pub z_ref: f64,
    pub z_span: f64,
    /// When true, larger `z` is "behind" and gives higher opacity.
    pub behind_positive: bool,
}

/// Center of `cell` in continuous grid coordinates.
pub fn cell_center(cell: Cell) -> (f64, f64) {
    (cell.col as f64 + 0.5, cell.row as f64 + 0.5)
}

/// Signed area of the sensor triangle.
fn triangle_area(p: [(f64, f64); 3]) -> f64 {
    0.5 * ((p[1].0 - p[0].0) * (p[2].1 - p[0].1) - (p[2].0 - p[0].0) * (p[1].1 - p[0].1))
}

/// Solves the affine map that sends each sample's `(x, y)` to the center of
/// its cell. `z_ref` becomes the mean depth of the three samples.
pub fn calibrate(
    pairs: &[(PointerSample, Cell); 3],
    z_span: f64,
    behind_positive: bool,
) -> Result<Calibration, CalibrationError> {
    if !(z_span.is_finite() && z_span > 0.0) {
        return Err(CalibrationError::InvalidSpan(z_span));
    }
    let src = pairs.map(|(s, _)| (s.x, s.y));
    let dst = pairs.map(|(_, c)| cell_center(c));
    let area = triangle_area(src);
    if area.is_nan() || area.abs() <= MIN_TRIANGLE_AREA {
        return Err(CalibrationError::Degenerate { area: area.abs() });
    }

    // Edge vectors from the first point; the linear part L satisfies
    // L * [e1 e2] = [f1 f2].
    let (e1, e2) = (
        (src[1].0 - src[0].0, src[1].1 - src[0].1),
        (src[2].0 - src[0].0, src[2].1 - src[0].1),
    );
    let (f1, f2) = (
        (dst[1].0 - dst[0].0, dst[1].1 - dst[0].1),
        (dst[2].0 - dst[0].0, dst[2].1 - dst[0].1),
    );
    let det = e1.0 * e2.1 - e2.0 * e1.1;
    // inverse of [[e1.0, e2.0], [e1.1, e2.1]]
    let inv = [[e2.1 / det, -e2.0 / det], [-e1.1 / det, e1.0 / det]];
    let row = |g1: f64, g2: f64| {
        let a = g1 * inv[0][0] + g2 * inv[1][0];
        let b = g1 * inv[0][1] + g2 * inv[1][1];
        [a, b]
    };
    let [a, b] = row(f1.0, f2.0);
    let [c, d] = row(f1.1, f2.1);
    let tx = dst[0].0 - (a * src[0].0 + b * src[0].1);
    let ty = dst[0].1 - (c * src[0].0 + d * src[0].1);

    let z_ref = pairs.iter().map(|(s, _)| s.z).sum::<f64>() / 3.0;
    Ok(Calibration {
        affine: [[a, b, tx], [c, d, ty]],
        z_ref,
        z_span,
        behind_positive,
    })
}

impl Calibration {
    /// Maps sensor `(x, y)` to continuous grid coordinates.
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let [[a, b, tx], [c, d, ty]] = self.affine;
        (a * x + b * y + tx, c * x + d * y + ty)
    }

    /// Cell under the pointer, clamped onto the grid.
    pub fn to_cell(&self, sample: &PointerSample, dims: GridDims) -> Cell {
        let (u, v) = self.apply(sample.x, sample.y);
        let clamp = |value: f64, len: usize| {
            if value.is_nan() {
                0
            } else {
                value.floor().clamp(0.0, (len - 1) as f64) as usize
            }
        };
        Cell::new(clamp(u, dims.width()), clamp(v, dims.height()))
    }

    /// Quantizes depth into four equal bands over
    /// `[z_ref − z_span/2, z_ref + z_span/2]`, clamped at both ends.
    pub fn z_to_opacity(&self, z: f64) -> Opacity {
        let mut depth = z - self.z_ref;
        if !self.behind_positive {
            depth = -depth;
        }
        let position = (depth + self.z_span / 2.0) / self.z_span;
        let band = (position * 4.0).floor().clamp(0.0, 3.0);
        let band = if band.is_nan() { 0 } else { band as u8 };
        Opacity::new(band + 1).expect("band is within 1..=4")
    }

    /// Plain-text form: `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let [[a, b, tx], [c, d, ty]] = self.affine;
        writeln!(out, "affine = {a} {b} {tx} {c} {d} {ty}").unwrap();
        writeln!(out, "z_ref = {}", self.z_ref).unwrap();
        writeln!(out, "z_span = {}", self.z_span).unwrap();
        writeln!(out, "behind_positive = {}", self.behind_positive).unwrap();
        out
    }
}

impl FromStr for Calibration {
    type Err = CalibrationError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let bad = |m: String| CalibrationError::Parse(m);
        let (mut affine, mut z_ref, mut z_span, mut sign) = (None, None, None, None);
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key = value, got {line:?}")))?;
            let value = value.trim();
            let float = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("bad number {v:?}")));
            match key.trim() {
                "affine" => {
                    let nums = value.split_whitespace().map(float).collect::<Result<Vec<_>, _>>()?;
                    let coeffs: [f64; 6] = nums
                        .try_into()
                        .map_err(|_| bad("affine needs 6 coefficients".into()))?;
                    affine = Some([[coeffs[0], coeffs[1], coeffs[2]], [coeffs[3], coeffs[4], coeffs[5]]]);
                }
                "z_ref" => z_ref = Some(float(value)?),
                "z_span" => z_span = Some(float(value)?),
                "behind_positive" => {
                    sign = Some(value.parse::<bool>().map_err(|_| bad(format!("bad flag {value:?}")))?)
                }
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        let affine = affine.ok_or_else(|| bad("missing affine".into()))?;
        let z_span = z_span.ok_or_else(|| bad("missing z_span".into()))?;
        if !(z_span.is_finite() && z_span > 0.0) {
            return Err(CalibrationError::InvalidSpan(z_span));
        }
        let [[a, b, _], [c, d, _]] = affine;
        if (a * d - b * c).abs() < f64::EPSILON {
            return Err(bad("affine linear part is singular".into()));
        }
        Ok(Calibration {
            affine,
            z_ref: z_ref.ok_or_else(|| bad("missing z_ref".into()))?,
            z_span,
            behind_positive: sign.unwrap_or(true),
        })
    }
}
