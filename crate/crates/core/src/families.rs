//! Named coefficient/data families.
//!
//! Configs describe the weights `α`, `β` and the datum `h` by a family name
//! plus parameters; the solver only ever sees sampled values. All families
//! are evaluated on the symmetric domain `(−L, L)`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A closed-form scalar function on `[−L, L]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilySpec {
    /// `f(x) = value`.
    Constant {
        /// Constant value.
        value: f64,
    },
    /// `f(x) = intercept + slope·x`.
    Linear {
        /// Value at x = 0.
        intercept: f64,
        /// Slope.
        slope: f64,
    },
    /// `f(x) = |x|`.
    Abs,
    /// `f(x) = offset + amplitude·cos(kπx/L)`; `k = 1, L = 1` gives `cos(πx)`.
    Cosine {
        /// Half-period count over the half-domain.
        k: u32,
        /// Amplitude of the oscillation.
        amplitude: f64,
        /// Constant shift.
        offset: f64,
    },
    /// Triangular bump of the given full base `width` centered at `center`,
    /// peak value `height`, zero outside the base.
    Hat {
        /// Peak location.
        center: f64,
        /// Full width of the support.
        width: f64,
        /// Peak value.
        height: f64,
    },
    /// Piecewise-linear interpolation of `(x, y)` breakpoints; the
    /// breakpoints must be strictly increasing in `x` and cover `[−L, L]`.
    PiecewiseLinear {
        /// Interpolation points, strictly increasing in x.
        points: Vec<(f64, f64)>,
    },
}

impl FamilySpec {
    /// Checks that the parameters are finite and the family is well formed
    /// on `(−half_width, half_width)`.
    pub fn validate(&self, half_width: f64) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match self {
            FamilySpec::Constant { value } => {
                if !value.is_finite() {
                    return bad("constant family: value must be finite".into());
                }
            }
            FamilySpec::Linear { intercept, slope } => {
                if !intercept.is_finite() || !slope.is_finite() {
                    return bad("linear family: parameters must be finite".into());
                }
            }
            FamilySpec::Abs => {}
            FamilySpec::Cosine {
                k,
                amplitude,
                offset,
            } => {
                if *k == 0 {
                    return bad("cosine family: k must be >= 1".into());
                }
                if !amplitude.is_finite() || !offset.is_finite() {
                    return bad("cosine family: parameters must be finite".into());
                }
            }
            FamilySpec::Hat {
                center,
                width,
                height,
            } => {
                if !center.is_finite() || !width.is_finite() || !height.is_finite() {
                    return bad("hat family: parameters must be finite".into());
                }
                if *width <= 0.0 {
                    return bad(format!("hat family: width must be positive, got {width}"));
                }
            }
            FamilySpec::PiecewiseLinear { points } => {
                if points.len() < 2 {
                    return bad("piecewise_linear family: need at least two points".into());
                }
                for (x, y) in points {
                    if !x.is_finite() || !y.is_finite() {
                        return bad("piecewise_linear family: points must be finite".into());
                    }
                }
                for pair in points.windows(2) {
                    if pair[1].0 <= pair[0].0 {
                        return bad(
                            "piecewise_linear family: x-coordinates must be strictly increasing"
                                .into(),
                        );
                    }
                }
                let (first, last) = (points[0].0, points[points.len() - 1].0);
                if first > -half_width || last < half_width {
                    return bad(format!(
                        "piecewise_linear family: points span [{first}, {last}] but must cover \
                         [-{half_width}, {half_width}]"
                    ));
                }
            }
        }
        Ok(())
    }

    /// Evaluates the family at `x`.
    pub fn eval(&self, x: f64, half_width: f64) -> f64 {
        match self {
            FamilySpec::Constant { value } => *value,
            FamilySpec::Linear { intercept, slope } => intercept + slope * x,
            FamilySpec::Abs => x.abs(),
            FamilySpec::Cosine {
                k,
                amplitude,
                offset,
            } => offset + amplitude * (f64::from(*k) * std::f64::consts::PI * x / half_width).cos(),
            FamilySpec::Hat {
                center,
                width,
                height,
            } => height * (1.0 - 2.0 * (x - center).abs() / width).max(0.0),
            FamilySpec::PiecewiseLinear { points } => {
                // Clamp to the end values outside the covered range (validate
                // guarantees the range covers the domain).
                if x <= points[0].0 {
                    return points[0].1;
                }
                if x >= points[points.len() - 1].0 {
                    return points[points.len() - 1].1;
                }
                let k = points.partition_point(|(px, _)| *px <= x) - 1;
                let (x0, y0) = points[k];
                let (x1, y1) = points[k + 1];
                y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            }
        }
    }

    /// Locations in `(−half_width, half_width)` where the derivative jumps:
    /// the origin for the abs family, the corners of a hat, the interior
    /// breakpoints of a piecewise-linear family. Smooth families return an
    /// empty list.
    pub fn kinks(&self, half_width: f64) -> Vec<f64> {
        let inside = |x: f64| x > -half_width && x < half_width;
        match self {
            FamilySpec::Constant { .. }
            | FamilySpec::Linear { .. }
            | FamilySpec::Cosine { .. } => Vec::new(),
            FamilySpec::Abs => vec![0.0],
            FamilySpec::Hat { center, width, .. } => {
                [center - width / 2.0, *center, center + width / 2.0]
                    .into_iter()
                    .filter(|x| inside(*x))
                    .collect()
            }
            FamilySpec::PiecewiseLinear { points } => points[1..points.len() - 1]
                .iter()
                .map(|(x, _)| *x)
                .filter(|x| inside(*x))
                .collect(),
        }
    }

    /// Evaluates the spatial derivative at `x`; at kinks (|x| of the abs
    /// family, hat corners, piecewise-linear breakpoints) the right-hand
    /// slope is returned.
    pub fn derivative(&self, x: f64, half_width: f64) -> f64 {
        match self {
            FamilySpec::Constant { .. } => 0.0,
            FamilySpec::Linear { slope, .. } => *slope,
            FamilySpec::Abs => {
                if x >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
            FamilySpec::Cosine { k, amplitude, .. } => {
                let freq = f64::from(*k) * std::f64::consts::PI / half_width;
                -amplitude * freq * (freq * x).sin()
            }
            FamilySpec::Hat {
                center,
                width,
                height,
            } => {
                let d = x - center;
                if d.abs() >= width / 2.0 {
                    0.0
                } else if d >= 0.0 {
                    -2.0 * height / width
                } else {
                    2.0 * height / width
                }
            }
            FamilySpec::PiecewiseLinear { points } => {
                if x < points[0].0 || x >= points[points.len() - 1].0 {
                    return 0.0;
                }
                let k = points.partition_point(|(px, _)| *px <= x) - 1;
                let (x0, y0) = points[k];
                let (x1, y1) = points[k + 1];
                (y1 - y0) / (x1 - x0)
            }
        }
    }
}
