//! Proximable regularizers: value, proximal operator and subgradient
//! distance for the handful of nonsmooth terms the benchmarks use.

use crate::error::{Error, Result};

/// Convex regularizer h with a closed-form proximal operator.
#[derive(Debug, Clone, PartialEq)]
pub enum Regularizer {
    /// h = 0; prox is the identity.
    Zero,
    /// h(y) = weight * ||y||_1.
    L1 { weight: f64 },
    /// Indicator of the box [lower, upper]^d; prox is the projection.
    Box { lower: f64, upper: f64 },
    /// h(y) = (weight / 2) * ||y||^2.
    SquaredNorm { weight: f64 },
}

impl Regularizer {
    pub fn l1(weight: f64) -> Result<Self> {
        if weight < 0.0 {
            return Err(Error::InvalidArgument("l1 weight must be >= 0".into()));
        }
        Ok(Regularizer::L1 { weight })
    }

    /// h(y); +inf outside the domain of an indicator.
    pub fn value(&self, y: &[f64]) -> f64 {
        match self {
            Regularizer::Zero => 0.0,
            Regularizer::L1 { weight } => weight * y.iter().map(|v| v.abs()).sum::<f64>(),
            Regularizer::Box { lower, upper } => {
                if y.iter().all(|v| *v >= *lower - 1e-12 && *v <= *upper + 1e-12) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Regularizer::SquaredNorm { weight } => {
                0.5 * weight * y.iter().map(|v| v * v).sum::<f64>()
            }
        }
    }

    /// argmin_u h(u) + (scale / 2) ||u - anchor||^2 for scale > 0.
    pub fn prox(&self, scale: f64, anchor: &[f64]) -> Result<Vec<f64>> {
        if scale <= 0.0 {
            return Err(Error::InvalidArgument(
                "prox metric scale must be positive".into(),
            ));
        }
        Ok(match self {
            Regularizer::Zero => anchor.to_vec(),
            Regularizer::L1 { weight } => {
                let t = weight / scale;
                anchor.iter().map(|&z| soft_threshold(z, t)).collect()
            }
            Regularizer::Box { lower, upper } => {
                anchor.iter().map(|&z| z.clamp(*lower, *upper)).collect()
            }
            Regularizer::SquaredNorm { weight } => {
                let shrink = scale / (scale + weight);
                anchor.iter().map(|&z| shrink * z).collect()
            }
        })
    }

    /// Euclidean distance from `w` to the subdifferential of h at `y`,
    /// `min_{g in dh(y)} ||w - g||`. `None` when no routine exists.
    pub fn subgrad_distance(&self, w: &[f64], y: &[f64]) -> Option<f64> {
        debug_assert_eq!(w.len(), y.len());
        let sq = match self {
            Regularizer::Zero => w.iter().map(|v| v * v).sum::<f64>(),
            Regularizer::L1 { weight } => w
                .iter()
                .zip(y)
                .map(|(&wi, &yi)| l1_coordinate_distance(wi, yi, *weight).powi(2))
                .sum(),
            Regularizer::Box { lower, upper } => {
                // normal cone of the box, coordinatewise
                w.iter()
                    .zip(y)
                    .map(|(&wi, &yi)| {
                        let at_lower = (yi - lower).abs() <= 1e-12;
                        let at_upper = (yi - upper).abs() <= 1e-12;
                        let d = if at_lower && at_upper {
                            0.0
                        } else if at_lower {
                            wi.max(0.0) // cone is (-inf, 0]
                        } else if at_upper {
                            (-wi).max(0.0) // cone is [0, inf)
                        } else {
                            wi.abs()
                        };
                        d * d
                    })
                    .sum()
            }
            Regularizer::SquaredNorm { weight } => w
                .iter()
                .zip(y)
                .map(|(&wi, &yi)| {
                    let d = wi - weight * yi;
                    d * d
                })
                .sum(),
        };
        Some(sq.sqrt())
    }

    pub fn supports_subgrad_distance(&self) -> bool {
        true
    }
}

pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Distance from w to the subdifferential of tau * |.| at y, one coordinate:
/// {tau sign(y)} away from the origin, the interval [-tau, tau] at zero.
pub fn l1_coordinate_distance(w: f64, y: f64, tau: f64) -> f64 {
    if y != 0.0 {
        (w - tau * y.signum()).abs()
    } else {
        (w.abs() - tau).max(0.0)
    }
}
