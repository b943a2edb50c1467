//! Polar view of a hyperplane: offset `q`, stiffness `r` and the spherical
//! angles of its unit normal.
//!
//! ```text
//! w₀ = r q
//! w₁ = r cos φ₁
//! w₂ = r sin φ₁ cos φ₂
//! …
//! w_d = r sin φ₁ ⋯ sin φ_{d−1}
//! ```
//!
//! Angles φ₁ … φ_{d−2} live in [0, π] and φ_{d−1} in [0, 2π). Where the
//! decomposition is not unique (a trailing block of the normal is zero) the
//! undetermined angles are set to 0. In one dimension there are no angles and
//! the normal is `±r`, recorded by `reversed`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reticulum::NodeWeights;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarWeights {
    /// Signed offset; `−q` is the hyperplane's distance from the origin along its normal.
    pub q: f64,
    /// Stiffness, the norm of the normal vector.
    pub r: f64,
    pub phi: Vec<f64>,
    /// Only meaningful for d = 1: the normal points towards −x.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub reversed: bool,
}

impl PolarWeights {
    pub fn new(q: f64, r: f64, phi: Vec<f64>) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) || !q.is_finite() || phi.iter().any(|a| !a.is_finite()) {
            return Err(Error::Domain("polar weights need finite values and r > 0".into()));
        }
        Ok(Self {
            q,
            r,
            phi,
            reversed: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.phi.len() + 1
    }

    /// Parameters in optimization order: `(q, r, φ₁, …, φ_{d−1})`.
    pub fn to_params(&self) -> Vec<f64> {
        let mut v = vec![self.q, self.r];
        v.extend_from_slice(&self.phi);
        v
    }

    pub fn from_params(params: &[f64], reversed: bool) -> Self {
        Self {
            q: params[0],
            r: params[1],
            phi: params[2..].to_vec(),
            reversed,
        }
    }

    /// Unit normal `u` with `w_k = r u_k`.
    pub fn direction(&self) -> Vec<f64> {
        if self.phi.is_empty() {
            return vec![if self.reversed { -1.0 } else { 1.0 }];
        }
        let d = self.dim();
        let mut u = Vec::with_capacity(d);
        let mut sines = 1.0;
        for &a in &self.phi {
            u.push(sines * a.cos());
            sines *= a.sin();
        }
        u.push(sines);
        u
    }

    /// `∂u_k/∂φ_i` as `[i][k]`.
    fn direction_jacobian(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let angles = &self.phi;
        (0..angles.len())
            .map(|i| {
                (0..d)
                    .map(|k| {
                        // u_k = Π_{j<k} sin φ_j · (cos φ_k if k < d−1)
                        if i > k || (i == k && k == d - 1) {
                            return 0.0;
                        }
                        let mut prod = 1.0;
                        for (j, &a) in angles.iter().enumerate().take(k.min(d - 1)) {
                            prod *= if j == i { a.cos() } else { a.sin() };
                        }
                        if k < d - 1 {
                            prod *= if i == k { -angles[k].sin() } else { angles[k].cos() };
                        }
                        prod
                    })
                    .collect()
            })
            .collect()
    }
}

/// Cartesian weights for a polar description.
pub fn to_cartesian(p: &PolarWeights) -> NodeWeights {
    NodeWeights {
        intercept: p.r * p.q,
        normal: p.direction().into_iter().map(|u| p.r * u).collect(),
    }
}

/// Polar description of a hyperplane with a non-zero normal.
pub fn to_polar(w: &NodeWeights) -> Result<PolarWeights> {
    let d = w.dim();
    let r = w.normal.iter().fold(0.0f64, |acc, v| acc.hypot(*v));
    if r == 0.0 || !r.is_finite() {
        return Err(Error::DegenerateHyperplane);
    }
    let q = w.intercept / r;
    if d == 1 {
        return Ok(PolarWeights {
            q,
            r,
            phi: Vec::new(),
            reversed: w.normal[0] < 0.0,
        });
    }
    let u: Vec<f64> = w.normal.iter().map(|v| v / r).collect();
    // tail[i] = ‖(u_{i+1}, …, u_d)‖ for the remaining block after position i
    let mut tail = vec![0.0f64; d];
    for i in (0..d - 1).rev() {
        tail[i] = tail[i + 1].hypot(u[i + 1]);
    }
    let mut phi = Vec::with_capacity(d - 1);
    for i in 0..d - 1 {
        let angle = if u[i] == 0.0 && tail[i] == 0.0 {
            0.0
        } else if i == d - 2 {
            u[d - 1].atan2(u[d - 2]).rem_euclid(2.0 * PI)
        } else {
            tail[i].atan2(u[i])
        };
        phi.push(angle);
    }
    Ok(PolarWeights {
        q,
        r,
        phi,
        reversed: false,
    })
}

/// `Jᵀ g`: the gradient with respect to `(q, r, φ₁, …)` given the gradient
/// with respect to `(w₀, w₁, …, w_d)`.
pub fn pullback_gradient(p: &PolarWeights, cartesian: &[f64]) -> Result<Vec<f64>> {
    let d = p.dim();
    if cartesian.len() != d + 1 {
        return Err(Error::Dimension {
            expected: d + 1,
            got: cartesian.len(),
        });
    }
    let (g0, gw) = (cartesian[0], &cartesian[1..]);
    let u = p.direction();
    let mut out = Vec::with_capacity(d + 1);
    out.push(p.r * g0);
    out.push(p.q * g0 + u.iter().zip(gw).map(|(a, b)| a * b).sum::<f64>());
    for row in p.direction_jacobian() {
        out.push(p.r * row.iter().zip(gw).map(|(a, b)| a * b).sum::<f64>());
    }
    Ok(out)
}
