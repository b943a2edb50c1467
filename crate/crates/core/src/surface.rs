//! Class-1 probability evaluated on a regular 2-d grid.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::reticulum::Reticulum;

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    /// Number of grid points along each axis.
    pub resolution: (usize, usize),
    /// Row-major: one row per `x2` value, `x1` varying fastest.
    pub values: Vec<f64>,
}

fn axis(range: (f64, f64), n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (range.0 + range.1)];
    }
    (0..n)
        .map(|i| range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64)
        .collect()
}

impl SurfaceGrid {
    pub fn evaluate(tree: &Reticulum, x_range: (f64, f64), y_range: (f64, f64), resolution: (usize, usize)) -> Result<Self> {
        if tree.dim() != 2 {
            return Err(Error::Dimension {
                expected: 2,
                got: tree.dim(),
            });
        }
        for (lo, hi) in [x_range, y_range] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Domain(format!("invalid axis range {lo}..{hi}")));
            }
        }
        if resolution.0 == 0 || resolution.1 == 0 {
            return Err(Error::Domain("resolution must be at least 1 along each axis".into()));
        }
        let (xs, ys) = (axis(x_range, resolution.0), axis(y_range, resolution.1));
        let mut points = Vec::with_capacity(2 * xs.len() * ys.len());
        for &y in &ys {
            for &x in &xs {
                points.extend([x, y]);
            }
        }
        Ok(Self {
            x_range,
            y_range,
            resolution,
            values: tree.predict_many(&points)?,
        })
    }

    pub fn x_axis(&self) -> Vec<f64> {
        axis(self.x_range, self.resolution.0)
    }

    pub fn y_axis(&self) -> Vec<f64> {
        axis(self.y_range, self.resolution.1)
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.resolution.0 + ix]
    }

    /// `x1,x2,p` rows in grid order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x1,x2,p\n");
        let xs = self.x_axis();
        for (iy, y) in self.y_axis().into_iter().enumerate() {
            for (ix, x) in xs.iter().enumerate() {
                let _ = writeln!(out, "{x:?},{y:?},{:?}", self.get(ix, iy));
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}
