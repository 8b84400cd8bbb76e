//! Break-point functions.
//!
//! A break-point function centred at `tau` is a continuous two-piece linear
//! function of time that equals 1 at `tau`, sums to zero over the observation
//! grid and has zero first moment in time over the grid. Adding it to a
//! regression with an intercept and a global slope therefore bends the trend
//! at `tau` without changing the meaning of the intercept or the slope.
//!
//! The four coefficients are the solution of a 4x4 linear system. The system
//! is solved in centred and scaled time so that calendar years (t ~ 2000) do
//! not wreck its conditioning; coefficients in the original time units are
//! available from [`BreakpointBasis::coefficients`].

use nalgebra::{DMatrix, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reciprocal condition number below which the 4x4 system is declared singular.
pub const RCOND_THRESHOLD: f64 = 1e-12;

/// Ordered observation times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
    mean: f64,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 4 {
            return Err(Error::InvalidGrid(format!("{} points", times.len())));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidGrid("non-finite time".into()));
        }
        if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!(
                "times not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        Ok(Self { times, mean })
    }

    /// Grid `start, start + 1, ..., start + n - 1`.
    pub fn regular(start: f64, n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| start + i as f64).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Arithmetic mean of the observation times.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn first(&self) -> f64 {
        self.times[0]
    }

    pub fn last(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Centred times `t_i - mean`.
    pub fn centred(&self) -> Vec<f64> {
        self.times.iter().map(|t| t - self.mean).collect()
    }

    fn scale(&self) -> f64 {
        0.5 * (self.last() - self.first())
    }
}

/// Two-piece linear function `a0 + b0 t` for `t <= tau`, `a1 + b1 t` beyond.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreakpointBasis {
    tau: f64,
    // Coefficients are held in the scaled coordinate s = (t - center) / scale.
    center: f64,
    scale: f64,
    left: (f64, f64),
    right: (f64, f64),
}

impl BreakpointBasis {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `(a0, b0, a1, b1)` in the original time units.
    pub fn coefficients(&self) -> (f64, f64, f64, f64) {
        let to_abs = |(a, b): (f64, f64)| {
            let slope = b / self.scale;
            (a - slope * self.center, slope)
        };
        let (a0, b0) = to_abs(self.left);
        let (a1, b1) = to_abs(self.right);
        (a0, b0, a1, b1)
    }

    /// Value at `t`. Defined on the whole line; outside the grid the outer
    /// pieces extend linearly. `t == tau` belongs to the left piece.
    pub fn eval(&self, t: f64) -> f64 {
        let s = (t - self.center) / self.scale;
        let (a, b) = if t <= self.tau { self.left } else { self.right };
        a + b * s
    }

    pub fn eval_grid(&self, grid: &TimeGrid) -> Vec<f64> {
        grid.times().iter().map(|&t| self.eval(t)).collect()
    }
}

/// Solve for the break-point function centred at `tau` on `grid`.
pub fn solve_breakpoint(grid: &TimeGrid, tau: f64) -> Result<BreakpointBasis> {
    let (lo, hi) = (grid.first(), grid.last());
    if !(tau > lo && tau < hi) {
        return Err(Error::OutOfRange { tau, lo, hi });
    }
    let center = grid.mean();
    let scale = grid.scale();
    let s_tau = (tau - center) / scale;

    let (mut n_l, mut s_l, mut q_l) = (0.0, 0.0, 0.0);
    let (mut n_r, mut s_r, mut q_r) = (0.0, 0.0, 0.0);
    for &t in grid.times() {
        let s = (t - center) / scale;
        if t <= tau {
            n_l += 1.0;
            s_l += s;
            q_l += s * s;
        } else {
            n_r += 1.0;
            s_r += s;
            q_r += s * s;
        }
    }
    if n_l < 1.0 || n_r < 1.0 {
        return Err(Error::SingularSystem(format!(
            "tau = {tau} leaves no grid point on one side"
        )));
    }

    #[rustfmt::skip]
    let a = Matrix4::new(
        1.0, s_tau, -1.0, -s_tau,
        1.0, s_tau, 0.0, 0.0,
        n_l, s_l, n_r, s_r,
        s_l, q_l, s_r, q_r,
    );
    let rhs = Vector4::new(0.0, 1.0, 0.0, 0.0);

    let lu = a.lu();
    let inv = lu
        .try_inverse()
        .ok_or_else(|| Error::SingularSystem(format!("tau = {tau}: zero pivot")))?;
    let rcond = 1.0 / (norm1(&a) * norm1(&inv));
    if !(rcond >= RCOND_THRESHOLD) {
        return Err(Error::SingularSystem(format!(
            "tau = {tau}: reciprocal condition number {rcond:e}"
        )));
    }
    let x = lu
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem(format!("tau = {tau}: zero pivot")))?;

    Ok(BreakpointBasis {
        tau,
        center,
        scale,
        left: (x[0], x[1]),
        right: (x[2], x[3]),
    })
}

fn norm1(m: &Matrix4<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Evaluate a single break-point function on the grid.
pub fn breakpoint_column(grid: &TimeGrid, tau: f64) -> Result<Vec<f64>> {
    Ok(solve_breakpoint(grid, tau)?.eval_grid(grid))
}

/// `n x J` matrix whose column `j` is the break-point function at `taus[j]`
/// evaluated on the grid.
pub fn design_columns(grid: &TimeGrid, taus: &[f64]) -> Result<DMatrix<f64>> {
    let n = grid.len();
    let mut out = DMatrix::zeros(n, taus.len());
    for (j, &tau) in taus.iter().enumerate() {
        let col = breakpoint_column(grid, tau)?;
        out.column_mut(j).copy_from_slice(&col);
    }
    Ok(out)
}
