//! Constant-coefficient stencil operators and their exact inverses by DFT.
//!
//! On a periodic grid the operator `u -> sum_ab C_ab D_ab u + shift u` is
//! circulant, so every Fourier mode is an eigenvector. The symbol of the
//! centered second difference along `a` is `-4 sin^2(theta_a / 2) / h^2` and
//! that of the nested mixed difference is `-sin(theta_a) sin(theta_b) / h^2`.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{PeriodicGrid, SymMat};

pub struct SpectralOperator {
    grid: PeriodicGrid,
    symbols: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl SpectralOperator {
    /// Symbols of `C : D^2 + shift`.
    pub fn new(grid: PeriodicGrid, coeff: &SymMat, shift: f64) -> Self {
        let n = grid.dim();
        let nn = grid.points_per_axis();
        let inv_h2 = grid.inv_h2();
        let symbols = (0..grid.len())
            .map(|p| {
                let mut theta = [0.0; 3];
                for (a, t) in theta.iter_mut().enumerate().take(n) {
                    *t = 2.0 * std::f64::consts::PI * grid.coordinate_index(p, a) as f64 / nn as f64;
                }
                let mut s = shift;
                for a in 0..n {
                    s -= coeff.get(a, a) * 4.0 * (0.5 * theta[a]).sin().powi(2) * inv_h2;
                    for b in (a + 1)..n {
                        s -= 2.0 * coeff.get(a, b) * theta[a].sin() * theta[b].sin() * inv_h2;
                    }
                }
                s
            })
            .collect();
        let mut planner = FftPlanner::new();
        SpectralOperator {
            grid,
            symbols,
            forward: planner.plan_fft_forward(nn),
            inverse: planner.plan_fft_inverse(nn),
        }
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    /// Eigenvalue of the Fourier mode at multi-index position `p` (index 0 is the constant mode).
    pub fn symbol(&self, p: usize) -> f64 {
        self.symbols[p]
    }

    /// Applies the inverse to `rhs`. Modes whose symbol is zero are mapped to zero.
    pub fn solve(&self, rhs: &[f64], out: &mut [f64]) {
        self.solve_with(rhs, out, |_, s| s);
    }

    /// Divides mode `p` by `symbol_map(p, symbol(p))` instead of the plain symbol.
    pub fn solve_with(&self, rhs: &[f64], out: &mut [f64], symbol_map: impl Fn(usize, f64) -> f64) {
        let mut buf: Vec<Complex<f64>> = rhs.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.transform(&mut buf, &self.forward);
        for (p, c) in buf.iter_mut().enumerate() {
            let s = symbol_map(p, self.symbols[p]);
            *c = if s == 0.0 { Complex::new(0.0, 0.0) } else { *c / s };
        }
        self.transform(&mut buf, &self.inverse);
        let scale = 1.0 / self.grid.len() as f64;
        for (o, c) in out.iter_mut().zip(&buf) {
            *o = c.re * scale;
        }
    }

    fn transform(&self, data: &mut [Complex<f64>], plan: &Arc<dyn Fft<f64>>) {
        let g = self.grid;
        let nn = g.points_per_axis();
        let mut line = vec![Complex::new(0.0, 0.0); nn];
        for axis in 0..g.dim() {
            let s = g.stride(axis);
            for p in 0..g.len() {
                if g.coordinate_index(p, axis) != 0 {
                    continue;
                }
                for (j, l) in line.iter_mut().enumerate() {
                    *l = data[p + j * s];
                }
                plan.process(&mut line);
                for (j, l) in line.iter().enumerate() {
                    data[p + j * s] = *l;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::hessian_of_values;

    #[test]
    fn inverse_undoes_stencil_operator() {
        let g = PeriodicGrid::new(2, 8).unwrap();
        let c = SymMat::from_row_major(2, &[1.3, 0.4, 0.4, 0.8]).unwrap();
        let op = SpectralOperator::new(g, &c, -1.0);
        let u: Vec<f64> = (0..g.len()).map(|p| ((p * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let lu: Vec<f64> = hessian_of_values(g, &u).iter().zip(&u).map(|(m, ui)| c.contract(m) - ui).collect();
        let mut back = vec![0.0; g.len()];
        op.solve(&lu, &mut back);
        for (a, b) in u.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn nonzero_modes_have_negative_symbols() {
        let g = PeriodicGrid::new(3, 4).unwrap();
        let c = SymMat::from_row_major(3, &[2.0, 0.9, 0.3, 0.9, 1.0, 0.2, 0.3, 0.2, 1.5]).unwrap();
        let op = SpectralOperator::new(g, &c, 0.0);
        assert_eq!(op.symbol(0), 0.0);
        assert!((1..g.len()).all(|p| op.symbol(p) < 0.0));
    }
}
