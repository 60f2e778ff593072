//! Energy functionals on tuples of potentials and the per-step energy ledger.
//!
//! All integrals use [`integrate`](crate::grid::integrate), so shift identities
//! such as `AM(psi + c) = AM(psi) + V c` hold up to rounding in dimension one.
//! In dimension two and three the centered mixed stencil does not make
//! `integrate(det(A + D^2 psi))` equal `det A`; the identities then carry an
//! `O(h^2)` defect proportional to `integrate(det D^2 psi)`.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::grid::{integrate_values, ScalarField, SymMat};
use crate::monge_ampere::{mixed_discriminant, AdmissiblePotential, BackgroundGeometry, NotAdmissible};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FunctionalError {
    #[error(transparent)]
    NotAdmissible(#[from] NotAdmissible),
    #[error("expected {expected} potentials, got {got}")]
    WrongCount { expected: usize, got: usize },
    #[error("potential {0} lives on a different grid than the geometry")]
    GridMismatch(usize),
}

/// `k` admissible potentials on the grid of one geometry.
#[derive(Clone, Debug)]
pub struct PotentialTuple {
    potentials: Vec<AdmissiblePotential>,
}

impl PotentialTuple {
    pub fn new(geom: &BackgroundGeometry, fields: Vec<ScalarField>) -> Result<Self, FunctionalError> {
        if fields.len() != geom.k() {
            return Err(FunctionalError::WrongCount { expected: geom.k(), got: fields.len() });
        }
        let potentials = fields
            .into_iter()
            .enumerate()
            .map(|(i, psi)| {
                if psi.grid() != geom.grid() {
                    return Err(FunctionalError::GridMismatch(i));
                }
                Ok(AdmissiblePotential::new(i, geom.background(i), psi)?)
            })
            .collect::<Result<_, _>>()?;
        Ok(PotentialTuple { potentials })
    }

    pub fn zeros(geom: &BackgroundGeometry) -> Self {
        Self::new(geom, vec![ScalarField::zeros(geom.grid()); geom.k()]).expect("zero potentials are admissible")
    }

    pub fn k(&self) -> usize {
        self.potentials.len()
    }

    pub fn field(&self, i: usize) -> &ScalarField {
        self.potentials[i].psi()
    }

    pub fn potential(&self, i: usize) -> &AdmissiblePotential {
        &self.potentials[i]
    }

    pub fn fields(&self) -> impl Iterator<Item = &ScalarField> {
        self.potentials.iter().map(AdmissiblePotential::psi)
    }

    pub fn set(&mut self, pot: AdmissiblePotential) {
        let i = pot.index();
        self.potentials[i] = pot;
    }

    /// Pointwise `sum_i psi_i`.
    pub fn sum(&self) -> ScalarField {
        let mut out = self.potentials[0].psi().clone();
        for p in &self.potentials[1..] {
            out = out.combine(1.0, p.psi(), 1.0);
        }
        out
    }

    /// Sum over `j != i`.
    pub fn sum_except(&self, i: usize) -> ScalarField {
        let grid = self.potentials[0].psi().grid();
        let mut out = ScalarField::zeros(grid);
        for (j, p) in self.potentials.iter().enumerate() {
            if j != i {
                out = out.combine(1.0, p.psi(), 1.0);
            }
        }
        out
    }

    /// Largest sup-norm distance over the components.
    pub fn sup_distance(&self, other: &PotentialTuple) -> f64 {
        self.fields().zip(other.fields()).fold(0.0, |m, (a, b)| m.max(a.sup_distance(b)))
    }

    pub fn into_fields(self) -> Vec<ScalarField> {
        self.potentials.into_iter().map(AdmissiblePotential::into_psi).collect()
    }
}

/// `1/(n+1) sum_j integrate(psi D_j)` with `D_j` the mixed discriminant of
/// `j` copies of `A + D^2 psi` and `n - j` copies of `A`.
pub fn am_energy(a: &SymMat, psi: &ScalarField) -> Result<f64, NotAdmissible> {
    let pot = AdmissiblePotential::new(0, a, psi.clone())?;
    Ok(am_of(a, &pot))
}

fn am_of(a: &SymMat, pot: &AdmissiblePotential) -> f64 {
    let n = a.dim();
    let psi = pot.psi();
    let mut args = [*a; 3];
    let integrand: Vec<f64> = pot
        .metric()
        .iter()
        .zip(psi.values())
        .map(|(m, p)| {
            let mut s = 0.0;
            for j in 0..=n {
                for (slot, arg) in args.iter_mut().enumerate().take(n) {
                    *arg = if slot < j { *m } else { *a };
                }
                s += mixed_discriminant(&args[..n]).expect("dimension checked by the grid");
            }
            p * s
        })
        .collect();
    integrate_values(psi.grid(), &integrand) / (n + 1) as f64
}

/// `(1/V) integrate(psi (det A - det(A + D^2 psi)))`.
pub fn i_functional(a: &SymMat, psi: &ScalarField) -> Result<f64, NotAdmissible> {
    let pot = AdmissiblePotential::new(0, a, psi.clone())?;
    Ok(i_of(a, &pot))
}

fn i_of(a: &SymMat, pot: &AdmissiblePotential) -> f64 {
    let v = a.det();
    let integrand: Vec<f64> = pot.psi().values().iter().zip(pot.metric()).map(|(p, m)| p * (v - m.det())).collect();
    integrate_values(pot.psi().grid(), &integrand) / v
}

/// `-AM/V + (1/V) integrate(psi det A)`.
pub fn j_functional(a: &SymMat, psi: &ScalarField) -> Result<f64, NotAdmissible> {
    let pot = AdmissiblePotential::new(0, a, psi.clone())?;
    Ok(j_of(a, &pot))
}

fn j_of(a: &SymMat, pot: &AdmissiblePotential) -> f64 {
    let v = a.det();
    -am_of(a, pot) / v + integrate_values(pot.psi().grid(), pot.psi().values())
}

/// `log integrate(exp(-lambda sum psi) f)`, evaluated with a max shift.
fn log_partition(geom: &BackgroundGeometry, tuple: &PotentialTuple) -> f64 {
    let lambda = geom.lambda().value();
    let exponents: Vec<f64> =
        tuple.sum().values().iter().zip(geom.f().values()).map(|(s, f)| -lambda * s + f.ln()).collect();
    let top = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = exponents.iter().map(|e| (e - top).exp()).collect();
    top + integrate_values(geom.grid(), &shifted).ln()
}

/// `-lambda log integrate(exp(-lambda sum_i psi_i) f)`.
pub fn l_functional(geom: &BackgroundGeometry, tuple: &PotentialTuple) -> f64 {
    -geom.lambda().value() * log_partition(geom, tuple)
}

/// `-sum_i AM_i / V_i + L`.
pub fn ding(geom: &BackgroundGeometry, tuple: &PotentialTuple) -> f64 {
    let am: f64 = (0..tuple.k()).map(|i| am_of(geom.background(i), tuple.potential(i)) / geom.volume(i)).sum();
    -am + l_functional(geom, tuple)
}

/// Which mass plays the role of `V_i` in the Ricci potentials.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeConvention {
    /// `V_i = det A_i`.
    ClassVolume,
    /// `V_i = integrate(det(A_i + D^2 psi_i))`; vanishes exactly at discrete fixed points
    /// in every dimension. Equal to the class volume in dimension one.
    DiscreteMass,
}

/// `rho_i = log[V_i exp(-lambda sum psi) f / (Z det(A_i + D^2 psi_i))]` with `Z = integrate(exp(-lambda sum psi) f)`.
pub fn ricci_potentials(geom: &BackgroundGeometry, tuple: &PotentialTuple) -> Vec<ScalarField> {
    ricci_potentials_with(geom, tuple, VolumeConvention::ClassVolume)
}

pub fn ricci_potentials_with(
    geom: &BackgroundGeometry,
    tuple: &PotentialTuple,
    convention: VolumeConvention,
) -> Vec<ScalarField> {
    let grid = geom.grid();
    let lambda = geom.lambda().value();
    let log_z = log_partition(geom, tuple);
    let sum = tuple.sum();
    (0..tuple.k())
        .map(|i| {
            let density = tuple.potential(i).density();
            let v = match convention {
                VolumeConvention::ClassVolume => geom.volume(i),
                VolumeConvention::DiscreteMass => integrate_values(grid, density.values()),
            };
            let log_v = v.ln();
            let values = sum
                .values()
                .iter()
                .zip(geom.f().values())
                .zip(density.values())
                .map(|((s, f), d)| log_v - lambda * s + f.ln() - log_z - d.ln())
                .collect();
            ScalarField::new(grid, values).expect("admissible tuples give finite potentials")
        })
        .collect()
}

/// `-sum_i (1/V_i) integrate(delta_i (1 - exp(rho_i)) det(A_i + D^2 psi_i))`.
pub fn first_variation(geom: &BackgroundGeometry, tuple: &PotentialTuple, directions: &[ScalarField]) -> f64 {
    assert_eq!(directions.len(), tuple.k());
    let rho = ricci_potentials(geom, tuple);
    let mut total = 0.0;
    for (i, dir) in directions.iter().enumerate() {
        let density = tuple.potential(i).density();
        let integrand: Vec<f64> = dir
            .values()
            .iter()
            .zip(rho[i].values())
            .zip(density.values())
            .map(|((d, r), m)| d * (1.0 - r.exp()) * m)
            .collect();
        total -= integrate_values(geom.grid(), &integrand) / geom.volume(i);
    }
    total
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostics {
    /// `max psi_i - min psi_i`.
    pub osc: Vec<f64>,
    /// Largest eigenvalue of `A_i^{-1} M_i` over the grid divided by the smallest.
    pub eq_ratio: Vec<f64>,
}

pub fn diagnostics(geom: &BackgroundGeometry, tuple: &PotentialTuple) -> Diagnostics {
    let osc = tuple.fields().map(ScalarField::oscillation).collect();
    let eq_ratio = (0..tuple.k())
        .map(|i| {
            let a = geom.background(i);
            let (lo, hi) = tuple.potential(i).metric().iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), m| {
                let (l, h) = m.relative_eigen_range(a).expect("background is positive definite");
                (lo.min(l), hi.max(h))
            });
            hi / lo
        })
        .collect();
    Diagnostics { osc, eq_ratio }
}

/// One row of the energy ledger.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LedgerRow {
    pub step: usize,
    pub am: Vec<f64>,
    pub i: Vec<f64>,
    pub j: Vec<f64>,
    pub l: f64,
    pub d: f64,
    pub j_total: f64,
    pub rho_max: Vec<f64>,
    pub osc: Vec<f64>,
    pub eq_ratio: Vec<f64>,
    pub inner_iters: usize,
    pub wall_ms: f64,
}

impl LedgerRow {
    pub fn evaluate(
        geom: &BackgroundGeometry,
        tuple: &PotentialTuple,
        step: usize,
        inner_iters: usize,
        wall_ms: f64,
        convention: VolumeConvention,
    ) -> LedgerRow {
        let k = tuple.k();
        let am: Vec<f64> = (0..k).map(|i| am_of(geom.background(i), tuple.potential(i))).collect();
        let i_vals = (0..k).map(|i| i_of(geom.background(i), tuple.potential(i))).collect();
        let j: Vec<f64> = (0..k).map(|i| j_of(geom.background(i), tuple.potential(i))).collect();
        let l = l_functional(geom, tuple);
        let d = -am.iter().enumerate().map(|(i, a)| a / geom.volume(i)).sum::<f64>() + l;
        let rho_max = ricci_potentials_with(geom, tuple, convention).iter().map(ScalarField::sup_norm).collect();
        let diag = diagnostics(geom, tuple);
        LedgerRow {
            step,
            j_total: j.iter().sum(),
            am,
            i: i_vals,
            j,
            l,
            d,
            rho_max,
            osc: diag.osc,
            eq_ratio: diag.eq_ratio,
            inner_iters,
            wall_ms,
        }
    }

    /// `max_i ||rho_i||_inf`.
    pub fn max_rho(&self) -> f64 {
        self.rho_max.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EnergyLedger {
    pub rows: Vec<LedgerRow>,
}

impl EnergyLedger {
    pub fn new() -> Self {
        EnergyLedger { rows: Vec::new() }
    }

    pub fn push(&mut self, row: LedgerRow) {
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&LedgerRow> {
        self.rows.last()
    }

    pub fn csv_header(k: usize) -> String {
        let mut cols = vec!["step".to_string()];
        for name in ["AM", "I", "J"] {
            cols.extend((1..=k).map(|i| format!("{name}_{i}")));
        }
        cols.extend(["L", "D", "J_total"].map(String::from));
        for name in ["rho_max", "osc", "eqratio"] {
            cols.extend((1..=k).map(|i| format!("{name}_{i}")));
        }
        cols.extend(["inner_iters", "wall_ms"].map(String::from));
        cols.join(",")
    }

    /// Writes the ledger as CSV; floats use 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let k = self.rows.first().map_or(0, |r| r.am.len());
        writeln!(w, "{}", Self::csv_header(k))?;
        for r in &self.rows {
            let mut cells = vec![r.step.to_string()];
            for col in [&r.am, &r.i, &r.j] {
                cells.extend(col.iter().map(|v| format!("{v:.16e}")));
            }
            cells.extend([r.l, r.d, r.j_total].iter().map(|v| format!("{v:.16e}")));
            for col in [&r.rho_max, &r.osc, &r.eq_ratio] {
                cells.extend(col.iter().map(|v| format!("{v:.16e}")));
            }
            cells.push(r.inner_iters.to_string());
            cells.push(format!("{:.3}", r.wall_ms));
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}
