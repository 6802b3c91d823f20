//! Real orthonormal trigonometric basis `{1, √2 cos(k·x), √2 sin(k·x)}` used by
//! the Galerkin truncations. Orthonormality is with respect to the normalized
//! inner product `(2π)^{-d} ∫ f g`, which matches the coefficient-sum norm.

use std::f64::consts::SQRT_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::spectral::{SpectralField, TorusGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Const,
    Cos,
    Sin,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RealMode {
    /// Canonical wavevector: first nonzero entry positive.
    pub k: Vec<i64>,
    pub kind: ModeKind,
}

impl RealMode {
    pub fn k_squared(&self) -> f64 {
        self.k.iter().map(|&x| (x * x) as f64).sum()
    }

    /// Linear growth rate `-(|k|⁴ - |k|²)` of this mode under `A`.
    pub fn rate(&self) -> f64 {
        crate::spectral::linear_symbol(self.k_squared())
    }
}

/// True when the first nonzero entry of `k` is positive (or `k = 0`).
pub fn is_canonical(k: &[i64]) -> bool {
    k.iter().find(|&&x| x != 0).is_none_or(|&x| x > 0)
}

/// All real modes with `|k|² ≤ lambda_max` that fit the grid band, ordered by
/// `|k|²`, then wavevector, cos before sin.
pub fn retained_modes(grid: TorusGrid, lambda_max: f64) -> Vec<RealMode> {
    let half = (grid.n() / 2) as i64 - 1;
    let mut ks: Vec<Vec<i64>> = Vec::new();
    match grid.d() {
        1 => {
            for a in 0..=half {
                ks.push(vec![a]);
            }
        }
        _ => {
            for a in -half..=half {
                for b in -half..=half {
                    let k = vec![a, b];
                    if is_canonical(&k) {
                        ks.push(k);
                    }
                }
            }
        }
    }
    ks.retain(|k| k.iter().map(|&x| (x * x) as f64).sum::<f64>() <= lambda_max + 1e-12);
    ks.sort_by(|a, b| {
        let na: i64 = a.iter().map(|x| x * x).sum();
        let nb: i64 = b.iter().map(|x| x * x).sum();
        na.cmp(&nb).then_with(|| b.cmp(a))
    });
    let mut modes = Vec::new();
    for k in ks {
        if k.iter().all(|&x| x == 0) {
            modes.push(RealMode { k, kind: ModeKind::Const });
        } else {
            modes.push(RealMode { k: k.clone(), kind: ModeKind::Cos });
            modes.push(RealMode { k, kind: ModeKind::Sin });
        }
    }
    modes
}

pub fn basis_field(grid: TorusGrid, mode: &RealMode) -> SpectralField {
    match mode.kind {
        ModeKind::Const => SpectralField::constant(grid, 1.0),
        ModeKind::Cos => SpectralField::trig(grid, &mode.k, true, SQRT_2),
        ModeKind::Sin => SpectralField::trig(grid, &mode.k, false, SQRT_2),
    }
}

/// `Σ c_i e_i` as a spectral field.
pub fn field_from_coords(grid: TorusGrid, modes: &[RealMode], c: &[f64]) -> SpectralField {
    let mut f = SpectralField::zeros(grid);
    for (m, &ci) in modes.iter().zip(c) {
        if ci == 0.0 {
            continue;
        }
        match m.kind {
            ModeKind::Const => f.coeffs_mut()[0] += Complex64::new(ci, 0.0),
            ModeKind::Cos => f.add_trig(&m.k, true, SQRT_2 * ci),
            ModeKind::Sin => f.add_trig(&m.k, false, SQRT_2 * ci),
        }
    }
    f
}

/// Orthogonal projection coordinates `⟨u, e_i⟩`.
pub fn coords_from_field(modes: &[RealMode], u: &SpectralField) -> Vec<f64> {
    modes
        .iter()
        .map(|m| {
            let c = u.coeff(&m.k);
            match m.kind {
                ModeKind::Const => c.re,
                ModeKind::Cos => SQRT_2 * c.re,
                ModeKind::Sin => -SQRT_2 * c.im,
            }
        })
        .collect()
}
