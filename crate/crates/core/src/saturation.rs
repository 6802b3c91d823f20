//! Symbolic algebra of the control space `span{1, sin x_i, cos x_i}` and the
//! cube decompositions that generate every trigonometric mode from it.
//!
//! The central identity is `pqr = f1³ + f2³ + f3³ + f4³` with
//! `f1 = p/2 + q/3 + r/4`, `f2 = −(p/2 + q/3 − r/4)`, `f3 = −(p/2 − q/3 + r/4)`,
//! `f4 = p/2 − q/3 − r/4`. Applying `Δ` to a product of known modes turns a
//! sum of cubes into a new, higher mode.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modal::is_canonical;
use crate::spectral::{SpectralError, SpectralField, TorusGrid};

#[derive(Debug, Error)]
pub enum SaturationError {
    #[error("grid too coarse: frequency {needed} does not fit (n = {n})")]
    GridTooCoarse { needed: i64, n: usize },
    #[error("truncation to level {level} discards {discarded:.3e} > tol {tol:.3e}")]
    TruncationTooLossy { level: usize, discarded: f64, tol: f64 },
    #[error("malformed plan: {0}")]
    Parse(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Sin,
    Cos,
}

/// `amplitude · sin(x·p)` or `amplitude · cos(x·p)` in canonical form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigMode {
    pub p: Vec<i64>,
    pub phase: Phase,
    pub amplitude: f64,
}

impl TrigMode {
    /// Canonicalizes `p` so that its first nonzero entry is positive.
    pub fn new(p: Vec<i64>, phase: Phase, amplitude: f64) -> Self {
        if is_canonical(&p) {
            Self { p, phase, amplitude }
        } else {
            let p = p.iter().map(|x| -x).collect();
            let amplitude = if phase == Phase::Sin { -amplitude } else { amplitude };
            Self { p, phase, amplitude }
        }
    }

    pub fn sin(p: &[i64], amplitude: f64) -> Self {
        Self::new(p.to_vec(), Phase::Sin, amplitude)
    }

    pub fn cos(p: &[i64], amplitude: f64) -> Self {
        Self::new(p.to_vec(), Phase::Cos, amplitude)
    }

    pub fn l1(&self) -> i64 {
        self.p.iter().map(|x| x.abs()).sum()
    }

    pub fn is_constant(&self) -> bool {
        self.p.iter().all(|&x| x == 0)
    }

    /// Modes with `|p|₁ ≤ 1` lie in the control space itself.
    pub fn in_control_space(&self) -> bool {
        self.l1() <= 1
    }

    pub fn to_poly(&self) -> TrigPoly {
        let mut t = TrigPoly::zero(self.p.len());
        t.add_term(&self.p, self.phase, self.amplitude);
        t
    }

    pub fn to_field(&self, grid: TorusGrid) -> SpectralField {
        SpectralField::trig(grid, &self.p, self.phase == Phase::Cos, self.amplitude)
    }
}

impl fmt::Display for TrigMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ph = match self.phase {
            Phase::Sin => "sin",
            Phase::Cos => "cos",
        };
        write!(f, "{}·{}({:?}·x)", self.amplitude, ph, self.p)
    }
}

/// Finite trigonometric sum keyed by canonical `(p, phase)`; the constant is `(0, Cos)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigPoly {
    d: usize,
    terms: BTreeMap<(Vec<i64>, Phase), f64>,
}

impl TrigPoly {
    pub fn zero(d: usize) -> Self {
        Self { d, terms: BTreeMap::new() }
    }

    pub fn constant(d: usize, c: f64) -> Self {
        let mut t = Self::zero(d);
        t.add_term(&vec![0; d], Phase::Cos, c);
        t
    }

    pub fn from_modes(d: usize, modes: &[TrigMode]) -> Self {
        let mut t = Self::zero(d);
        for m in modes {
            t.add_term(&m.p, m.phase, m.amplitude);
        }
        t
    }

    /// Reads every mode with amplitude above `tol` off a field.
    pub fn from_field(u: &SpectralField, tol: f64) -> Self {
        let g = u.grid();
        let mut t = Self::zero(g.d());
        for i in 0..g.len() {
            let Some(k) = g.wavevector(i) else { continue };
            if !is_canonical(&k) {
                continue;
            }
            let c = u.coeffs()[i];
            if k.iter().all(|&x| x == 0) {
                if c.re.abs() > tol {
                    t.add_term(&k, Phase::Cos, c.re);
                }
                continue;
            }
            if (2.0 * c.re).abs() > tol {
                t.add_term(&k, Phase::Cos, 2.0 * c.re);
            }
            if (2.0 * c.im).abs() > tol {
                t.add_term(&k, Phase::Sin, -2.0 * c.im);
            }
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn add_term(&mut self, p: &[i64], phase: Phase, a: f64) {
        if a == 0.0 {
            return;
        }
        let m = TrigMode::new(p.to_vec(), phase, a);
        if m.is_constant() && phase == Phase::Sin {
            return;
        }
        let key = (m.p, m.phase);
        let v = self.terms.get(&key).copied().unwrap_or(0.0) + m.amplitude;
        if v == 0.0 {
            self.terms.remove(&key);
        } else {
            self.terms.insert(key, v);
        }
    }

    pub fn modes(&self) -> Vec<TrigMode> {
        self.terms.iter().map(|((p, ph), &a)| TrigMode { p: p.clone(), phase: *ph, amplitude: a }).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn max_l1(&self) -> i64 {
        self.terms.keys().map(|(p, _)| p.iter().map(|x| x.abs()).sum()).max().unwrap_or(0)
    }

    pub fn max_linf(&self) -> i64 {
        self.terms.keys().flat_map(|(p, _)| p.iter().map(|x| x.abs())).max().unwrap_or(0)
    }

    pub fn in_control_space(&self) -> bool {
        self.max_l1() <= 1
    }

    /// Sum of absolute amplitudes, an upper bound on the sup norm.
    pub fn amplitude_sum(&self) -> f64 {
        self.terms.values().map(|a| a.abs()).sum()
    }

    pub fn scale(&self, c: f64) -> Self {
        if c == 0.0 {
            return Self::zero(self.d);
        }
        Self { d: self.d, terms: self.terms.iter().map(|(k, &a)| (k.clone(), a * c)).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for ((p, ph), &a) in &other.terms {
            out.add_term(p, *ph, a);
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    /// Product by the product-to-sum formulas.
    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero(self.d);
        for ((p1, ph1), &a1) in &self.terms {
            for ((p2, ph2), &a2) in &other.terms {
                let plus: Vec<i64> = p1.iter().zip(p2).map(|(a, b)| a + b).collect();
                let minus: Vec<i64> = p1.iter().zip(p2).map(|(a, b)| a - b).collect();
                let h = 0.5 * a1 * a2;
                match (ph1, ph2) {
                    (Phase::Cos, Phase::Cos) => {
                        out.add_term(&minus, Phase::Cos, h);
                        out.add_term(&plus, Phase::Cos, h);
                    }
                    (Phase::Sin, Phase::Sin) => {
                        out.add_term(&minus, Phase::Cos, h);
                        out.add_term(&plus, Phase::Cos, -h);
                    }
                    (Phase::Sin, Phase::Cos) => {
                        out.add_term(&plus, Phase::Sin, h);
                        out.add_term(&minus, Phase::Sin, h);
                    }
                    (Phase::Cos, Phase::Sin) => {
                        out.add_term(&plus, Phase::Sin, h);
                        out.add_term(&minus, Phase::Sin, -h);
                    }
                }
            }
        }
        out
    }

    pub fn cube(&self) -> Self {
        self.mul(self).mul(self)
    }

    pub fn laplacian(&self) -> Self {
        Self {
            d: self.d,
            terms: self
                .terms
                .iter()
                .filter(|((p, _), _)| p.iter().any(|&x| x != 0))
                .map(|((p, ph), &a)| {
                    let k2: i64 = p.iter().map(|x| x * x).sum();
                    ((p.clone(), *ph), -(k2 as f64) * a)
                })
                .collect(),
        }
    }

    /// Drops terms with `|a| ≤ tol`.
    pub fn pruned(&self, tol: f64) -> Self {
        Self {
            d: self.d,
            terms: self.terms.iter().filter(|(_, a)| a.abs() > tol).map(|(k, &a)| (k.clone(), a)).collect(),
        }
    }

    /// Splits into the part with `|p|₁ ≤ level` and the rest.
    pub fn split_l1(&self, level: i64) -> (Self, Self) {
        let mut lo = Self::zero(self.d);
        let mut hi = Self::zero(self.d);
        for ((p, ph), &a) in &self.terms {
            let l1: i64 = p.iter().map(|x| x.abs()).sum();
            if l1 <= level {
                lo.terms.insert((p.clone(), *ph), a);
            } else {
                hi.terms.insert((p.clone(), *ph), a);
            }
        }
        (lo, hi)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|((p, ph), &a)| {
                let arg: f64 = p.iter().zip(x).map(|(&k, &xi)| k as f64 * xi).sum();
                match ph {
                    Phase::Sin => a * arg.sin(),
                    Phase::Cos => a * arg.cos(),
                }
            })
            .sum()
    }

    /// Coefficient-sum `L²` norm.
    pub fn l2_norm(&self) -> f64 {
        self.terms
            .iter()
            .map(|((p, _), a)| if p.iter().all(|&x| x == 0) { a * a } else { 0.5 * a * a })
            .sum::<f64>()
            .sqrt()
    }

    /// Coefficient-sum `H^s` norm.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        self.terms
            .iter()
            .map(|((p, _), a)| {
                let k2: i64 = p.iter().map(|x| x * x).sum();
                let w = (1.0 + k2 as f64).powf(s);
                if k2 == 0 {
                    a * a * w
                } else {
                    0.5 * a * a * w
                }
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Field on `grid`; fails if a term does not fit in the band.
    pub fn to_field(&self, grid: TorusGrid) -> Result<SpectralField, SaturationError> {
        let lim = (grid.n() / 2) as i64 - 1;
        let mut f = SpectralField::zeros(grid);
        for ((p, ph), &a) in &self.terms {
            if let Some(&big) = p.iter().map(|x| x.abs()).collect::<Vec<_>>().iter().max() {
                if big > lim {
                    return Err(SaturationError::GridTooCoarse { needed: big, n: grid.n() });
                }
            }
            f.add_trig(p, *ph == Phase::Cos, a);
        }
        Ok(f)
    }

    /// Largest amplitude difference to `other`.
    pub fn max_coeff_diff(&self, other: &Self) -> f64 {
        self.sub(other).terms.values().map(|a| a.abs()).fold(0.0, f64::max)
    }
}

/// The four linear ingredients of one cube decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct CubeTriple {
    pub f: [TrigPoly; 4],
}

impl CubeTriple {
    /// `Σ f_i³`, symbolically.
    pub fn sum_of_cubes(&self) -> TrigPoly {
        self.f.iter().fold(TrigPoly::zero(self.f[0].dim()), |acc, fi| acc.add(&fi.cube()))
    }
}

/// Ingredients with `Σ f_i³ = pqr` for symbolic arguments.
pub fn q_decompose(p: &TrigPoly, q: &TrigPoly, r: &TrigPoly) -> CubeTriple {
    let (a, b, c) = (p.scale(0.5), q.scale(1.0 / 3.0), r.scale(0.25));
    CubeTriple {
        f: [a.add(&b).add(&c), a.add(&b).sub(&c).scale(-1.0), a.sub(&b).add(&c).scale(-1.0), a.sub(&b).sub(&c)],
    }
}

/// Ingredients evaluated pointwise on value arrays.
pub fn q_decompose_values(p: &[f64], q: &[f64], r: &[f64]) -> [Vec<f64>; 4] {
    let n = p.len();
    let mut out: [Vec<f64>; 4] = Default::default();
    for o in out.iter_mut() {
        o.reserve(n);
    }
    for i in 0..n {
        let (a, b, c) = (p[i] / 2.0, q[i] / 3.0, r[i] / 4.0);
        out[0].push(a + b + c);
        out[1].push(-(a + b - c));
        out[2].push(-(a - b + c));
        out[3].push(a - b - c);
    }
    out
}

/// How a target amplitude is distributed over the three `Q` arguments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Injection {
    /// Whole coefficient on the first argument.
    #[default]
    FirstArgument,
    /// Cube root of the magnitude on each argument, sign on the first.
    Balanced,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanStep {
    /// Adds `weight · ingredient` with the ingredient in the control space.
    Eta { weight: f64, ingredient: TrigPoly },
    /// Adds `weight · Δ(ingredient³)`.
    Cube { weight: f64, ingredient: TrigPoly },
}

/// Elementary moves realizing one target mode.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationPlan {
    pub level: usize,
    pub target: TrigMode,
    pub steps: Vec<PlanStep>,
}

impl GenerationPlan {
    pub fn empty(d: usize) -> Self {
        Self { level: 0, target: TrigMode::new(vec![0; d], Phase::Cos, 0.0), steps: Vec::new() }
    }

    /// Symbolic value of the plan.
    pub fn realize_symbolic(&self) -> TrigPoly {
        let d = self.target.p.len();
        let mut acc = TrigPoly::zero(d);
        for s in &self.steps {
            match s {
                PlanStep::Eta { weight, ingredient } => acc = acc.add(&ingredient.scale(*weight)),
                PlanStep::Cube { weight, ingredient } => acc = acc.add(&ingredient.cube().laplacian().scale(*weight)),
            }
        }
        acc
    }

    /// Ingredient polynomials of the cubic steps.
    pub fn cube_ingredients(&self) -> Vec<&TrigPoly> {
        self.steps
            .iter()
            .filter_map(|s| match s {
                PlanStep::Cube { ingredient, .. } => Some(ingredient),
                _ => None,
            })
            .collect()
    }

    /// Nesting depth of the recursion that makes every ingredient reachable.
    pub fn depth(&self) -> usize {
        self.cube_ingredients()
            .iter()
            .flat_map(|f| f.modes())
            .map(|m| if m.in_control_space() { 0 } else { generate_mode_plan(&m).depth() })
            .max()
            .map_or(0, |m| m + 1)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&PlanHeader { level: self.level, target: self.target.clone() })
            .expect("header serializes");
        out.push('\n');
        for s in &self.steps {
            let (op, weight, f) = match s {
                PlanStep::Eta { weight, ingredient } => ("eta", *weight, ingredient),
                PlanStep::Cube { weight, ingredient } => ("cube", *weight, ingredient),
            };
            let rec = StepRecord { op: op.into(), weight, ingredients: f.modes() };
            out.push_str(&serde_json::to_string(&rec).expect("step serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, SaturationError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: PlanHeader =
            serde_json::from_str(lines.next().ok_or_else(|| SaturationError::Parse("empty plan".into()))?)
                .map_err(|e| SaturationError::Parse(e.to_string()))?;
        let d = header.target.p.len();
        let mut steps = Vec::new();
        for l in lines {
            let r: StepRecord = serde_json::from_str(l).map_err(|e| SaturationError::Parse(e.to_string()))?;
            if r.ingredients.iter().any(|m| m.p.len() != d) {
                return Err(SaturationError::Parse("ingredient dimension mismatch".into()));
            }
            let ingredient = TrigPoly::from_modes(d, &r.ingredients);
            steps.push(match r.op.as_str() {
                "eta" => PlanStep::Eta { weight: r.weight, ingredient },
                "cube" => PlanStep::Cube { weight: r.weight, ingredient },
                other => return Err(SaturationError::Parse(format!("unknown op {other}"))),
            });
        }
        Ok(Self { level: header.level, target: header.target, steps })
    }

    pub fn write(&self, path: &Path) -> Result<(), SaturationError> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct PlanHeader {
    level: usize,
    target: TrigMode,
}

#[derive(Serialize, Deserialize)]
struct StepRecord {
    op: String,
    weight: f64,
    ingredients: Vec<TrigMode>,
}

fn unit(d: usize, i: usize, phase: Phase) -> TrigPoly {
    let mut e = vec![0; d];
    e[i] = 1;
    TrigMode::new(e, phase, 1.0).to_poly()
}

/// `(κ, [(P, Q, R)])` with `target = Δ Σ κ·Q(P, Q, R)` as values.
fn recipe(target: &TrigMode) -> (f64, Vec<[TrigPoly; 3]>) {
    let d = target.p.len();
    let p = &target.p;
    let c = target.amplitude;
    let one = TrigPoly::constant(d, 1.0);
    let nz: Vec<usize> = (0..d).filter(|&i| p[i] != 0).collect();
    let k2: i64 = p.iter().map(|x| x * x).sum();

    if target.l1() == 2 && nz.len() == 1 {
        // c·sin 2θ = ΔQ(−(c/2) sin θ, cos θ, 1); c·cos 2θ = ΔQ(−(c/2) cos θ, cos θ, 1)
        let i = nz[0];
        let first = unit(d, i, target.phase);
        return (-c / 2.0, vec![[first, unit(d, i, Phase::Cos), one]]);
    }
    if target.l1() == 2 {
        // p = e_i + s·e_j with i < j (canonical form has p_i = 1)
        let (i, j) = (nz[0], nz[1]);
        let s = p[j].signum() as f64;
        let sign = TrigPoly::constant(d, s);
        let triples = match target.phase {
            Phase::Sin => vec![
                [unit(d, i, Phase::Sin), unit(d, j, Phase::Cos), one],
                [unit(d, i, Phase::Cos), unit(d, j, Phase::Sin), sign],
            ],
            Phase::Cos => vec![
                [unit(d, i, Phase::Cos), unit(d, j, Phase::Cos), one],
                [unit(d, i, Phase::Sin), unit(d, j, Phase::Sin), sign.scale(-1.0)],
            ],
        };
        return (-c / 2.0, triples);
    }
    // Split p = l + s·e_i on the coordinate of largest magnitude (lowest index on ties).
    let i = (0..d).fold(0, |best, j| if p[j].abs() > p[best].abs() { j } else { best });
    let s = p[i].signum();
    let mut l = p.clone();
    l[i] -= s;
    let sin_l = TrigMode::new(l.clone(), Phase::Sin, 1.0).to_poly();
    let cos_l = TrigMode::new(l, Phase::Cos, 1.0).to_poly();
    let sign = TrigPoly::constant(d, s as f64);
    let triples = match target.phase {
        Phase::Sin => vec![[sin_l, unit(d, i, Phase::Cos), one], [cos_l, unit(d, i, Phase::Sin), sign]],
        Phase::Cos => vec![[cos_l, unit(d, i, Phase::Cos), one], [sin_l, unit(d, i, Phase::Sin), sign.scale(-1.0)]],
    };
    (-c / k2 as f64, triples)
}

/// Plan realizing `target` with the amplitude on the first `Q` argument.
pub fn generate_mode_plan(target: &TrigMode) -> GenerationPlan {
    generate_mode_plan_with(target, Injection::FirstArgument)
}

pub fn generate_mode_plan_with(target: &TrigMode, injection: Injection) -> GenerationPlan {
    let target = TrigMode::new(target.p.clone(), target.phase, target.amplitude);
    let d = target.p.len();
    if target.in_control_space() {
        let steps = if target.amplitude == 0.0 || (target.is_constant() && target.phase == Phase::Sin) {
            Vec::new()
        } else {
            vec![PlanStep::Eta { weight: 1.0, ingredient: target.to_poly() }]
        };
        return GenerationPlan { level: 0, target, steps };
    }
    let level = (target.l1() - 1) as usize;
    if target.amplitude == 0.0 {
        return GenerationPlan { level, target, steps: Vec::new() };
    }
    let (kappa, triples) = recipe(&target);
    let mut steps = Vec::new();
    for [a, b, c] in triples {
        let (a, b, c) = match injection {
            Injection::FirstArgument => (a.scale(kappa), b, c),
            Injection::Balanced => {
                let m = kappa.abs().cbrt();
                (a.scale(m * kappa.signum()), b.scale(m), c.scale(m))
            }
        };
        debug_assert_eq!(d, a.dim());
        for f in q_decompose(&a, &b, &c).f {
            if !f.is_zero() {
                steps.push(PlanStep::Cube { weight: 1.0, ingredient: f });
            }
        }
    }
    GenerationPlan { level, target, steps }
}

/// Evaluates a plan on `grid` with dealiased cubes.
pub fn realize_plan(plan: &GenerationPlan, grid: TorusGrid) -> Result<SpectralField, SaturationError> {
    let lim = (grid.n() / 2) as i64 - 1;
    let need = plan.target.p.iter().map(|x| x.abs()).max().unwrap_or(0);
    if need > lim {
        return Err(SaturationError::GridTooCoarse { needed: need, n: grid.n() });
    }
    let mut acc = SpectralField::zeros(grid);
    for s in &plan.steps {
        match s {
            PlanStep::Eta { weight, ingredient } => acc = acc.axpy(*weight, &ingredient.to_field(grid)?)?,
            PlanStep::Cube { weight, ingredient } => {
                let f = ingredient.to_field(grid)?;
                acc = acc.axpy(*weight, &f.laplacian_of_cube()?)?;
            }
        }
    }
    Ok(acc)
}

/// One move `η + Σ Δ(f_i³)` of a decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct Move {
    pub level: usize,
    pub eta: TrigPoly,
    pub cubes: Vec<TrigPoly>,
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub moves: Vec<Move>,
    /// `H^k` norm of the modes discarded by the truncation.
    pub truncation_error: f64,
    /// `H^k` distance between the realized moves and the truncated target.
    pub reconstruction_error: f64,
}

/// Splits `target` into control-space and higher modes, plans every higher mode,
/// and orders the moves by level.
pub fn decompose_target(
    target: &SpectralField,
    level: usize,
    tol: f64,
    k_reg: f64,
    injection: Injection,
) -> Result<Decomposition, SaturationError> {
    let grid = target.grid();
    let poly = TrigPoly::from_field(target, 0.0);
    let (kept, tail) = poly.split_l1(level as i64 + 1);
    let discarded = tail.sobolev_norm(k_reg);
    if discarded > tol {
        return Err(SaturationError::TruncationTooLossy { level, discarded, tol });
    }
    let (h0, high) = kept.split_l1(1);
    let mut moves = Vec::new();
    if !h0.is_zero() {
        moves.push(Move { level: 0, eta: h0, cubes: Vec::new() });
    }
    let mut plans: Vec<GenerationPlan> = high.modes().iter().map(|m| generate_mode_plan_with(m, injection)).collect();
    plans.sort_by_key(|p| p.level);
    for p in plans {
        moves.push(Move {
            level: p.level,
            eta: TrigPoly::zero(grid.d()),
            cubes: p.cube_ingredients().into_iter().cloned().collect(),
        });
    }
    let mut realized = SpectralField::zeros(grid);
    for m in &moves {
        realized = realized.axpy(1.0, &m.eta.to_field(grid)?)?;
        for f in &m.cubes {
            realized = realized.axpy(1.0, &f.to_field(grid)?.laplacian_of_cube()?)?;
        }
    }
    let reconstruction_error = realized.distance(&kept.to_field(grid)?, k_reg);
    Ok(Decomposition { moves, truncation_error: discarded, reconstruction_error })
}

/// Outcome of the randomized cube-identity check.
#[derive(Debug, Clone, Serialize)]
pub struct IdentityReport {
    pub cases: usize,
    /// Largest `max|pqr − Σ f_i³| / max|pqr|` over all cases.
    pub max_relative_residual: f64,
    /// Largest antisymmetry defect `max|Q(p,q,−r) + Q(p,q,r)| / max|pqr|`.
    pub max_antisymmetry_defect: f64,
}

fn random_smooth(grid: TorusGrid, rng: &mut ChaCha8Rng, kmax: i64) -> Vec<f64> {
    let d = grid.d();
    let mut poly = TrigPoly::zero(d);
    let range: Vec<i64> = (-kmax..=kmax).collect();
    let ks: Vec<Vec<i64>> = if d == 1 {
        range.iter().map(|&a| vec![a]).collect()
    } else {
        range.iter().flat_map(|&a| range.iter().map(move |&b| vec![a, b])).collect()
    };
    for k in ks.into_iter().filter(|k| is_canonical(k)) {
        let decay = 1.0 / (1.0 + k.iter().map(|x| x * x).sum::<i64>() as f64);
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        poly.add_term(&k, Phase::Cos, a * decay);
        poly.add_term(&k, Phase::Sin, b * decay);
    }
    (0..grid.len()).map(|i| poly.eval(&grid.node(i))).collect()
}

/// Pointwise check of `pqr = Σ f_i³` on random smooth triples.
pub fn identity_suite(grid: TorusGrid, cases: usize, seed: u64) -> IdentityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut worst_anti: f64 = 0.0;
    for _ in 0..cases {
        let p = random_smooth(grid, &mut rng, 4);
        let q = random_smooth(grid, &mut rng, 4);
        let r = random_smooth(grid, &mut rng, 4);
        let prod: Vec<f64> = (0..p.len()).map(|i| p[i] * q[i] * r[i]).collect();
        let scale = prod.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let f = q_decompose_values(&p, &q, &r);
        let neg_r: Vec<f64> = r.iter().map(|v| -v).collect();
        let g = q_decompose_values(&p, &q, &neg_r);
        for i in 0..p.len() {
            let s: f64 = f.iter().map(|fi| fi[i].powi(3)).sum();
            let sn: f64 = g.iter().map(|gi| gi[i].powi(3)).sum();
            worst = worst.max((s - prod[i]).abs() / scale);
            worst_anti = worst_anti.max((s + sn).abs() / scale);
        }
    }
    IdentityReport { cases, max_relative_residual: worst, max_antisymmetry_defect: worst_anti }
}

/// Every canonical mode (both phases) with `1 ≤ |p|₁ ≤ max_l1`.
pub fn modes_up_to(d: usize, max_l1: i64) -> Vec<TrigMode> {
    let range: Vec<i64> = (-max_l1..=max_l1).collect();
    let ks: Vec<Vec<i64>> = if d == 1 {
        range.iter().map(|&a| vec![a]).collect()
    } else {
        range.iter().flat_map(|&a| range.iter().map(move |&b| vec![a, b])).collect()
    };
    let mut out = Vec::new();
    for k in ks {
        let l1: i64 = k.iter().map(|x| x.abs()).sum();
        if l1 == 0 || l1 > max_l1 || !is_canonical(&k) {
            continue;
        }
        out.push(TrigMode::new(k.clone(), Phase::Sin, 1.0));
        out.push(TrigMode::new(k, Phase::Cos, 1.0));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g1(n: usize) -> TorusGrid {
        TorusGrid::new(1, n).unwrap()
    }

    #[test]
    fn constant_triple() {
        let t = q_decompose_values(&[2.0], &[3.0], &[4.0]);
        let f: Vec<f64> = t.iter().map(|v| v[0]).collect();
        assert_eq!(f, vec![3.0, -1.0, -1.0, -1.0]);
        assert_eq!(f.iter().map(|x| x.powi(3)).sum::<f64>(), 24.0);
    }

    #[test]
    fn sine_cosine_product_on_grid() {
        let g = g1(32);
        let xs: Vec<f64> = (0..32).map(|i| g.node(i)[0]).collect();
        let p: Vec<f64> = xs.iter().map(|x| x.sin()).collect();
        let q: Vec<f64> = xs.iter().map(|x| x.cos()).collect();
        let f = q_decompose_values(&p, &q, &vec![1.0; 32]);
        for i in 0..32 {
            let s: f64 = f.iter().map(|fi| fi[i].powi(3)).sum();
            assert!((s - p[i] * q[i]).abs() <= 1e-13);
        }
    }

    #[test]
    fn symbolic_identity_and_antisymmetry() {
        let p = TrigMode::sin(&[1], 1.0).to_poly().add(&TrigMode::cos(&[2], 0.3).to_poly());
        let q = TrigMode::cos(&[1], 1.0).to_poly();
        let r = TrigPoly::constant(1, 1.0);
        let pqr = p.mul(&q).mul(&r);
        let s = q_decompose(&p, &q, &r).sum_of_cubes();
        assert!(s.max_coeff_diff(&pqr) < 1e-14);
        let s_neg = q_decompose(&p, &q, &r.scale(-1.0)).sum_of_cubes();
        assert!(s_neg.add(&s).max_coeff_diff(&TrigPoly::zero(1)) < 1e-14);
    }

    #[test]
    fn product_to_sum() {
        let s = TrigMode::sin(&[1], 1.0).to_poly();
        let c = TrigMode::cos(&[1], 1.0).to_poly();
        let sc = s.mul(&c);
        assert_eq!(sc, TrigMode::sin(&[2], 0.5).to_poly());
        let ss = s.mul(&s);
        assert_eq!(ss, TrigPoly::constant(1, 0.5).add(&TrigMode::cos(&[2], -0.5).to_poly()));
    }

    #[test]
    fn sin_two_theta_plan() {
        let plan = generate_mode_plan(&TrigMode::sin(&[2], 1.0));
        assert_eq!(plan.level, 1);
        assert_eq!(plan.cube_ingredients().len(), 4);
        // Ingredients are those of Q(−½ sin θ, cos θ, 1).
        let expect = q_decompose(
            &TrigMode::sin(&[1], -0.5).to_poly(),
            &TrigMode::cos(&[1], 1.0).to_poly(),
            &TrigPoly::constant(1, 1.0),
        );
        for (a, b) in plan.cube_ingredients().iter().zip(expect.f.iter()) {
            assert!(a.max_coeff_diff(b) < 1e-15);
        }
        let u = realize_plan(&plan, g1(32)).unwrap();
        let target = SpectralField::trig(g1(32), &[2], false, 1.0);
        assert!(u.distance(&target, 0) / target.sobolev_norm(0) <= 1e-12);
        let nonzero = u.coeffs().iter().filter(|c| c.norm() > 1e-14).count();
        assert_eq!(nonzero, 2);
    }

    #[test]
    fn sum_of_angles_plan() {
        let plan = generate_mode_plan(&TrigMode::sin(&[1, 1], 1.0));
        let expect = q_decompose(
            &TrigMode::sin(&[1, 0], -0.5).to_poly(),
            &TrigMode::cos(&[0, 1], 1.0).to_poly(),
            &TrigPoly::constant(2, 1.0),
        );
        for (a, b) in plan.cube_ingredients().iter().zip(expect.f.iter()) {
            assert!(a.max_coeff_diff(b) < 1e-15);
        }
        assert_eq!(plan.cube_ingredients().len(), 8);
    }

    #[test]
    fn sin_three_theta_is_two_level() {
        let plan = generate_mode_plan(&TrigMode::sin(&[3], 1.0));
        assert_eq!(plan.level, 2);
        assert_eq!(plan.depth(), 2);
        let g = g1(64);
        let u = realize_plan(&plan, g).unwrap();
        let err =
            u.to_physical().iter().enumerate().map(|(i, v)| (v - (3.0 * g.node(i)[0]).sin()).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-11, "{err}");
    }

    #[test]
    fn cos_two_theta_needs_no_eta() {
        let plan = generate_mode_plan(&TrigMode::cos(&[2], 1.0));
        assert!(plan.steps.iter().all(|s| matches!(s, PlanStep::Cube { .. })));
        let u = realize_plan(&plan, g1(32)).unwrap();
        assert!(u.distance(&SpectralField::trig(g1(32), &[2], true, 1.0), 0) < 1e-13);
    }

    #[test]
    fn control_space_targets_and_empty_plans() {
        let plan = generate_mode_plan(&TrigMode::cos(&[1], 0.7));
        assert_eq!(plan.level, 0);
        assert!(matches!(plan.steps.as_slice(), [PlanStep::Eta { .. }]));
        let empty = GenerationPlan::empty(1);
        assert_eq!(realize_plan(&empty, g1(16)).unwrap(), SpectralField::zeros(g1(16)));
    }

    #[test]
    fn grid_too_coarse() {
        let plan = generate_mode_plan(&TrigMode::sin(&[4], 1.0));
        assert!(matches!(realize_plan(&plan, g1(8)), Err(SaturationError::GridTooCoarse { .. })));
    }

    #[test]
    fn decomposition_cases() {
        let g = g1(32);
        let h0 = SpectralField::trig(g, &[1], false, 0.2) + SpectralField::constant(g, 0.1);
        let d = decompose_target(&h0, 1, 1e-12, 1.0, Injection::FirstArgument).unwrap();
        assert_eq!(d.moves.len(), 1);
        assert!(d.moves[0].cubes.is_empty());

        let t = SpectralField::trig(g, &[2], false, 0.3);
        let d = decompose_target(&t, 1, 1e-12, 1.0, Injection::FirstArgument).unwrap();
        assert_eq!(d.moves.len(), 1);
        assert_eq!(d.moves[0].cubes.len(), 4);
        assert!(d.reconstruction_error < 1e-13);
        // First argument scaled by −0.3/2.
        let expect = q_decompose(
            &TrigMode::sin(&[1], -0.15).to_poly(),
            &TrigMode::cos(&[1], 1.0).to_poly(),
            &TrigPoly::constant(1, 1.0),
        );
        assert!(d.moves[0].cubes[0].max_coeff_diff(&expect.f[0]) < 1e-15);

        let t = SpectralField::trig(g, &[5], false, 1.0);
        assert!(matches!(
            decompose_target(&t, 3, 1e-6, 1.0, Injection::FirstArgument),
            Err(SaturationError::TruncationTooLossy { .. })
        ));
    }

    #[test]
    fn plan_jsonl_roundtrip() {
        let plan = generate_mode_plan(&TrigMode::cos(&[1, -2], 0.4));
        let text = plan.to_jsonl();
        assert!(text.lines().nth(1).unwrap().contains("\"op\":\"cube\""));
        let back = GenerationPlan::from_jsonl(&text).unwrap();
        assert_eq!(back, plan);
    }

    #[test]
    fn identity_suite_small() {
        let r = identity_suite(g1(64), 10, 7);
        assert!(r.max_relative_residual <= 1e-12);
        assert!(r.max_antisymmetry_defect <= 1e-13);
    }

    proptest! {
        #[test]
        fn balanced_and_first_argument_agree(k1 in -3i64..=3, k2 in -3i64..=3, amp in -2.0f64..2.0, cos in any::<bool>()) {
            prop_assume!(k1.abs() + k2.abs() >= 2 && k1.abs() + k2.abs() <= 4);
            let phase = if cos { Phase::Cos } else { Phase::Sin };
            let m = TrigMode::new(vec![k1, k2], phase, amp);
            let a = generate_mode_plan_with(&m, Injection::FirstArgument).realize_symbolic();
            let b = generate_mode_plan_with(&m, Injection::Balanced).realize_symbolic();
            let t = m.to_poly();
            prop_assert!(a.max_coeff_diff(&t) <= 1e-12 * (1.0 + amp.abs()));
            prop_assert!(b.max_coeff_diff(&t) <= 1e-12 * (1.0 + amp.abs()));
        }

        #[test]
        fn ingredients_stay_below_level(k1 in -4i64..=4, k2 in -4i64..=4, cos in any::<bool>()) {
            let l1 = k1.abs() + k2.abs();
            prop_assume!((2..=4).contains(&l1));
            let phase = if cos { Phase::Cos } else { Phase::Sin };
            let plan = generate_mode_plan(&TrigMode::new(vec![k1, k2], phase, 1.0));
            prop_assert_eq!(plan.level as i64, l1 - 1);
            prop_assert_eq!(plan.depth() as i64, l1 - 1);
            for f in plan.cube_ingredients() {
                prop_assert!(f.max_l1() <= plan.level as i64);
            }
        }

        #[test]
        fn field_identity_random(seed in 0u64..1000) {
            let r = identity_suite(TorusGrid::new(2, 16).unwrap(), 1, seed);
            prop_assert!(r.max_relative_residual <= 1e-12);
        }
    }
}
