//! Piecewise-in-time control schedules.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io;
use crate::modal::{self, RealMode};
use crate::spectral::{Mask, SpectralField, TorusGrid};

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("segment {index} is empty or reversed ({t0} .. {t1})")]
    BadSegment { index: usize, t0: f64, t1: f64 },
    #[error("gap or overlap between segments at t = {0}")]
    NotContiguous(f64),
    #[error("schedule does not start at {expected} (starts at {got})")]
    BadStart { expected: f64, got: f64 },
    #[error("H0 vector has {got} coefficients, expected {expected}")]
    H0Length { expected: usize, got: usize },
    #[error("malformed schedule record: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Field(#[from] io::FieldIoError),
}

/// Coefficients of an element of `span{1, sin x_1, cos x_1, …, sin x_d, cos x_d}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H0Vector {
    coefficients: Vec<f64>,
}

impl H0Vector {
    pub fn new(d: usize, coefficients: Vec<f64>) -> Result<Self, ScheduleError> {
        if coefficients.len() != 2 * d + 1 {
            return Err(ScheduleError::H0Length { expected: 2 * d + 1, got: coefficients.len() });
        }
        Ok(Self { coefficients })
    }

    pub fn zeros(d: usize) -> Self {
        Self { coefficients: vec![0.0; 2 * d + 1] }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn dim(&self) -> usize {
        (self.coefficients.len() - 1) / 2
    }

    pub fn is_zero(&self) -> bool {
        self.coefficients.iter().all(|&c| c == 0.0)
    }

    pub fn scale(&self, a: f64) -> Self {
        Self { coefficients: self.coefficients.iter().map(|c| c * a).collect() }
    }

    pub fn to_field(&self, grid: TorusGrid) -> SpectralField {
        let d = grid.d();
        let mut f = SpectralField::constant(grid, self.coefficients[0]);
        for i in 0..d {
            let mut e = vec![0i64; d];
            e[i] = 1;
            f.add_trig(&e, false, self.coefficients[1 + 2 * i]);
            f.add_trig(&e, true, self.coefficients[2 + 2 * i]);
        }
        f
    }

    /// Orthogonal projection of `u` onto the span.
    pub fn project(u: &SpectralField) -> Self {
        let d = u.grid().d();
        let mut c = vec![u.mean()];
        for i in 0..d {
            let mut e = vec![0i64; d];
            e[i] = 1;
            let z = u.coeff(&e);
            c.push(-2.0 * z.im);
            c.push(2.0 * z.re);
        }
        Self { coefficients: c }
    }
}

/// Time-varying control `1_ω · Σ_i g_i(t) e_i` with
/// `g(t) = -B e^{A(t_terminal - t)} λ`, the shape of a minimal-norm
/// Gramian control on a Galerkin truncation.
#[derive(Debug, Clone)]
pub struct ModalControl {
    mask: Mask,
    lambda_max: f64,
    modes: Vec<RealMode>,
    costate: Vec<f64>,
    t_terminal: f64,
    /// `1_ω · P(1_ω e_j)` for each retained mode `j`.
    columns: Vec<SpectralField>,
}

impl ModalControl {
    pub fn new(mask: Mask, lambda_max: f64, costate: Vec<f64>, t_terminal: f64) -> Self {
        let grid = mask.grid();
        let modes = modal::retained_modes(grid, lambda_max);
        assert_eq!(modes.len(), costate.len(), "costate length must match the retained modes");
        let columns = modes
            .iter()
            .map(|m| {
                let e = modal::basis_field(grid, m);
                let local = e.indicator_multiply(&mask).expect("mask is nonempty");
                let c = modal::coords_from_field(&modes, &local);
                modal::field_from_coords(grid, &modes, &c).indicator_multiply(&mask).expect("mask is nonempty")
            })
            .collect();
        Self { mask, lambda_max, modes, costate, t_terminal, columns }
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn costate(&self) -> &[f64] {
        &self.costate
    }

    pub fn t_terminal(&self) -> f64 {
        self.t_terminal
    }

    /// Modal coefficients `g(t)` of the control before localization.
    pub fn coefficients_at(&self, t: f64, bmat: &nalgebra::DMatrix<f64>) -> Vec<f64> {
        let w: Vec<f64> =
            self.modes.iter().zip(&self.costate).map(|(m, l)| l * (m.rate() * (self.t_terminal - t)).exp()).collect();
        (0..self.modes.len()).map(|i| -(0..w.len()).map(|j| bmat[(i, j)] * w[j]).sum::<f64>()).collect()
    }

    /// Physical forcing field at time `t`.
    pub fn field_at(&self, t: f64) -> SpectralField {
        let mut f = SpectralField::zeros(self.mask.grid());
        for ((m, l), col) in self.modes.iter().zip(&self.costate).zip(&self.columns) {
            let w = -l * (m.rate() * (self.t_terminal - t)).exp();
            if w != 0.0 {
                f = f.axpy(w, col).expect("same grid");
            }
        }
        f
    }

    pub fn shifted(&self, offset: f64) -> Self {
        let mut c = self.clone();
        c.t_terminal += offset;
        c
    }
}

#[derive(Debug, Clone)]
pub enum Payload {
    /// No control.
    Zero,
    /// Constant-in-time element of the `(2d+1)`-dimensional control space.
    H0(H0Vector),
    /// Constant-in-time field supported in `ω`.
    Localized { field: SpectralField, mask: Mask },
    /// Gramian-shaped control supported in `ω`.
    Modal(ModalControl),
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Zero => "zero",
            Payload::H0(_) => "h0",
            Payload::Localized { .. } => "localized",
            Payload::Modal(_) => "modal",
        }
    }

    /// Forcing field at time `t`, `None` when the control vanishes.
    pub fn forcing_at(&self, grid: TorusGrid, t: f64) -> Option<SpectralField> {
        match self {
            Payload::Zero => None,
            Payload::H0(v) if v.is_zero() => None,
            Payload::H0(v) => Some(v.to_field(grid)),
            Payload::Localized { field, .. } => Some(field.clone()),
            Payload::Modal(m) => Some(m.field_at(t)),
        }
    }

    /// Support mask of a localized payload.
    pub fn support(&self) -> Option<&Mask> {
        match self {
            Payload::Localized { mask, .. } => Some(mask),
            Payload::Modal(m) => Some(m.mask()),
            _ => None,
        }
    }

    fn shifted(&self, offset: f64) -> Self {
        match self {
            Payload::Modal(m) => Payload::Modal(m.shifted(offset)),
            other => other.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Segment {
    pub t0: f64,
    pub t1: f64,
    pub payload: Payload,
}

impl Segment {
    pub fn len(&self) -> f64 {
        self.t1 - self.t0
    }

    pub fn is_empty(&self) -> bool {
        self.t1 <= self.t0
    }
}

/// Contiguous partition of `[t_start, t_end]` into control segments.
#[derive(Debug, Clone, Default)]
pub struct ControlSchedule {
    segments: Vec<Segment>,
}

impl ControlSchedule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_segments(segments: Vec<Segment>) -> Result<Self, ScheduleError> {
        let s = Self { segments };
        s.validate()?;
        Ok(s)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn start(&self) -> f64 {
        self.segments.first().map_or(0.0, |s| s.t0)
    }

    pub fn end(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.t1)
    }

    pub fn duration(&self) -> f64 {
        self.end() - self.start()
    }

    /// Appends a segment of length `len` after the current end.
    pub fn push(&mut self, len: f64, payload: Payload) {
        let t0 = self.end();
        self.segments.push(Segment { t0, t1: t0 + len, payload });
    }

    /// Appends `other`, re-timed to start at the current end.
    pub fn append(&mut self, other: &ControlSchedule) {
        let offset = self.end() - other.start();
        for s in &other.segments {
            self.segments.push(Segment { t0: s.t0 + offset, t1: s.t1 + offset, payload: s.payload.shifted(offset) });
        }
        // Re-align endpoints exactly to avoid accumulated rounding gaps.
        for i in 1..self.segments.len() {
            let prev = self.segments[i - 1].t1;
            self.segments[i].t0 = prev;
        }
    }

    pub fn shifted(&self, offset: f64) -> Self {
        Self {
            segments: self
                .segments
                .iter()
                .map(|s| Segment { t0: s.t0 + offset, t1: s.t1 + offset, payload: s.payload.shifted(offset) })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.t1 > s.t0) {
                return Err(ScheduleError::BadSegment { index: i, t0: s.t0, t1: s.t1 });
            }
            if i > 0 {
                let prev = self.segments[i - 1].t1;
                if (prev - s.t0).abs() > 1e-12 * prev.abs().max(1.0) {
                    return Err(ScheduleError::NotContiguous(s.t0));
                }
            }
        }
        Ok(())
    }

    /// Segment containing `t` (left-closed, the last segment right-closed).
    pub fn segment_at(&self, t: f64) -> Option<&Segment> {
        let n = self.segments.len();
        self.segments
            .iter()
            .enumerate()
            .find(|(i, s)| t >= s.t0 && (t < s.t1 || (*i == n - 1 && t <= s.t1)))
            .map(|(_, s)| s)
    }

    /// Writes one JSON record per line. Localized fields go to sidecar binary
    /// files in `dir` and are referenced by file name.
    pub fn write_jsonl(&self, path: &Path) -> Result<(), ScheduleError> {
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("schedule");
        let mut out = String::new();
        for (i, s) in self.segments.iter().enumerate() {
            let rec = match &s.payload {
                Payload::Zero => SegmentRecord { t0: s.t0, t1: s.t1, kind: "zero".into(), ..Default::default() },
                Payload::H0(v) => SegmentRecord {
                    t0: s.t0,
                    t1: s.t1,
                    kind: "h0".into(),
                    coefficients: Some(v.coefficients.clone()),
                    ..Default::default()
                },
                Payload::Localized { field, mask } => {
                    let name = format!("{stem}_seg{i:05}.chsf");
                    io::write_field(&dir.join(&name), field)?;
                    SegmentRecord {
                        t0: s.t0,
                        t1: s.t1,
                        kind: "localized".into(),
                        field: Some(name),
                        mask: Some(mask.indices()),
                        ..Default::default()
                    }
                }
                Payload::Modal(m) => SegmentRecord {
                    t0: s.t0,
                    t1: s.t1,
                    kind: "modal".into(),
                    coefficients: Some(m.costate.clone()),
                    mask: Some(m.mask.indices()),
                    lambda_max: Some(m.lambda_max),
                    t_terminal: Some(m.t_terminal),
                    ..Default::default()
                },
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path, grid: TorusGrid) -> Result<Self, ScheduleError> {
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let text = std::fs::read_to_string(path)?;
        let mut segments = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let r: SegmentRecord = serde_json::from_str(line).map_err(|e| ScheduleError::Parse(e.to_string()))?;
            let missing = |what: &str| ScheduleError::Parse(format!("{} record lacks {what}", r.kind));
            let mask_of = |idx: &Option<Vec<usize>>| -> Result<Mask, ScheduleError> {
                let idx = idx.as_ref().ok_or_else(|| missing("mask"))?;
                Mask::from_indices(grid, idx).map_err(|e| ScheduleError::Parse(e.to_string()))
            };
            let payload = match r.kind.as_str() {
                "zero" => Payload::Zero,
                "h0" => {
                    let c = r.coefficients.clone().ok_or_else(|| missing("coefficients"))?;
                    Payload::H0(H0Vector::new(grid.d(), c)?)
                }
                "localized" => {
                    let name = r.field.as_ref().ok_or_else(|| missing("field"))?;
                    let field = io::read_field(&dir.join(name))?;
                    Payload::Localized { field, mask: mask_of(&r.mask)? }
                }
                "modal" => {
                    let c = r.coefficients.clone().ok_or_else(|| missing("coefficients"))?;
                    let lm = r.lambda_max.ok_or_else(|| missing("lambda_max"))?;
                    let tt = r.t_terminal.ok_or_else(|| missing("t_terminal"))?;
                    Payload::Modal(ModalControl::new(mask_of(&r.mask)?, lm, c, tt))
                }
                other => return Err(ScheduleError::Parse(format!("unknown kind {other}"))),
            };
            segments.push(Segment { t0: r.t0, t1: r.t1, payload });
        }
        Self::from_segments(segments)
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct SegmentRecord {
    t0: f64,
    t1: f64,
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    coefficients: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    field: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    mask: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    lambda_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    t_terminal: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn h0_vector_field_and_projection() {
        let g = TorusGrid::new(2, 16).unwrap();
        let v = H0Vector::new(2, vec![0.1, 0.2, -0.3, 0.4, 0.5]).unwrap();
        let f = v.to_field(g);
        let expect = SpectralField::from_fn(g, |x| {
            0.1 + 0.2 * x[0].sin() - 0.3 * x[0].cos() + 0.4 * x[1].sin() + 0.5 * x[1].cos()
        });
        assert!(f.distance(&expect, 0) < 1e-14);
        let back = H0Vector::project(&f);
        for (a, b) in back.coefficients().iter().zip(v.coefficients()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(H0Vector::new(1, vec![0.0; 5]).is_err());
    }

    #[test]
    fn contiguity_is_enforced() {
        let bad = vec![
            Segment { t0: 0.0, t1: 1.0, payload: Payload::Zero },
            Segment { t0: 1.5, t1: 2.0, payload: Payload::Zero },
        ];
        assert!(matches!(ControlSchedule::from_segments(bad), Err(ScheduleError::NotContiguous(_))));
        let empty = vec![Segment { t0: 1.0, t1: 1.0, payload: Payload::Zero }];
        assert!(matches!(ControlSchedule::from_segments(empty), Err(ScheduleError::BadSegment { .. })));
    }

    #[test]
    fn append_retimes() {
        let mut a = ControlSchedule::new();
        a.push(0.5, Payload::Zero);
        let mut b = ControlSchedule::new();
        b.push(0.25, Payload::H0(H0Vector::zeros(1)));
        a.append(&b);
        assert_eq!(a.len(), 2);
        assert!((a.end() - 0.75).abs() < 1e-15);
        assert_eq!(a.segment_at(0.6).unwrap().payload.kind(), "h0");
        a.validate().unwrap();
    }

    #[test]
    fn jsonl_roundtrip() {
        let g = TorusGrid::new(1, 16).unwrap();
        let mask = Mask::slab(g, 0.0, std::f64::consts::PI);
        let field = SpectralField::from_fn(g, |x| x[0].cos()).indicator_multiply(&mask).unwrap();
        let mut s = ControlSchedule::new();
        s.push(0.1, Payload::Zero);
        s.push(0.2, Payload::H0(H0Vector::new(1, vec![1.0, 2.0, 3.0]).unwrap()));
        s.push(0.3, Payload::Localized { field: field.clone(), mask: mask.clone() });
        s.push(0.4, Payload::Modal(ModalControl::new(mask.clone(), 1.0, vec![0.5, -0.5, 0.25], 1.0)));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sched.jsonl");
        s.write_jsonl(&path).unwrap();
        let back = ControlSchedule::read_jsonl(&path, g).unwrap();
        assert_eq!(back.len(), 4);
        for (a, b) in s.segments().iter().zip(back.segments()) {
            assert_eq!(a.payload.kind(), b.payload.kind());
            let (fa, fb) = (a.payload.forcing_at(g, 0.9), b.payload.forcing_at(g, 0.9));
            match (fa, fb) {
                (Some(x), Some(y)) => assert!(x.distance(&y, 0) < 1e-15),
                (None, None) => {}
                _ => panic!("payload mismatch"),
            }
        }
    }
}
