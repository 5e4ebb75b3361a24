//! Spectral tools for a learned operator: eigen-spectrum, model
//! reduction, stability, eigenvalue editing and spectrum comparison.

mod assignment;

pub use assignment::min_cost_assignment;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::numerics::{
    complex_condition_number, complex_inverse, complex_pinv, eig, real_part, CMatrix, Complex64, EigResult, Matrix,
    NumericsError,
};

/// Eigenvector bases with a larger 2-norm condition number are inverted
/// by pseudo-inverse and flagged as untrusted.
pub const CONDITION_LIMIT: f64 = 1e8;
/// Largest imaginary residue tolerated before projecting to the real part.
pub const IMAG_LEAK_TOL: f64 = 1e-9;
/// Slack on the unit radius when classifying stability.
pub const STABILITY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("mode {0} does not exist (spectrum has {1} modes)")]
    InvalidPair(usize, usize),
    #[error("mode {0} is a real eigenvalue; only its radius can be edited")]
    AngleOnReal(usize),
    #[error("invalid edit: {0}")]
    InvalidEdit(String),
    #[error("k must lie in 1..={max}, got {k}")]
    InvalidK { k: usize, max: usize },
    #[error("reconstruction leaked {0:e} into the imaginary part")]
    ImaginaryLeak(f64),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// One eigenvalue or one conjugate pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    /// Index of the real eigenvalue, or of the upper member of a pair
    /// followed by its partner.
    pub indices: Vec<usize>,
}

impl Mode {
    pub fn is_pair(&self) -> bool {
        self.indices.len() == 2
    }
}

#[derive(Debug, Clone)]
pub struct Spectrum {
    /// Descending magnitude; conjugate partners adjacent.
    pub eigenvalues: Vec<Complex64>,
    pub vectors: CMatrix,
    pub modes: Vec<Mode>,
    pub condition_number: f64,
    /// SHA-256 of the source matrix entries.
    pub fingerprint: String,
}

pub fn matrix_fingerprint(k: &Matrix) -> String {
    let mut h = Sha256::new();
    h.update((k.rows() as u64).to_le_bytes());
    h.update((k.cols() as u64).to_le_bytes());
    for v in k.as_slice() {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn modes_of(e: &EigResult) -> Vec<Mode> {
    let mut modes = Vec::new();
    let mut j = 0;
    while j < e.values.len() {
        match e.partner(j) {
            Some(p) if p == j + 1 => {
                modes.push(Mode { indices: vec![j, p] });
                j += 2;
            }
            _ => {
                modes.push(Mode { indices: vec![j] });
                j += 1;
            }
        }
    }
    modes
}

pub fn spectrum(k: &Matrix) -> Result<Spectrum, AnalysisError> {
    let e = eig(k)?;
    let condition_number = complex_condition_number(&e.vectors)?;
    Ok(Spectrum {
        modes: modes_of(&e),
        eigenvalues: e.values,
        vectors: e.vectors,
        condition_number,
        fingerprint: matrix_fingerprint(k),
    })
}

impl Spectrum {
    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.first().map_or(0.0, |l| l.norm())
    }

    /// Largest-magnitude conjugate pair, as a mode id.
    pub fn dominant_pair(&self) -> Option<usize> {
        self.modes.iter().position(Mode::is_pair)
    }

    pub fn mode_values(&self, mode: usize) -> Vec<Complex64> {
        self.modes[mode].indices.iter().map(|&i| self.eigenvalues[i]).collect()
    }

    pub fn trusted(&self) -> bool {
        self.condition_number <= CONDITION_LIMIT
    }

    /// `Re(V diag(values) V^{-1})`.
    pub fn reconstruct(&self, values: &[Complex64]) -> Result<Reconstruction, AnalysisError> {
        reconstruct(&self.vectors, values, self.condition_number)
    }

    pub fn export(&self) -> SpectrumExport {
        SpectrumExport {
            eigenvalues: self
                .eigenvalues
                .iter()
                .map(|l| EigenvalueExport { re: l.re, im: l.im, magnitude: l.norm(), angle: l.arg() })
                .collect(),
            pairs: self.modes.iter().map(|m| m.indices.clone()).collect(),
            condition_number: finite_or_max(self.condition_number),
            trusted: self.trusted(),
            spectral_radius: self.spectral_radius(),
            stable: self.spectral_radius() <= 1.0 + STABILITY_TOL,
            fingerprint: self.fingerprint.clone(),
        }
    }
}

fn finite_or_max(v: f64) -> f64 {
    if v.is_finite() { v } else { f64::MAX }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenvalueExport {
    pub re: f64,
    pub im: f64,
    pub magnitude: f64,
    pub angle: f64,
}

/// JSON form of a spectrum. `pairs` lists the eigenvalue indices of every
/// mode; mode ids index this list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumExport {
    pub eigenvalues: Vec<EigenvalueExport>,
    pub pairs: Vec<Vec<usize>>,
    pub condition_number: f64,
    pub trusted: bool,
    pub spectral_radius: f64,
    pub stable: bool,
    pub fingerprint: String,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub k: Matrix,
    pub condition_number: f64,
    /// False when the eigenvector basis was too ill-conditioned to invert
    /// and a pseudo-inverse was used.
    pub trusted: bool,
    pub imag_leak: f64,
}

fn reconstruct(v: &CMatrix, values: &[Complex64], condition_number: f64) -> Result<Reconstruction, AnalysisError> {
    let trusted = condition_number <= CONDITION_LIMIT;
    let vinv = if trusted {
        complex_inverse(v).or_else(|_| complex_pinv(v))?
    } else {
        log::warn!("eigenvector basis condition number {condition_number:e} exceeds {CONDITION_LIMIT:e}; using pseudo-inverse");
        complex_pinv(v)?
    };
    let mut scaled = v.clone();
    for (j, l) in values.iter().enumerate() {
        for i in 0..scaled.nrows() {
            scaled[(i, j)] *= *l;
        }
    }
    let (k, imag_leak) = real_part(&(scaled * vinv));
    let scale = k.max_abs().max(1.0);
    if trusted && imag_leak > IMAG_LEAK_TOL * scale {
        return Err(AnalysisError::ImaginaryLeak(imag_leak));
    }
    Ok(Reconstruction { k, condition_number, trusted, imag_leak })
}

/// How modes are ranked for reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ranking {
    /// Largest eigenvalue magnitude first.
    Magnitude,
    /// Largest `|b_j|` first, where `b = V^{-1} g` for an observable `g`.
    ModalAmplitude(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct Reduced {
    pub k: Matrix,
    /// Eigenvalue indices kept.
    pub kept: Vec<usize>,
    /// Number of eigenvalues kept after completing split pairs.
    pub effective_k: usize,
    pub trusted: bool,
    pub condition_number: f64,
}

/// Projection of `K` onto the invariant subspace of its top `k`
/// eigenvalues; the rest are set to zero. A split conjugate pair is kept
/// whole.
pub fn reduce_model(k: &Matrix, keep: usize, ranking: &Ranking) -> Result<Reduced, AnalysisError> {
    let s = spectrum(k)?;
    let m = s.eigenvalues.len();
    if keep == 0 || keep > m {
        return Err(AnalysisError::InvalidK { k: keep, max: m });
    }
    let mut order: Vec<usize> = (0..s.modes.len()).collect();
    if let Ranking::ModalAmplitude(g) = ranking {
        if g.len() != m {
            return Err(AnalysisError::InvalidEdit(format!("observable has {} entries, expected {m}", g.len())));
        }
        let vinv = complex_inverse(&s.vectors).or_else(|_| complex_pinv(&s.vectors))?;
        let gc = CMatrix::from_fn(m, 1, |i, _| Complex64::new(g[i], 0.0));
        let b = vinv * gc;
        let amp = |mode: usize| s.modes[mode].indices.iter().map(|&i| b[(i, 0)].norm()).fold(0.0, f64::max);
        order.sort_by(|&a, &c| amp(c).total_cmp(&amp(a)));
    }
    let mut mask = vec![false; m];
    let mut count = 0;
    for mode in order {
        if count >= keep {
            break;
        }
        for &i in &s.modes[mode].indices {
            mask[i] = true;
            count += 1;
        }
    }
    let r = reduce_with_mask(&s, &mask)?;
    Ok(Reduced {
        k: r.k,
        kept: (0..m).filter(|&i| mask[i]).collect(),
        effective_k: count,
        trusted: r.trusted,
        condition_number: r.condition_number,
    })
}

/// Zeroes every eigenvalue whose mask entry is false. The mask must not
/// split a conjugate pair.
pub fn reduce_with_mask(s: &Spectrum, mask: &[bool]) -> Result<Reconstruction, AnalysisError> {
    if mask.len() != s.eigenvalues.len() {
        return Err(AnalysisError::InvalidEdit("mask length differs from the spectrum".into()));
    }
    if s.modes.iter().any(|m| m.is_pair() && mask[m.indices[0]] != mask[m.indices[1]]) {
        return Err(AnalysisError::InvalidEdit("mask splits a conjugate pair".into()));
    }
    let values: Vec<Complex64> =
        s.eigenvalues.iter().zip(mask).map(|(l, &keep)| if keep { *l } else { Complex64::new(0.0, 0.0) }).collect();
    s.reconstruct(&values)
}

/// New value for a polar coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Edit {
    Set(f64),
    Scale(f64),
    Shift(f64),
}

impl Edit {
    fn apply(self, v: f64) -> f64 {
        match self {
            Edit::Set(x) => x,
            Edit::Scale(c) => v * c,
            Edit::Shift(d) => v + d,
        }
    }
}

/// Edit of one mode in polar form; both members of a pair move together.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Manipulation {
    pub pair: usize,
    #[serde(default)]
    pub radius: Option<Edit>,
    /// Radians; rejected for real eigenvalues.
    #[serde(default)]
    pub angle: Option<Edit>,
}

#[derive(Debug, Clone)]
pub struct Manipulated {
    pub k: Matrix,
    pub eigenvalues: Vec<Complex64>,
    pub trusted: bool,
    pub condition_number: f64,
}

/// Edited eigenvalues of `s` under `edit`, keeping conjugate symmetry.
pub fn edited_values(s: &Spectrum, edit: &Manipulation) -> Result<Vec<Complex64>, AnalysisError> {
    let mode = s.modes.get(edit.pair).ok_or(AnalysisError::InvalidPair(edit.pair, s.modes.len()))?;
    let lead = s.eigenvalues[mode.indices[0]];
    let (r, theta) = (lead.norm(), lead.arg());
    let new_r = edit.radius.map_or(r, |e| e.apply(r));
    if !(new_r.is_finite() && new_r >= 0.0) {
        return Err(AnalysisError::InvalidEdit(format!("radius {new_r} must be finite and nonnegative")));
    }
    let mut values = s.eigenvalues.clone();
    if mode.is_pair() {
        let new_theta = edit.angle.map_or(theta, |e| e.apply(theta));
        if !new_theta.is_finite() {
            return Err(AnalysisError::InvalidEdit("angle must be finite".into()));
        }
        let z = Complex64::from_polar(new_r, new_theta);
        values[mode.indices[0]] = z;
        values[mode.indices[1]] = z.conj();
    } else {
        if edit.angle.is_some() {
            return Err(AnalysisError::AngleOnReal(edit.pair));
        }
        values[mode.indices[0]] = Complex64::new(if lead.re < 0.0 { -new_r } else { new_r }, 0.0);
    }
    Ok(values)
}

pub fn manipulate(k: &Matrix, edit: &Manipulation) -> Result<Manipulated, AnalysisError> {
    let s = spectrum(k)?;
    let values = edited_values(&s, edit)?;
    let r = s.reconstruct(&values)?;
    Ok(Manipulated { k: r.k, eigenvalues: values, trusted: r.trusted, condition_number: r.condition_number })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stability {
    pub spectral_radius: f64,
    pub stable: bool,
}

pub fn stability(k: &Matrix) -> Result<Stability, AnalysisError> {
    let rho = eig(k)?.values.first().map_or(0.0, |l| l.norm());
    Ok(Stability { spectral_radius: rho, stable: rho <= 1.0 + STABILITY_TOL })
}

/// Mean distance of the minimum-cost matching between two eigenvalue
/// sets of equal size.
pub fn eigenvalue_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len(), "eigenvalue sets differ in size");
    if a.is_empty() {
        return 0.0;
    }
    let cost: Vec<Vec<f64>> = a.iter().map(|x| b.iter().map(|y| (x - y).norm()).collect()).collect();
    let assign = min_cost_assignment(&cost);
    assign.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>() / a.len() as f64
}

pub fn spectra_distance(k1: &Matrix, k2: &Matrix) -> Result<f64, AnalysisError> {
    if k1.shape() != k2.shape() {
        return Err(AnalysisError::InvalidEdit(format!("operators differ in shape: {:?} vs {:?}", k1.shape(), k2.shape())));
    }
    Ok(eigenvalue_distance(&eig(k1)?.values, &eig(k2)?.values))
}
