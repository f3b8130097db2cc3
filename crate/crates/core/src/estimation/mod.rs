//! Single-element phase estimation from `L` power probes.
//!
//! Probing one element at offsets `phi_l` while the rest of the surface is
//! fixed gives noiseless powers `y_l = a_l . x` with `a_l = [1, cos phi_l, sin phi_l]`
//! and `x = [|z0|^2 + |z|^2, 2 Re(z0 z*), 2 Im(z0 z*)]`, where `z0` is the
//! field of all other elements. The optimal shift for the element is
//! `arg(x2 + j x3)`.

mod ml;

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub use ml::{
    ml_estimate, ml_gradient, ml_objective, ml_solve, project_onto_cone, MlSettings, MlSolution,
};

/// Relative size below which `(x2, x3)` is treated as the zero vector.
pub const AMBIGUITY_TOL: f64 = 1e-12;

/// Threshold on the normalized Gram determinant `det(A^T A) / L^3`.
const SINGULAR_TOL: f64 = 1e-12;

/// Probe offsets `Phi = {phi_1, .., phi_L}`, each in `[0, 2pi)`, `L >= 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementPhaseSet(Vec<f64>);

impl MeasurementPhaseSet {
    pub fn new(offsets: Vec<f64>) -> Result<Self> {
        if offsets.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "L >= 3 measurement phases required, got {}",
                offsets.len()
            )));
        }
        if let Some(bad) = offsets.iter().find(|p| !(0.0..TAU).contains(*p)) {
            return Err(Error::InvalidArgument(format!(
                "measurement phase {bad} is outside [0, 2pi)"
            )));
        }
        Ok(Self(offsets))
    }

    /// `phi_l = rotation + 2 pi (l - 1) / L`, reduced into `[0, 2pi)`.
    pub fn equally_spaced(l: usize, rotation: f64) -> Result<Self> {
        Self::new(
            (0..l)
                .map(|i| crate::signal::canonical_phase(rotation + TAU * i as f64 / l as f64))
                .collect(),
        )
    }

    /// The `{0, pi/2, pi}` probe triple of the closed-form update.
    pub fn quadrature_triple() -> Self {
        Self(vec![0.0, PI / 2.0, PI])
    }

    pub fn offsets(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Full-rank design check. For `L = 3` this is the sign test
    /// `sin(p1 - p3) + sin(p2 - p1) + sin(p3 - p2) != 0`, which equals `det(A)`.
    pub fn is_admissible(&self) -> bool {
        if self.0.len() == 3 {
            triple_determinant(self.0[0], self.0[1], self.0[2]).abs() > 1e-12
        } else {
            let gram = gram_matrix(self);
            gram.determinant() / (self.0.len() as f64).powi(3) > SINGULAR_TOL
        }
    }
}

/// `sin(p1 - p3) + sin(p2 - p1) + sin(p3 - p2)`.
pub fn triple_determinant(p1: f64, p2: f64, p3: f64) -> f64 {
    (p1 - p3).sin() + (p2 - p1).sin() + (p3 - p2).sin()
}

/// `L x 3` matrix with rows `[1, cos phi_l, sin phi_l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix(DMatrix<f64>);

impl DesignMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    /// Noiseless probe powers `A x`.
    pub fn apply(&self, x: &XEstimate) -> Vec<f64> {
        (&self.0 * x.to_vector()).iter().copied().collect()
    }
}

/// `x = [|z0|^2 + |z|^2, 2 Re(z0 z*), 2 Im(z0 z*)]` or an estimate of it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XEstimate {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
}

impl XEstimate {
    pub fn new(x1: f64, x2: f64, x3: f64) -> Self {
        Self { x1, x2, x3 }
    }

    /// Ground truth for a two-term field `z0 + z exp(j phi)`.
    pub fn from_gains(z0: Complex64, z: Complex64) -> Self {
        let c = z0 * z.conj();
        Self::new(z0.norm_sqr() + z.norm_sqr(), 2.0 * c.re, 2.0 * c.im)
    }

    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_vec(vec![self.x1, self.x2, self.x3])
    }

    fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    /// Second-order cone membership `x1 >= sqrt(x2^2 + x3^2) - tol`.
    pub fn in_cone(&self, tol: f64) -> bool {
        self.x1 >= self.x2.hypot(self.x3) - tol
    }
}

/// Estimated optimal shift, principal value in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseEstimate(f64);

impl PhaseEstimate {
    fn from_atan2(y: f64, x: f64) -> Self {
        let t = y.atan2(x);
        // atan2(-0.0, x < 0) yields -pi
        Self(if t <= -PI { PI } else { t })
    }

    pub fn theta(self) -> f64 {
        self.0
    }
}

pub fn build_design_matrix(phi: &MeasurementPhaseSet) -> DesignMatrix {
    let l = phi.len();
    DesignMatrix(DMatrix::from_fn(l, 3, |r, c| match c {
        0 => 1.0,
        1 => phi.0[r].cos(),
        _ => phi.0[r].sin(),
    }))
}

fn gram_of(a: &DesignMatrix) -> Matrix3<f64> {
    let g = a.0.transpose() * &a.0;
    Matrix3::from_fn(|r, c| g[(r, c)])
}

/// `A^T A` assembled from the first and second circular moments of `Phi`:
/// with `r1 e^{j d1} = mean(e^{j phi})` and `r2 e^{j d2} = mean(e^{j 2 phi})`,
/// `A^T A = L [[1, r1 cos d1, r1 sin d1], [., (1 + r2 cos d2)/2, r2 sin d2 / 2], [., ., (1 - r2 cos d2)/2]]`.
pub fn gram_matrix(phi: &MeasurementPhaseSet) -> Matrix3<f64> {
    let l = phi.len() as f64;
    let m1: Complex64 = phi.0.iter().map(|&p| Complex64::from_polar(1.0, p)).sum::<Complex64>() / l;
    let m2: Complex64 =
        phi.0.iter().map(|&p| Complex64::from_polar(1.0, 2.0 * p)).sum::<Complex64>() / l;
    Matrix3::new(
        1.0,
        m1.re,
        m1.im,
        m1.re,
        0.5 * (1.0 + m2.re),
        0.5 * m2.im,
        m1.im,
        0.5 * m2.im,
        0.5 * (1.0 - m2.re),
    ) * l
}

fn invert_gram(gram: &Matrix3<f64>, l: usize) -> Result<Matrix3<f64>> {
    let det = gram.determinant();
    if !(det / (l as f64).powi(3) > SINGULAR_TOL) {
        return Err(Error::SingularDesign(format!(
            "det(A^T A) = {det:e} is numerically zero"
        )));
    }
    gram.try_inverse()
        .ok_or_else(|| Error::SingularDesign("A^T A is not invertible".into()))
}

/// `A^dagger = (A^T A)^{-1} A^T`, a `3 x L` matrix.
pub fn pseudoinverse(a: &DesignMatrix) -> Result<DMatrix<f64>> {
    let inv = invert_gram(&gram_of(a), a.rows())?;
    let inv = DMatrix::from_fn(3, 3, |r, c| inv[(r, c)]);
    Ok(inv * a.0.transpose())
}

/// Least-squares estimator with a precomputed pseudoinverse.
#[derive(Debug, Clone)]
pub struct LinearEstimator {
    pinv: DMatrix<f64>,
}

impl LinearEstimator {
    pub fn new(phi: &MeasurementPhaseSet) -> Result<Self> {
        Ok(Self {
            pinv: pseudoinverse(&build_design_matrix(phi))?,
        })
    }

    pub fn from_design(a: &DesignMatrix) -> Result<Self> {
        Ok(Self {
            pinv: pseudoinverse(a)?,
        })
    }

    pub fn probes(&self) -> usize {
        self.pinv.ncols()
    }

    pub fn estimate(&self, y: &[f64]) -> Result<XEstimate> {
        if y.len() != self.pinv.ncols() {
            return Err(Error::Dimension {
                expected: self.pinv.ncols(),
                actual: y.len(),
            });
        }
        let mut out = [0.0; 3];
        for (r, o) in out.iter_mut().enumerate() {
            *o = y.iter().enumerate().map(|(c, v)| self.pinv[(r, c)] * v).sum();
        }
        Ok(XEstimate::from_slice(&out))
    }
}

/// `x_hat = A^dagger y`, without projection onto the cone.
pub fn linear_estimate(y: &[f64], a: &DesignMatrix) -> Result<XEstimate> {
    LinearEstimator::from_design(a)?.estimate(y)
}

/// `arg(x2 + j x3)`.
pub fn phase_from_x(x: &XEstimate) -> Result<PhaseEstimate> {
    let r = x.x2.hypot(x.x3);
    if r == 0.0 || r <= AMBIGUITY_TOL * x.x1.abs() {
        return Err(Error::AmbiguousPhase);
    }
    Ok(PhaseEstimate::from_atan2(x.x3, x.x2))
}

/// `arg(sum_l y_l exp(j 2 pi (l - 1) / L))` for probes equally spaced from 0.
pub fn dft_phase_estimate(y: &[f64]) -> Result<PhaseEstimate> {
    let l = y.len();
    if l < 3 {
        return Err(Error::InvalidArgument(format!(
            "L >= 3 measurements required, got {l}"
        )));
    }
    let step = TAU / l as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    let mut scale = 0.0;
    for (i, &v) in y.iter().enumerate() {
        acc += Complex64::from_polar(v, step * i as f64);
        scale += v.abs();
    }
    if acc.norm() <= AMBIGUITY_TOL * scale {
        return Err(Error::AmbiguousPhase);
    }
    Ok(PhaseEstimate::from_atan2(acc.im, acc.re))
}

/// Exact update from probes at `0, pi/2, pi`: `arg(y1 - y3 + j (2 y2 - y1 - y3))`.
pub fn closed_form_three_phase(y1: f64, y2: f64, y3: f64) -> Result<PhaseEstimate> {
    let re = y1 - y3;
    let im = 2.0 * y2 - y1 - y3;
    let scale = y1.abs() + y2.abs() + y3.abs();
    if re.hypot(im) <= AMBIGUITY_TOL * scale {
        return Err(Error::AmbiguousPhase);
    }
    Ok(PhaseEstimate::from_atan2(im, re))
}

/// Exact MSE of the linear estimator for a given `x`:
/// `2 s^2 tr(P diag(A x)) + s^4 tr(P) + s^4` with `P = (A^dagger)^T A^dagger`.
pub fn mse_linear(a: &DesignMatrix, x: &XEstimate, sigma: f64) -> Result<f64> {
    let pinv = pseudoinverse(a)?;
    let p = pinv.transpose() * &pinv;
    let ax = a.apply(x);
    let s2 = sigma * sigma;
    let tr_p = p.trace();
    let tr_pd: f64 = ax.iter().enumerate().map(|(l, v)| p[(l, l)] * v).sum();
    Ok(2.0 * s2 * tr_pd + s2 * s2 * tr_p + s2 * s2)
}

/// `tr((A^T A)^{-1}) = sum_i 1 / d_i^2`, minimized (= 5/L) by equally spaced probes.
pub fn trace_criterion(phi: &MeasurementPhaseSet) -> Result<f64> {
    Ok(invert_gram(&gram_matrix(phi), phi.len())?.trace())
}

/// Singular values of the design matrix, descending.
pub fn design_singular_values(a: &DesignMatrix) -> [f64; 3] {
    let sv = a.0.clone().svd(false, false).singular_values;
    let mut out = [sv[0], sv[1], sv[2]];
    out.sort_by(|a, b| b.total_cmp(a));
    out
}

/// `A^{-1}` for a square three-probe design (discrete-alphabet updates).
pub fn three_probe_inverse(phi: &MeasurementPhaseSet) -> Result<Matrix3<f64>> {
    if phi.len() != 3 {
        return Err(Error::Dimension {
            expected: 3,
            actual: phi.len(),
        });
    }
    if !phi.is_admissible() {
        return Err(Error::SingularDesign(format!(
            "probe triple {:?} has sin(p1-p3)+sin(p2-p1)+sin(p3-p2) = 0",
            phi.0
        )));
    }
    let a = build_design_matrix(phi);
    Matrix3::from_fn(|r, c| a.0[(r, c)])
        .try_inverse()
        .ok_or_else(|| Error::SingularDesign("probe triple is singular".into()))
}

/// Applies a `3 x 3` inverse design to three probes.
pub fn solve_three(inv: &Matrix3<f64>, y: [f64; 3]) -> XEstimate {
    let v = inv * Vector3::new(y[0], y[1], y[2]);
    XEstimate::new(v[0], v[1], v[2])
}
