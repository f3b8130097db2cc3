//! Maximum-likelihood estimation of `x` under the noncentral chi-square
//! power model, solved by projected gradient descent on the cone
//! `x1 >= sqrt(x2^2 + x3^2)`.
//!
//! Per probe, with `s = a_l . x`, the negative log-likelihood (up to terms
//! independent of `x`) is `s / sigma^2 - ln I0(2 sqrt(s y_l) / sigma^2)`,
//! which is convex in `s` and hence in `x`.

use crate::error::{Error, Result};
use crate::special::{i1_over_u_i0, log_i0};

use super::{DesignMatrix, LinearEstimator, XEstimate};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlSettings {
    pub max_iterations: usize,
    /// Stop once `|F_k - F_{k+1}| <= rel_tol * max(|F_{k+1}|, 1)`.
    pub rel_tol: f64,
}

impl Default for MlSettings {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            rel_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlSolution {
    pub x: XEstimate,
    pub objective: f64,
    pub iterations: usize,
    /// Objective at the start point followed by every accepted iterate.
    pub history: Vec<f64>,
}

const MAX_BACKTRACKS: usize = 80;

fn probe_levels<'a>(x: &XEstimate, a: &'a DesignMatrix) -> impl Iterator<Item = (f64, f64, f64)> + 'a {
    let m = a.matrix();
    let x = *x;
    (0..m.nrows()).map(move |l| {
        let (c, s) = (m[(l, 1)], m[(l, 2)]);
        (x.x1 + c * x.x2 + s * x.x3, c, s)
    })
}

fn check(y: &[f64], a: &DesignMatrix, sigma: f64) -> Result<()> {
    if y.len() != a.rows() {
        return Err(Error::Dimension {
            expected: a.rows(),
            actual: y.len(),
        });
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "ML estimation needs sigma > 0, got {sigma}"
        )));
    }
    Ok(())
}

/// Negative log-likelihood, dropping `x`-independent terms. Probe levels are
/// clamped at zero so the value is defined slightly outside the cone.
pub fn ml_objective(x: &XEstimate, y: &[f64], a: &DesignMatrix, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    probe_levels(x, a)
        .zip(y)
        .map(|((s, _, _), &yl)| {
            let s = s.max(0.0);
            s / s2 - log_i0(2.0 * (s * yl.max(0.0)).sqrt() / s2)
        })
        .sum()
}

/// Gradient of [`ml_objective`]. Uses `d/ds ln I0(2 sqrt(s y)/s^2) =
/// (I1/(u I0))(u) * 2 y / sigma^4`, which stays finite at `s = 0`.
pub fn ml_gradient(x: &XEstimate, y: &[f64], a: &DesignMatrix, sigma: f64) -> [f64; 3] {
    let s2 = sigma * sigma;
    let s4 = s2 * s2;
    let mut g = [0.0; 3];
    for ((s, c, sn), &yl) in probe_levels(x, a).zip(y) {
        let yl = yl.max(0.0);
        let u = 2.0 * (s.max(0.0) * yl).sqrt() / s2;
        let d = 1.0 / s2 - i1_over_u_i0(u) * 2.0 * yl / s4;
        g[0] += d;
        g[1] += d * c;
        g[2] += d * sn;
    }
    g
}

/// Euclidean projection onto `{x : x1 >= ||(x2, x3)||}`.
pub fn project_onto_cone(x: &XEstimate) -> XEstimate {
    let r = x.x2.hypot(x.x3);
    if r <= x.x1 {
        *x
    } else if r <= -x.x1 {
        XEstimate::new(0.0, 0.0, 0.0)
    } else {
        let t = 0.5 * (x.x1 + r);
        XEstimate::new(t, t * x.x2 / r, t * x.x3 / r)
    }
}

/// Full solver output, including the objective trace.
pub fn ml_solve(y: &[f64], a: &DesignMatrix, sigma: f64, settings: &MlSettings) -> Result<MlSolution> {
    check(y, a, sigma)?;
    let mut x = project_onto_cone(&LinearEstimator::from_design(a)?.estimate(y)?);
    let mut f = ml_objective(&x, y, a, sigma);
    let mut history = vec![f];

    // Curvature of each term near s ~ y is about 1 / (2 sigma^2 y), so this
    // is a reasonable first step; backtracking adapts it from there.
    let mean_y = y.iter().map(|v| v.abs()).sum::<f64>() / y.len() as f64;
    let mut step = sigma * sigma * mean_y.max(sigma * sigma) / y.len() as f64;

    for iter in 1..=settings.max_iterations {
        let g = ml_gradient(&x, y, a, sigma);
        step *= 2.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let cand = project_onto_cone(&XEstimate::new(
                x.x1 - step * g[0],
                x.x2 - step * g[1],
                x.x3 - step * g[2],
            ));
            let d = [cand.x1 - x.x1, cand.x2 - x.x2, cand.x3 - x.x3];
            let fc = ml_objective(&cand, y, a, sigma);
            let lin: f64 = g.iter().zip(&d).map(|(gi, di)| gi * di).sum();
            let quad: f64 = d.iter().map(|v| v * v).sum::<f64>() / (2.0 * step);
            if fc <= f + lin + quad && fc <= f {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc)) = accepted else {
            // no step decreases the objective: stationary to machine precision
            return Ok(MlSolution {
                x,
                objective: f,
                iterations: iter,
                history,
            });
        };
        let change = f - fc;
        x = cand;
        f = fc;
        history.push(f);
        if change <= settings.rel_tol * f.abs().max(1.0) {
            return Ok(MlSolution {
                x,
                objective: f,
                iterations: iter,
                history,
            });
        }
    }
    Err(Error::SolverFailure {
        iterations: settings.max_iterations,
        best: x,
    })
}

pub fn ml_estimate(y: &[f64], a: &DesignMatrix, sigma: f64) -> Result<XEstimate> {
    ml_solve(y, a, sigma, &MlSettings::default()).map(|s| s.x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::{build_design_matrix, MeasurementPhaseSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    fn random_feasible(rng: &mut ChaCha8Rng) -> XEstimate {
        let r = rng.random_range(0.1..2.0);
        let t = rng.random_range(0.0..TAU);
        XEstimate::new(r + rng.random_range(0.05..2.0), r * t.cos(), r * t.sin())
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = build_design_matrix(&MeasurementPhaseSet::equally_spaced(3, 0.0).unwrap());
        let sigma: f64 = 0.6;
        for _ in 0..10 {
            let x = random_feasible(&mut rng);
            let y: Vec<f64> = a.apply(&x).iter().map(|v| v * rng.random_range(0.5..1.5)).collect();
            let g = ml_gradient(&x, &y, &a, sigma);
            for k in 0..3 {
                let h = 1e-6;
                let mut p = [x.x1, x.x2, x.x3];
                let mut m = p;
                p[k] += h;
                m[k] -= h;
                let fp = ml_objective(&XEstimate::new(p[0], p[1], p[2]), &y, &a, sigma);
                let fm = ml_objective(&XEstimate::new(m[0], m[1], m[2]), &y, &a, sigma);
                let fd = (fp - fm) / (2.0 * h);
                let scale = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
                assert!((fd - g[k]).abs() <= 1e-5 * scale, "k={k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn cone_projection() {
        let inside = XEstimate::new(2.0, 1.0, 1.0);
        assert_eq!(project_onto_cone(&inside), inside);
        assert_eq!(project_onto_cone(&XEstimate::new(-5.0, 1.0, 0.0)), XEstimate::new(0.0, 0.0, 0.0));
        let p = project_onto_cone(&XEstimate::new(0.0, 2.0, 0.0));
        assert!((p.x1 - 1.0).abs() < 1e-15 && (p.x2 - 1.0).abs() < 1e-15 && p.x3 == 0.0);
        // projection is idempotent and lands on the boundary
        let q = project_onto_cone(&p);
        assert_eq!(p, q);
    }

    #[test]
    fn high_snr_recovers_truth() {
        let a = build_design_matrix(&MeasurementPhaseSet::equally_spaced(3, 0.0).unwrap());
        let truth = XEstimate::new(2.0, 1.2, -0.9);
        let sigma: f64 = 1e-4;
        let y: Vec<f64> = a.apply(&truth).iter().map(|v| v + sigma * sigma).collect();
        let x = ml_estimate(&y, &a, sigma).unwrap();
        assert!((x.x1 - truth.x1).abs() < 1e-4);
        assert!((x.x2 - truth.x2).abs() < 1e-4);
        assert!((x.x3 - truth.x3).abs() < 1e-4);
    }

    #[test]
    fn feasible_and_monotone_on_noisy_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = build_design_matrix(&MeasurementPhaseSet::equally_spaced(3, 0.0).unwrap());
        for _ in 0..200 {
            let truth = random_feasible(&mut rng);
            let sigma = rng.random_range(0.1..2.0);
            let y: Vec<f64> = a
                .apply(&truth)
                .iter()
                .map(|v| (v + rng.random_range(-2.0..2.0) * sigma * sigma).max(0.0))
                .collect();
            let sol = ml_solve(&y, &a, sigma, &MlSettings::default()).unwrap();
            assert!(sol.x.in_cone(1e-9));
            assert!(sol.history.windows(2).all(|w| w[1] <= w[0]));
            let best = sol.history.iter().copied().fold(f64::INFINITY, f64::min);
            assert!((sol.objective - best).abs() <= 1e-8 * best.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = build_design_matrix(&MeasurementPhaseSet::equally_spaced(3, 0.0).unwrap());
        assert!(ml_estimate(&[1.0, 1.0, 1.0], &a, 0.0).is_err());
        assert!(matches!(
            ml_estimate(&[1.0, 1.0], &a, 1.0),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn iteration_cap_reports_best_iterate() {
        let a = build_design_matrix(&MeasurementPhaseSet::equally_spaced(3, 0.0).unwrap());
        let settings = MlSettings {
            max_iterations: 1,
            rel_tol: 0.0,
        };
        match ml_solve(&[3.0, 0.2, 1.0], &a, 1.0, &settings) {
            Err(Error::SolverFailure { iterations, best }) => {
                assert_eq!(iterations, 1);
                assert!(best.in_cone(1e-12));
            }
            other => panic!("expected solver failure, got {other:?}"),
        }
    }
}
