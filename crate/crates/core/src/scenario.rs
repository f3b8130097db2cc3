//! Channel ensembles, the near-field indirect-harvesting geometry and the
//! rectifier conversion-efficiency model.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{compose_indirect, ChannelRealization, ComplexGain};

/// `n` iid `CN(0, 1)` gains (real and imaginary parts each of variance 1/2).
pub fn generate_iid_channel(n: usize, sigma: f64, rng: &mut impl Rng) -> Result<ChannelRealization> {
    if n == 0 {
        return Err(Error::InvalidArgument("channel needs n >= 1 elements".into()));
    }
    let gains = (0..n)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re, im) * FRAC_1_SQRT_2
        })
        .collect();
    ChannelRealization::new(gains, sigma)
}

/// Planar surface on `z = 0`, centered at the origin, with `lambda/2` pitch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryScenario {
    pub wavelength: f64,
    pub rows: usize,
    pub cols: usize,
    pub tx_position: [f64; 3],
    pub rx_position: [f64; 3],
    pub transmit_power: f64,
}

impl Default for GeometryScenario {
    fn default() -> Self {
        Self {
            wavelength: 0.125,
            rows: 16,
            cols: 16,
            tx_position: [0.0, -3.0, 4.0],
            rx_position: [0.0, 1.0, 2.0],
            transmit_power: 1.0,
        }
    }
}

impl GeometryScenario {
    /// Default scene with a `side x side` surface.
    pub fn square(side: usize) -> Self {
        Self {
            rows: side,
            cols: side,
            ..Self::default()
        }
    }

    pub fn n_elements(&self) -> usize {
        self.rows * self.cols
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return Err(Error::Geometry(format!(
                "wavelength must be > 0, got {}",
                self.wavelength
            )));
        }
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Geometry("element grid is empty".into()));
        }
        if !(self.transmit_power > 0.0) {
            return Err(Error::Geometry(format!(
                "transmit power must be > 0, got {}",
                self.transmit_power
            )));
        }
        if self.tx_position.iter().chain(&self.rx_position).any(|v| !v.is_finite()) {
            return Err(Error::Geometry("positions must be finite".into()));
        }
        Ok(())
    }

    /// Element centers, row-major starting from the most negative corner
    /// (`x` varies fastest).
    pub fn element_positions(&self) -> Vec<[f64; 3]> {
        let pitch = self.wavelength / 2.0;
        let x0 = -(self.cols as f64 - 1.0) / 2.0;
        let y0 = -(self.rows as f64 - 1.0) / 2.0;
        (0..self.rows)
            .flat_map(|r| {
                (0..self.cols).map(move |c| [(x0 + c as f64) * pitch, (y0 + r as f64) * pitch, 0.0])
            })
            .collect()
    }

    /// Composite channel `z_n = sqrt(P_t) h_n g_n`, noiseless.
    pub fn channel(&self) -> Result<ChannelRealization> {
        let (h, g) = near_field_gains(self)?;
        compose_indirect(&h, &g, self.transmit_power)
    }
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Free-space link `(lambda / (4 pi d)) exp(-j 2 pi d / lambda)`.
pub fn free_space_gain(d: f64, wavelength: f64) -> ComplexGain {
    Complex64::from_polar(wavelength / (4.0 * PI * d), -2.0 * PI * d / wavelength)
}

/// Per-element source-to-element `h` and element-to-receiver `g` gains with
/// exact spherical spreading. Polarization and element patterns are ignored.
pub fn near_field_gains(scenario: &GeometryScenario) -> Result<(Vec<ComplexGain>, Vec<ComplexGain>)> {
    scenario.validate()?;
    let lambda = scenario.wavelength;
    let mut h = Vec::with_capacity(scenario.n_elements());
    let mut g = Vec::with_capacity(scenario.n_elements());
    for p in scenario.element_positions() {
        let dt = distance(&scenario.tx_position, &p);
        let dr = distance(&p, &scenario.rx_position);
        if dt <= 0.0 || dr <= 0.0 {
            return Err(Error::Geometry(format!(
                "element at {p:?} coincides with the source or receiver"
            )));
        }
        h.push(free_space_gain(dt, lambda));
        g.push(free_space_gain(dr, lambda));
    }
    Ok((h, g))
}

/// Sigmoidal rectifier model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarvesterModel {
    pub a: f64,
    /// Watts.
    pub b: f64,
    /// Output saturation power, watts.
    pub p_sat: f64,
}

impl Default for HarvesterModel {
    fn default() -> Self {
        Self {
            a: 30.0,
            b: 0.07,
            p_sat: 0.1,
        }
    }
}

impl HarvesterModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.b > 0.0 && self.p_sat > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "harvester parameters must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// DC output `eta(x) x`; zero for `x = 0`. Evaluated without the `x / x`
    /// so that it is monotone and capped at `p_sat` in floating point too.
    pub fn harvested_power(&self, x: f64) -> Result<f64> {
        if x == 0.0 {
            return Ok(0.0);
        }
        conversion_efficiency(x, self)?;
        let (s0, sx) = sigmoids(x, self);
        Ok(self.p_sat * (sx - s0) / (1.0 - s0))
    }
}

/// `eta(x) = P_sat (sigm(x) - sigm(0)) / (x (1 - sigm(0)))` with
/// `sigm(x) = 1 / (1 + exp(-a (x - b)))`.
pub fn conversion_efficiency(x: f64, model: &HarvesterModel) -> Result<f64> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "conversion efficiency needs input power x > 0, got {x}"
        )));
    }
    let (s0, sx) = sigmoids(x, model);
    Ok(model.p_sat * (sx - s0) / (x * (1.0 - s0)))
}

fn sigmoids(x: f64, model: &HarvesterModel) -> (f64, f64) {
    let s0 = 1.0 / (1.0 + (model.a * model.b).exp());
    let sx = 1.0 / (1.0 + (-model.a * (x - model.b)).exp());
    (s0, sx)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * (w * 1e3).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{stream_rng, StreamPurpose};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn iid_ensemble_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ch = generate_iid_channel(1_000_000, 0.0, &mut rng).unwrap();
        let n = ch.len() as f64;
        let energy: f64 = ch.gains().iter().map(|z| z.norm_sqr()).sum::<f64>() / n;
        assert!((energy - 1.0).abs() < 0.01);
        let mean: Complex64 = ch.gains().iter().sum::<Complex64>() / n;
        // each component has variance 1/2
        let se = (0.5 / n).sqrt();
        assert!(mean.re.abs() < 3.0 * se && mean.im.abs() < 3.0 * se);
    }

    #[test]
    fn iid_reproducible_and_rejects_empty() {
        let a = generate_iid_channel(8, 0.1, &mut stream_rng(5, 3, StreamPurpose::Channel)).unwrap();
        let b = generate_iid_channel(8, 0.1, &mut stream_rng(5, 3, StreamPurpose::Channel)).unwrap();
        assert_eq!(a, b);
        assert!(generate_iid_channel(0, 0.1, &mut stream_rng(5, 3, StreamPurpose::Channel)).is_err());
    }

    #[test]
    fn free_space_examples() {
        let l = 0.125;
        let h = free_space_gain(l, l);
        assert!((h.norm() - 1.0 / (4.0 * PI)).abs() < 1e-15);
        assert!(crate::signal::wrap_to_pi(h.arg()).abs() < 1e-12);
        assert!((free_space_gain(2.0, l).norm() * 2.0 - free_space_gain(1.0, l).norm()).abs() < 1e-15);
        let d = 1.234;
        let shift = free_space_gain(d + l, l).arg() - free_space_gain(d, l).arg();
        assert!(crate::signal::wrap_to_pi(shift).abs() < 1e-9);
    }

    #[test]
    fn grid_layout() {
        let s = GeometryScenario {
            rows: 2,
            cols: 3,
            ..GeometryScenario::default()
        };
        let p = s.element_positions();
        let q = 0.0625;
        assert_eq!(p.len(), 6);
        assert_eq!(p[0], [-q, -q / 2.0, 0.0]);
        assert_eq!(p[1], [0.0, -q / 2.0, 0.0]);
        assert_eq!(p[5], [q, q / 2.0, 0.0]);
        // 16 x 16 at lambda / 2 spans 1 m
        let big = GeometryScenario::square(16).element_positions();
        assert!((big[255][0] - big[0][0] - 15.0 * q).abs() < 1e-12);
    }

    #[test]
    fn near_field_matches_independent_loop() {
        let s = GeometryScenario::square(16);
        let (h, g) = near_field_gains(&s).unwrap();
        let lambda = 0.125;
        let mut k = 0;
        for iy in 0..16 {
            for ix in 0..16 {
                let x = (ix as f64 - 7.5) * lambda / 2.0;
                let y = (iy as f64 - 7.5) * lambda / 2.0;
                let dt = (x * x + (y + 3.0).powi(2) + 16.0).sqrt();
                let dr = (x * x + (y - 1.0).powi(2) + 4.0).sqrt();
                let wt = Complex64::new(0.0, -2.0 * PI * dt / lambda).exp() * (lambda / (4.0 * PI * dt));
                let wr = Complex64::new(0.0, -2.0 * PI * dr / lambda).exp() * (lambda / (4.0 * PI * dr));
                assert!((h[k] - wt).norm() < 1e-15);
                assert!((g[k] - wr).norm() < 1e-15);
                k += 1;
            }
        }
    }

    #[test]
    fn geometry_errors() {
        let mut s = GeometryScenario::square(2);
        s.rx_position = s.element_positions()[3];
        assert!(matches!(near_field_gains(&s), Err(Error::Geometry(_))));
        let s = GeometryScenario { wavelength: 0.0, ..GeometryScenario::default() };
        assert!(near_field_gains(&s).is_err());
        let s = GeometryScenario { rows: 0, ..GeometryScenario::default() };
        assert!(near_field_gains(&s).is_err());
    }

    #[test]
    fn efficiency_values() {
        let m = HarvesterModel::default();
        assert!((conversion_efficiency(0.07, &m).unwrap() - 0.626_816_836_962_155_7).abs() < 1e-12);
        assert!((m.harvested_power(10.0).unwrap() - 0.1).abs() < 1e-6);
        assert_eq!(m.harvested_power(0.0).unwrap(), 0.0);
        assert!(conversion_efficiency(0.0, &m).is_err());
        assert!(conversion_efficiency(-1.0, &m).is_err());
        let x = 0.05;
        assert!((m.harvested_power(x).unwrap() - conversion_efficiency(x, &m).unwrap() * x).abs() < 1e-16);
    }

    #[test]
    fn harvested_power_monotone_and_bounded() {
        let m = HarvesterModel::default();
        let mut last = 0.0;
        for i in 1..=10_000 {
            let x = 10.0 * i as f64 / 10_000.0;
            let p = m.harvested_power(x).unwrap();
            assert!(p >= last && p <= m.p_sat);
            last = p;
        }
    }

    #[test]
    fn dbm_conversion() {
        assert!((watts_to_dbm(0.1) - 20.0).abs() < 1e-12);
        assert!((watts_to_dbm(1e-3)).abs() < 1e-12);
    }
}
