//! Physical quantities and the received-power measurement model.
//!
//! The harvester observes `Y = |sum_n z_n exp(j theta_n) + W|^2` where `z_n`
//! lumps the transmit power and the channel through element `n`, `theta_n` is
//! the adjustable phase of that element and `W ~ CN(0, sigma^2)` is receiver
//! noise. Everything is in linear units (watts); dB only appears at the CLI.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Complex channel coefficient of one element (dimensionless).
pub type ComplexGain = Complex64;

/// Reduces an angle to `[0, 2pi)`.
#[inline]
pub fn canonical_phase(angle: f64) -> f64 {
    let r = angle.rem_euclid(TAU);
    // rem_euclid rounds tiny negative inputs up to exactly 2pi
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Signed angular difference `a - b` folded into `(-pi, pi]`.
#[inline]
pub fn wrap_to_pi(angle: f64) -> f64 {
    let r = canonical_phase(angle);
    if r > std::f64::consts::PI {
        r - TAU
    } else {
        r
    }
}

/// One realization of the channel seen by the harvester.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    gains: Vec<ComplexGain>,
    noise_sigma: f64,
    transmit_power: f64,
}

impl ChannelRealization {
    pub fn new(gains: Vec<ComplexGain>, noise_sigma: f64) -> Result<Self> {
        Self::with_transmit_power(gains, noise_sigma, 1.0)
    }

    pub fn with_transmit_power(
        gains: Vec<ComplexGain>,
        noise_sigma: f64,
        transmit_power: f64,
    ) -> Result<Self> {
        if gains.is_empty() {
            return Err(Error::InvalidArgument(
                "channel needs at least one element".into(),
            ));
        }
        if gains.iter().any(|g| !g.re.is_finite() || !g.im.is_finite()) {
            return Err(Error::InvalidArgument("channel gains must be finite".into()));
        }
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise sigma must be finite and >= 0, got {noise_sigma}"
            )));
        }
        if !(transmit_power > 0.0 && transmit_power.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "transmit power must be > 0, got {transmit_power}"
            )));
        }
        Ok(Self {
            gains,
            noise_sigma,
            transmit_power,
        })
    }

    pub fn gains(&self) -> &[ComplexGain] {
        &self.gains
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn transmit_power(&self) -> f64 {
        self.transmit_power
    }

    /// Same gains, different noise level.
    pub fn with_noise_sigma(&self, noise_sigma: f64) -> Result<Self> {
        Self::with_transmit_power(self.gains.clone(), noise_sigma, self.transmit_power)
    }

    /// `(sum_n |z_n|)^2`, the largest noiseless power any configuration reaches.
    pub fn max_power(&self) -> f64 {
        let s: f64 = self.gains.iter().map(|z| z.norm()).sum();
        s * s
    }

    /// Phases `-arg(z_n)` that co-phase every element (full-CSI configuration).
    pub fn genie_phases(&self) -> PhaseVector {
        PhaseVector::from_radians(self.gains.iter().map(|z| -z.arg()).collect())
    }
}

/// RIS configuration; every entry is kept in `[0, 2pi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseVector(Vec<f64>);

impl PhaseVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    /// Builds a vector from arbitrary angles, reducing each into `[0, 2pi)`.
    pub fn from_radians(phases: Vec<f64>) -> Self {
        Self(phases.into_iter().map(canonical_phase).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, n: usize) -> f64 {
        self.0[n]
    }

    pub fn set(&mut self, n: usize, angle: f64) {
        self.0[n] = canonical_phase(angle);
    }

    /// Adds `delta` to element `n` and re-canonicalizes.
    pub fn rotate(&mut self, n: usize, delta: f64) {
        self.set(n, self.0[n] + delta);
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().copied()
    }
}

/// Finite alphabet of realizable phase shifts (`|Omega| >= 3`).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePhaseSet(Vec<f64>);

impl DiscretePhaseSet {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "a discrete phase set needs at least 3 values, got {}",
                values.len()
            )));
        }
        for &v in &values {
            if !(0.0..TAU).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "discrete phase {v} is outside [0, 2pi)"
                )));
            }
        }
        for (i, a) in values.iter().enumerate() {
            if values[i + 1..].iter().any(|b| b == a) {
                return Err(Error::InvalidArgument(format!(
                    "discrete phase {a} appears more than once"
                )));
            }
        }
        Ok(Self(values))
    }

    /// `k` equally spaced phases starting at 0 (k-PSK alphabet).
    pub fn uniform(k: usize) -> Result<Self> {
        Self::new((0..k).map(|i| TAU * i as f64 / k as f64).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, phase: f64) -> bool {
        self.index_of(phase).is_some()
    }

    pub fn index_of(&self, phase: f64) -> Option<usize> {
        self.0.iter().position(|&w| w == phase)
    }
}

fn check_len(channel: &ChannelRealization, phases: &PhaseVector) -> Result<()> {
    if channel.len() != phases.len() {
        return Err(Error::Dimension {
            expected: channel.len(),
            actual: phases.len(),
        });
    }
    Ok(())
}

/// Complex field `sum_n z_n exp(j theta_n)` at the harvester.
pub fn received_field(channel: &ChannelRealization, phases: &PhaseVector) -> Result<Complex64> {
    check_len(channel, phases)?;
    Ok(channel
        .gains
        .iter()
        .zip(phases.iter())
        .map(|(z, t)| z * Complex64::from_polar(1.0, t))
        .sum())
}

/// `f(theta) = |sum_n z_n exp(j theta_n)|^2`.
pub fn received_power_noiseless(channel: &ChannelRealization, phases: &PhaseVector) -> Result<f64> {
    Ok(received_field(channel, phases)?.norm_sqr())
}

/// Independent random streams derived from one experiment seed.
///
/// Each `(seed, trial, purpose)` triple maps to its own ChaCha stream, so a
/// trial's draws never depend on which other trials ran or in what order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    Channel = 0,
    Noise = 1,
    Algorithm = 2,
    InitialPhases = 3,
}

pub fn stream_rng(seed: u64, trial: u64, purpose: StreamPurpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((trial << 2) | purpose as u64);
    rng
}

/// Per-trial source of measurement noise.
///
/// Exactly one complex Gaussian is consumed per measurement, so the noise on
/// measurement `k` of a trial is fixed by `(seed, trial, k)`.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    draws: u64,
}

impl NoiseStream {
    pub fn new(seed: u64, trial: u64) -> Self {
        Self {
            rng: stream_rng(seed, trial, StreamPurpose::Noise),
            draws: 0,
        }
    }

    /// Draws `W ~ CN(0, sigma^2)` (real and imaginary parts each `N(0, sigma^2/2)`).
    pub fn next_complex(&mut self, sigma: f64) -> Complex64 {
        let re: f64 = StandardNormal.sample(&mut self.rng);
        let im: f64 = StandardNormal.sample(&mut self.rng);
        self.draws += 1;
        Complex64::new(re, im) * (sigma / std::f64::consts::SQRT_2)
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }
}

/// `|sum_n z_n exp(j theta_n) + W|^2` with a fresh noise draw.
pub fn received_power_noisy(
    channel: &ChannelRealization,
    phases: &PhaseVector,
    noise: &mut NoiseStream,
) -> Result<f64> {
    let field = received_field(channel, phases)?;
    let w = noise.next_complex(channel.noise_sigma);
    Ok((field + w).norm_sqr())
}

/// Realized average SNR per element, `sum_n |z_n|^2 / (N sigma^2)` (linear).
pub fn average_snr(channel: &ChannelRealization) -> Result<f64> {
    if channel.noise_sigma == 0.0 {
        return Err(Error::UndefinedSnr);
    }
    let energy: f64 = channel.gains.iter().map(|z| z.norm_sqr()).sum();
    Ok(energy / (channel.len() as f64 * channel.noise_sigma * channel.noise_sigma))
}

/// Indirect harvesting: `z_n = sqrt(P_t) h_n g_n`.
pub fn compose_indirect(
    h: &[ComplexGain],
    g: &[ComplexGain],
    transmit_power: f64,
) -> Result<ChannelRealization> {
    if h.len() != g.len() {
        return Err(Error::Dimension {
            expected: h.len(),
            actual: g.len(),
        });
    }
    if !(transmit_power > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "transmit power must be > 0, got {transmit_power}"
        )));
    }
    let amp = transmit_power.sqrt();
    let gains = h.iter().zip(g).map(|(h, g)| h * g * amp).collect();
    ChannelRealization::with_transmit_power(gains, 0.0, transmit_power)
}

/// Direct harvesting: `z_n = sqrt(P_t) h_n`.
pub fn compose_direct(h: &[ComplexGain], transmit_power: f64) -> Result<ChannelRealization> {
    let ones = vec![Complex64::new(1.0, 0.0); h.len()];
    compose_indirect(h, &ones, transmit_power)
}

/// Noise amplitude that gives `snr_db` for the given mean per-element energy.
pub fn sigma_for_snr_db(mean_element_energy: f64, snr_db: f64) -> f64 {
    (mean_element_energy / 10f64.powf(snr_db / 10.0)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn aligned_pair_gives_four() {
        let ch = ChannelRealization::new(vec![c(1.0, 0.0), c(0.0, 1.0)], 0.0).unwrap();
        let p = received_power_noiseless(&ch, &PhaseVector::from_radians(vec![0.0, 1.5 * PI]))
            .unwrap();
        assert!((p - 4.0).abs() < 1e-12);
    }

    #[test]
    fn opposite_pair_cancels() {
        let ch = ChannelRealization::new(vec![c(1.0, 0.0), c(-1.0, 0.0)], 0.0).unwrap();
        let p = received_power_noiseless(&ch, &PhaseVector::zeros(2)).unwrap();
        assert!(p.abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_is_dimension_error() {
        let ch = ChannelRealization::new(vec![c(1.0, 0.0)], 0.0).unwrap();
        let err = received_power_noiseless(&ch, &PhaseVector::zeros(2)).unwrap_err();
        assert_eq!(err, Error::Dimension { expected: 1, actual: 2 });
        let mut noise = NoiseStream::new(0, 0);
        assert!(received_power_noisy(&ch, &PhaseVector::zeros(3), &mut noise).is_err());
    }

    #[test]
    fn zero_noise_matches_noiseless() {
        let ch = ChannelRealization::new(vec![c(0.3, -1.2), c(0.7, 0.1), c(-0.4, 0.9)], 0.0)
            .unwrap();
        let ph = PhaseVector::from_radians(vec![0.1, 2.0, 4.0]);
        let mut noise = NoiseStream::new(9, 1);
        let a = received_power_noisy(&ch, &ph, &mut noise).unwrap();
        let b = received_power_noiseless(&ch, &ph).unwrap();
        assert_eq!(a, b);
        assert_eq!(noise.draws(), 1);
    }

    #[test]
    fn noise_stream_is_deterministic() {
        let ch = ChannelRealization::new(vec![c(1.0, 0.5), c(-0.2, 0.3)], 0.7).unwrap();
        let ph = PhaseVector::from_radians(vec![0.4, 1.1]);
        let mut a = NoiseStream::new(42, 3);
        let mut b = NoiseStream::new(42, 3);
        for _ in 0..5 {
            assert_eq!(
                received_power_noisy(&ch, &ph, &mut a).unwrap(),
                received_power_noisy(&ch, &ph, &mut b).unwrap()
            );
        }
        let mut other_trial = NoiseStream::new(42, 4);
        assert_ne!(a.next_complex(1.0), other_trial.next_complex(1.0));
    }

    #[test]
    fn snr_examples() {
        let ch = ChannelRealization::new(vec![c(1.0, 0.0), c(1.0, 0.0)], 1.0).unwrap();
        assert!((average_snr(&ch).unwrap() - 1.0).abs() < 1e-15);
        let ch = ChannelRealization::new(vec![c(3.0, 0.0)], 1.0).unwrap();
        assert!((average_snr(&ch).unwrap() - 9.0).abs() < 1e-15);
        let ch = ChannelRealization::new(vec![c(3.0, 0.0)], 0.0).unwrap();
        assert_eq!(average_snr(&ch), Err(Error::UndefinedSnr));
    }

    #[test]
    fn compose_examples() {
        let ch = compose_indirect(&[c(1.0, 0.0)], &[c(1.0, 0.0)], 4.0).unwrap();
        assert_eq!(ch.gains(), &[c(2.0, 0.0)]);
        let ch = compose_indirect(&[c(0.0, 1.0)], &[c(0.0, 1.0)], 1.0).unwrap();
        assert!((ch.gains()[0] - c(-1.0, 0.0)).norm() < 1e-15);
        assert!(compose_indirect(&[c(1.0, 0.0)], &[], 1.0).is_err());
        assert!(compose_indirect(&[c(1.0, 0.0)], &[c(1.0, 0.0)], 0.0).is_err());
        let d = compose_direct(&[c(0.5, 0.5)], 4.0).unwrap();
        assert_eq!(d.gains(), &[c(1.0, 1.0)]);
    }

    #[test]
    fn channel_validation() {
        assert!(ChannelRealization::new(vec![], 0.0).is_err());
        assert!(ChannelRealization::new(vec![c(f64::NAN, 0.0)], 0.0).is_err());
        assert!(ChannelRealization::new(vec![c(1.0, 0.0)], -1.0).is_err());
    }

    #[test]
    fn canonical_phase_range() {
        assert_eq!(canonical_phase(-1e-18), 0.0);
        assert!((canonical_phase(-PI / 2.0) - 1.5 * PI).abs() < 1e-15);
        assert!((canonical_phase(7.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_to_pi(1.5 * PI) + 0.5 * PI).abs() < 1e-15);
        assert_eq!(wrap_to_pi(PI), PI);
    }

    #[test]
    fn discrete_set_validation() {
        assert!(DiscretePhaseSet::new(vec![0.0, 1.0]).is_err());
        assert!(DiscretePhaseSet::new(vec![0.0, 1.0, 1.0]).is_err());
        assert!(DiscretePhaseSet::new(vec![0.0, 1.0, TAU]).is_err());
        let qpsk = DiscretePhaseSet::uniform(4).unwrap();
        assert_eq!(qpsk.len(), 4);
        assert!(qpsk.contains(PI));
    }
}
