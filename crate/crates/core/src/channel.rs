//! Complex-baseband channel simulation.
//!
//! `Y = H·X + N` for the AWGN, LEO Rician, LEO Rayleigh and inter-satellite
//! (line-of-sight only) channels, plus the single-tap time-frequency
//! response with Doppler and delay phase rotation.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;

use crate::math::{powf, sqrt};
use crate::rng::standard_normal;
use crate::{ComplexSample, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChannelKind {
    Awgn,
    LeoRician,
    LeoRayleigh,
    Isl,
}

impl ChannelKind {
    pub const fn name(self) -> &'static str {
        match self {
            ChannelKind::Awgn => "awgn",
            ChannelKind::LeoRician => "rician",
            ChannelKind::LeoRayleigh => "rayleigh",
            ChannelKind::Isl => "isl",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "awgn" => Some(ChannelKind::Awgn),
            "rician" => Some(ChannelKind::LeoRician),
            "rayleigh" => Some(ChannelKind::LeoRayleigh),
            "isl" => Some(ChannelKind::Isl),
            _ => None,
        }
    }
}

/// One draw of the channel state for a frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelRealization {
    pub gain: ComplexSample,
    pub noise_variance: f64,
    pub doppler_hz: f64,
    pub delay_s: f64,
    pub kind: ChannelKind,
}

impl ChannelRealization {
    pub fn awgn(noise_variance: f64) -> Self {
        Self {
            gain: ComplexSample::new(1.0, 0.0),
            noise_variance,
            doppler_hz: 0.0,
            delay_s: 0.0,
            kind: ChannelKind::Awgn,
        }
    }

    /// The gain seen at `(t, f)` after Doppler/delay rotation.
    pub fn response_at(&self, t: f64, f: f64) -> ComplexSample {
        time_frequency_response(self.gain, t, f, self.doppler_hz, self.delay_s)
    }
}

/// Circularly-symmetric complex Gaussian with unit total variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> ComplexSample {
    let s = core::f64::consts::FRAC_1_SQRT_2;
    let re = standard_normal(rng);
    let im = standard_normal(rng);
    ComplexSample::new(s * re, s * im)
}

fn check_rician(rician_factor: f64, zeta_linear: f64) -> Result<()> {
    if !(rician_factor >= 0.0) {
        return Err(Error::param("rician_factor", rician_factor));
    }
    if !(zeta_linear > 0.0) {
        return Err(Error::param("zeta_linear", zeta_linear));
    }
    Ok(())
}

/// `sqrt(Rζ/(R+1))·f̄ + sqrt(ζ/(R+1))·f̃` with `f̄ = e^{j·los_phase}`.
///
/// An infinite Rician factor yields the deterministic LoS term. The NLoS
/// draw is consumed in every case so the stream stays aligned across `R`.
pub fn sample_rician_gain<R: Rng + ?Sized>(
    rician_factor: f64,
    zeta_linear: f64,
    los_phase: f64,
    rng: &mut R,
) -> Result<ComplexSample> {
    check_rician(rician_factor, zeta_linear)?;
    let nlos = complex_gaussian(rng);
    Ok(rician_from_nlos(rician_factor, zeta_linear, los_phase, nlos))
}

pub(crate) fn rician_from_nlos(r: f64, zeta: f64, los_phase: f64, nlos: ComplexSample) -> ComplexSample {
    if r.is_infinite() {
        return ComplexSample::from_polar(sqrt(zeta), los_phase);
    }
    let los = ComplexSample::from_polar(1.0, los_phase);
    los * sqrt(r * zeta / (r + 1.0)) + nlos * sqrt(zeta / (r + 1.0))
}

/// Line-of-sight-only inter-satellite gain `sqrt(Rζ/(R+1))·f̄`.
///
/// Carries only the `R/(R+1)` power fraction of `ζ`; there is no NLoS term
/// and no renormalization, so `R = 0` gives a zero gain.
pub fn sample_isl_gain(rician_factor: f64, zeta_linear: f64, los_phase: f64) -> Result<ComplexSample> {
    check_rician(rician_factor, zeta_linear)?;
    let los = ComplexSample::from_polar(1.0, los_phase);
    Ok(los * sqrt(rician_factor * zeta_linear / (rician_factor + 1.0)))
}

/// `H(t,f) = gain · exp(j·2π·(t·v − f·τ))`.
pub fn time_frequency_response(
    gain: ComplexSample,
    t: f64,
    f: f64,
    doppler_hz: f64,
    delay_s: f64,
) -> ComplexSample {
    let cycles = t * doppler_hz - f * delay_s;
    gain * ComplexSample::from_polar(1.0, 2.0 * PI * cycles)
}

/// `σ² = P / 10^(PSNR/10)`: average symbol power over total complex noise
/// variance, measured at the demodulator input.
pub fn noise_variance_from_psnr(psnr_db: f64, signal_power: f64) -> f64 {
    signal_power / powf(10.0, psnr_db / 10.0)
}

/// `Y_i = H·X_i + N_i`, `N_i ~ CN(0, σ²)`. AWGN realizations always use `H = 1`.
pub fn apply_channel<R: Rng + ?Sized>(
    symbols: &[ComplexSample],
    realization: &ChannelRealization,
    rng: &mut R,
) -> Vec<ComplexSample> {
    let h = match realization.kind {
        ChannelKind::Awgn => ComplexSample::new(1.0, 0.0),
        _ => realization.gain,
    };
    let sigma = sqrt(realization.noise_variance);
    symbols
        .iter()
        .map(|&x| {
            let n = complex_gaussian(rng);
            h * x + n * sigma
        })
        .collect()
}

/// How often the fading gain is redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FadingMode {
    /// One gain per transmitted frame.
    #[default]
    Block,
    /// Independent gain per symbol.
    PerSymbol,
}

/// Parameters for drawing realizations of one link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelModel {
    pub kind: ChannelKind,
    pub rician_factor: f64,
    /// Large-scale gain `ζ` (linear). Sweeps normalize to 1 so that the
    /// PSNR axis refers to the demodulator input.
    pub zeta_linear: f64,
    pub los_phase: f64,
    pub doppler_hz: f64,
    pub delay_s: f64,
    pub fading: FadingMode,
}

impl ChannelModel {
    pub fn new(kind: ChannelKind) -> Self {
        Self {
            kind,
            rician_factor: 2.8,
            zeta_linear: 1.0,
            los_phase: 0.0,
            doppler_hz: 0.0,
            delay_s: 0.0,
            fading: FadingMode::Block,
        }
    }

    pub fn with_rician_factor(mut self, r: f64) -> Self {
        self.rician_factor = r;
        self
    }

    /// Draws a gain. Rician and Rayleigh consume the same NLoS sample, so
    /// two models fed identical streams see paired fades.
    pub fn sample_gain<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ComplexSample> {
        match self.kind {
            ChannelKind::Awgn => Ok(ComplexSample::new(1.0, 0.0)),
            ChannelKind::LeoRician => {
                sample_rician_gain(self.rician_factor, self.zeta_linear, self.los_phase, rng)
            }
            ChannelKind::LeoRayleigh => sample_rician_gain(0.0, self.zeta_linear, self.los_phase, rng),
            ChannelKind::Isl => sample_isl_gain(self.rician_factor, self.zeta_linear, self.los_phase),
        }
    }

    pub fn realize<R: Rng + ?Sized>(&self, noise_variance: f64, rng: &mut R) -> Result<ChannelRealization> {
        if !(noise_variance >= 0.0) {
            return Err(Error::param("noise_variance", noise_variance));
        }
        Ok(ChannelRealization {
            gain: self.sample_gain(rng)?,
            noise_variance,
            doppler_hz: self.doppler_hz,
            delay_s: self.delay_s,
            kind: self.kind,
        })
    }

    /// Sends `symbols` through the link and returns `(received, gain)` pairs,
    /// the gain being what a coherent receiver equalizes with.
    pub fn transmit<R: Rng + ?Sized>(
        &self,
        symbols: &[ComplexSample],
        noise_variance: f64,
        rng: &mut R,
    ) -> Result<Vec<(ComplexSample, ComplexSample)>> {
        match self.fading {
            FadingMode::Block => {
                let real = self.realize(noise_variance, rng)?;
                let y = apply_channel(symbols, &real, rng);
                Ok(y.into_iter().map(|y| (y, real.gain)).collect())
            }
            FadingMode::PerSymbol => symbols
                .iter()
                .map(|&x| {
                    let real = self.realize(noise_variance, rng)?;
                    let y = apply_channel(&[x], &real, rng)[0];
                    Ok((y, real.gain))
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn mean_power(r: f64, n: usize, seed: u64) -> f64 {
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|_| sample_rician_gain(r, 1.0, 0.0, &mut rng).unwrap().norm_sqr())
            .sum::<f64>()
            / n as f64
    }

    #[test]
    fn rician_zero_is_scaled_nlos() {
        let mut a = rng_from_seed(5);
        let mut b = rng_from_seed(5);
        let g = sample_rician_gain(0.0, 4.0, 0.3, &mut a).unwrap();
        let f = complex_gaussian(&mut b);
        assert!((g - f * 2.0).norm() < 1e-15);
    }

    #[test]
    fn huge_rician_factor_is_deterministic_los() {
        let mut rng = rng_from_seed(1);
        for _ in 0..1000 {
            let g = sample_rician_gain(1e9, 1.0, 0.0, &mut rng).unwrap();
            assert!((g.norm() - 1.0).abs() < 2e-4);
        }
    }

    #[test]
    fn rician_mean_power_is_zeta() {
        for (r, seed) in [(0.0, 11), (2.8, 12), (10.0, 13)] {
            let p = mean_power(r, 100_000, seed);
            assert!((p - 1.0).abs() < 0.02, "R={r}: {p}");
        }
    }

    #[test]
    fn negative_rician_factor_rejected() {
        let mut rng = rng_from_seed(0);
        assert!(sample_rician_gain(-0.1, 1.0, 0.0, &mut rng).is_err());
        assert!(sample_isl_gain(-1.0, 1.0, 0.0).is_err());
        assert!(sample_rician_gain(1.0, 0.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn isl_gain_as_printed() {
        assert_eq!(sample_isl_gain(0.0, 1.0, 0.0).unwrap(), ComplexSample::new(0.0, 0.0));
        let g = sample_isl_gain(2.8, 1.0, 0.0).unwrap();
        assert!((g.norm_sqr() - 2.8 / 3.8).abs() < 1e-15);
        assert_eq!(g, sample_isl_gain(2.8, 1.0, 0.0).unwrap());
    }

    #[test]
    fn time_frequency_rotation() {
        let g = ComplexSample::new(0.6, -0.8);
        assert_eq!(time_frequency_response(g, 0.0, 0.0, 123.0, 4e-3), g);
        // t·v − f·τ = 0.25 → multiply by j.
        let h = time_frequency_response(g, 0.5, 0.0, 0.5, 0.0);
        let j = ComplexSample::new(0.0, 1.0);
        assert!((h - g * j).norm() < 1e-15);
        for &(t, f) in &[(0.1, 2e6), (3.7, 1.5e9), (1e-3, 0.0)] {
            let h = time_frequency_response(g, t, f, 512.3, 2.1e-3);
            assert!((h.norm() - g.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_identity_and_awgn_forcing() {
        let xs = [ComplexSample::new(1.0, 2.0), ComplexSample::new(-0.5, 0.25)];
        let mut rng = rng_from_seed(2);
        assert_eq!(apply_channel(&xs, &ChannelRealization::awgn(0.0), &mut rng), xs.to_vec());
        let mut bogus = ChannelRealization::awgn(0.0);
        bogus.gain = ComplexSample::new(3.0, 3.0);
        assert_eq!(apply_channel(&xs, &bogus, &mut rng), xs.to_vec());
    }

    #[test]
    fn noise_power_matches_variance() {
        let n = 1_000_000;
        let xs = alloc::vec![ComplexSample::new(0.0, 0.0); n];
        let mut rng = rng_from_seed(77);
        let y = apply_channel(&xs, &ChannelRealization::awgn(1.0), &mut rng);
        let p = y.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
        assert!((p - 1.0).abs() < 0.01, "{p}");
    }

    #[test]
    fn channel_is_reproducible() {
        let xs = [ComplexSample::new(1.0, 0.0); 64];
        let m = ChannelModel::new(ChannelKind::LeoRician);
        let a = m.transmit(&xs, 0.3, &mut rng_from_seed(9)).unwrap();
        let b = m.transmit(&xs, 0.3, &mut rng_from_seed(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn psnr_to_noise_variance() {
        assert_eq!(noise_variance_from_psnr(0.0, 1.0), 1.0);
        assert!((noise_variance_from_psnr(12.0, 1.0) - 0.063_095_734_448_019_33).abs() < 1e-15);
        assert!((noise_variance_from_psnr(10.0, 2.0) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in [ChannelKind::Awgn, ChannelKind::LeoRician, ChannelKind::LeoRayleigh, ChannelKind::Isl] {
            assert_eq!(ChannelKind::from_name(k.name()), Some(k));
        }
    }
}
