//! Population-inversion pulses.
//!
//! Two tiers are available. [`PulseSpec`] is an instantaneous rotation with
//! a systematic angle error, optional Gaussian angle jitter and, when a Rabi
//! frequency is given, a tilted axis for off-resonant spins. [`AdiabaticPulseSpec`]
//! is a chirped pulse integrated through the Bloch equations with fixed-step RK4.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Rotation3, Vector3};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{rotation, BlochVector, DetuningDistribution};
use crate::error::{Error, Result};
use crate::seeds;

/// Fraction of an adiabatic pulse spent on each sin^2 amplitude ramp of the
/// linear-chirp envelope.
pub const LINEAR_EDGE_RAMP: f64 = 0.1;

/// sech envelope truncation: the pulse spans beta * t in [-HS_TRUNCATION, HS_TRUNCATION].
pub const HS_TRUNCATION: f64 = 5.3;

/// Default RK4 steps per pulse.
pub const DEFAULT_STEPS: usize = 5000;

/// Coarsest allowed RK4 step, as a fraction of the pulse duration.
pub const MIN_STEPS: usize = 1000;

/// Norm drift beyond which an integration is rejected.
pub const NORM_DRIFT_LIMIT: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    /// Azimuth of the rotation axis; 0 is X, pi/2 is Y.
    pub axis_phase: f64,
    pub nominal_angle: f64,
    /// Fractional angle error: the applied angle is nominal * (1 + error).
    pub systematic_error: f64,
    /// Standard deviation of the per-application fractional angle noise.
    pub jitter_sd: f64,
    /// Drive Rabi frequency in Hz. When set, off-resonant spins see a tilted
    /// axis and a longer effective rotation.
    pub rabi_frequency: Option<f64>,
}

impl Default for PulseSpec {
    fn default() -> Self {
        PulseSpec::pi(0.0)
    }
}

impl PulseSpec {
    /// Ideal pi pulse about the equatorial axis at `axis_phase`.
    pub fn pi(axis_phase: f64) -> Self {
        PulseSpec {
            axis_phase,
            nominal_angle: PI,
            systematic_error: 0.0,
            jitter_sd: 0.0,
            rabi_frequency: None,
        }
    }

    pub fn with_systematic_error(mut self, eps: f64) -> Self {
        self.systematic_error = eps;
        self
    }

    pub fn with_jitter(mut self, sd: f64) -> Self {
        self.jitter_sd = sd;
        self
    }

    pub fn with_rabi_frequency(mut self, rabi: f64) -> Self {
        self.rabi_frequency = Some(rabi);
        self
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.axis_phase = phase;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nominal_angle > 0.0) {
            return Err(Error::invalid(format!(
                "PulseSpec.nominal_angle must be > 0 (got {})",
                self.nominal_angle
            )));
        }
        if !(self.jitter_sd >= 0.0) {
            return Err(Error::invalid(format!(
                "PulseSpec.jitter_sd must be >= 0 (got {})",
                self.jitter_sd
            )));
        }
        if let Some(r) = self.rabi_frequency {
            if !(r > 0.0) {
                return Err(Error::invalid(format!(
                    "PulseSpec.rabi_frequency must be > 0 (got {r})"
                )));
            }
        }
        Ok(())
    }

    /// Applied on-resonance angle for a given standard-normal jitter draw.
    pub fn angle(&self, jitter_draw: f64) -> f64 {
        self.nominal_angle * (1.0 + self.systematic_error + self.jitter_sd * jitter_draw)
    }

    /// Standard-normal jitter draw for `seed`; zero when jitter is off so no
    /// randomness is consumed.
    pub fn jitter_draw(&self, seed: u64) -> f64 {
        if self.jitter_sd == 0.0 {
            return 0.0;
        }
        let mut rng = seeds::rng(seeds::derive(seed, seeds::STREAM_JITTER, 0));
        StandardNormal.sample(&mut rng)
    }

    /// Rotation seen by a spin at `detuning` (Hz) when the on-resonance angle is `theta`.
    pub fn rotation(&self, theta: f64, detuning: f64) -> Rotation3<f64> {
        let (s, c) = self.axis_phase.sin_cos();
        match self.rabi_frequency {
            None => rotation(Vector3::new(c, s, 0.0), theta),
            Some(rabi) => {
                let eff = rabi.hypot(detuning);
                let axis = Vector3::new(rabi * c, rabi * s, detuning);
                rotation(axis, theta * eff / rabi)
            }
        }
    }
}

/// Rotates `state` by `pulse` as seen by a spin at `detuning` Hz.
pub fn apply_rotation(
    state: BlochVector,
    pulse: &PulseSpec,
    detuning: f64,
    seed: u64,
) -> BlochVector {
    let theta = pulse.angle(pulse.jitter_draw(seed));
    state.rotated(&pulse.rotation(theta, detuning))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChirpEnvelope {
    /// Linear frequency sweep at constant rate; flat amplitude with short
    /// sin^2 ramps at both ends.
    ConstantChirpLinear,
    /// sech amplitude with tanh frequency sweep.
    HyperbolicSecant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdiabaticPulseSpec {
    /// Peak Rabi frequency, Hz.
    pub peak_rabi: f64,
    /// Total swept range, Hz, centered on the line.
    pub chirp_span: f64,
    /// Seconds.
    pub duration: f64,
    pub envelope: ChirpEnvelope,
}

impl AdiabaticPulseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak_rabi >= 0.0) {
            return Err(Error::invalid(format!(
                "AdiabaticPulseSpec.peak_rabi must be >= 0 (got {})",
                self.peak_rabi
            )));
        }
        if !(self.chirp_span > 0.0) {
            return Err(Error::invalid(format!(
                "AdiabaticPulseSpec.chirp_span must be > 0 (got {})",
                self.chirp_span
            )));
        }
        if !(self.duration > 0.0) {
            return Err(Error::invalid(format!(
                "AdiabaticPulseSpec.duration must be > 0 (got {})",
                self.duration
            )));
        }
        Ok(())
    }

    /// Drive amplitude (Hz) and instantaneous chirp offset (Hz) at time `t`.
    pub fn drive(&self, t: f64) -> (f64, f64) {
        let x = t / self.duration;
        match self.envelope {
            ChirpEnvelope::ConstantChirpLinear => {
                let a = if x < LINEAR_EDGE_RAMP {
                    (FRAC_PI_2 * x / LINEAR_EDGE_RAMP).sin().powi(2)
                } else if x > 1.0 - LINEAR_EDGE_RAMP {
                    (FRAC_PI_2 * (1.0 - x) / LINEAR_EDGE_RAMP).sin().powi(2)
                } else {
                    1.0
                };
                (self.peak_rabi * a, self.chirp_span * (x - 0.5))
            }
            ChirpEnvelope::HyperbolicSecant => {
                let u = HS_TRUNCATION * (2.0 * x - 1.0);
                (self.peak_rabi / u.cosh(), 0.5 * self.chirp_span * u.tanh())
            }
        }
    }

    /// Chirp rate at the line center in rad/s^2.
    pub fn center_chirp_rate(&self) -> f64 {
        let hz_per_s = match self.envelope {
            ChirpEnvelope::ConstantChirpLinear => self.chirp_span / self.duration,
            ChirpEnvelope::HyperbolicSecant => self.chirp_span * HS_TRUNCATION / self.duration,
        };
        2.0 * PI * hz_per_s
    }

    /// pi Omega^2 / (2 k) with Omega the peak Rabi rate and k the center chirp rate.
    pub fn adiabaticity(&self) -> f64 {
        let omega = 2.0 * PI * self.peak_rabi;
        PI * omega * omega / (2.0 * self.center_chirp_rate())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorMethod {
    #[default]
    Rk4FixedStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    /// Seconds.
    pub step: f64,
    pub method: IntegratorMethod,
}

impl IntegratorConfig {
    /// duration / DEFAULT_STEPS.
    pub fn for_duration(duration: f64) -> Self {
        IntegratorConfig {
            step: duration / DEFAULT_STEPS as f64,
            method: IntegratorMethod::Rk4FixedStep,
        }
    }

    pub fn halved(&self) -> Self {
        IntegratorConfig {
            step: self.step / 2.0,
            ..*self
        }
    }

    pub fn validate(&self, duration: f64) -> Result<()> {
        if !(self.step > 0.0) {
            return Err(Error::invalid(format!(
                "IntegratorConfig.step must be > 0 (got {})",
                self.step
            )));
        }
        let coarsest = duration / MIN_STEPS as f64;
        if self.step > coarsest * (1.0 + 1e-12) {
            return Err(Error::invalid(format!(
                "IntegratorConfig.step must be <= duration/{MIN_STEPS} = {coarsest:e} s (got {:e})",
                self.step
            )));
        }
        Ok(())
    }

    fn steps(&self, duration: f64) -> usize {
        ((duration / self.step) - 1e-9).ceil().max(1.0) as usize
    }
}

/// Integrates dB/dt = W(t) x B across the pulse, where
/// W = (2 pi Omega_R(t), 0, 2 pi (detuning - chirp(t))).
pub fn integrate_bloch(
    state: BlochVector,
    pulse: &AdiabaticPulseSpec,
    detuning: f64,
    cfg: &IntegratorConfig,
) -> Result<BlochVector> {
    pulse.validate()?;
    cfg.validate(pulse.duration)?;
    let n = cfg.steps(pulse.duration);
    let h = pulse.duration / n as f64;

    let field = |t: f64| {
        let (rabi, chirp) = pulse.drive(t);
        Vector3::new(2.0 * PI * rabi, 0.0, 2.0 * PI * (detuning - chirp))
    };
    let rhs = |t: f64, b: &Vector3<f64>| field(t).cross(b);

    let start: Vector3<f64> = state.into();
    let mut b = start;
    for i in 0..n {
        let t = i as f64 * h;
        let k1 = rhs(t, &b);
        let k2 = rhs(t + 0.5 * h, &(b + 0.5 * h * k1));
        let k3 = rhs(t + 0.5 * h, &(b + 0.5 * h * k2));
        let k4 = rhs(t + h, &(b + h * k3));
        b += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }

    let drift = (b.norm() - start.norm()).abs();
    if drift > NORM_DRIFT_LIMIT {
        return Err(Error::IntegrationAccuracy {
            drift,
            limit: NORM_DRIFT_LIMIT,
        });
    }
    Ok(b.into())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InversionPulse {
    Instant(PulseSpec),
    Adiabatic(AdiabaticPulseSpec, IntegratorConfig),
}

impl InversionPulse {
    /// Final state of a spin starting in |s>. Instant pulses use no jitter.
    pub fn invert(&self, detuning: f64) -> Result<BlochVector> {
        match self {
            InversionPulse::Instant(p) => {
                p.validate()?;
                Ok(BlochVector::S.rotated(&p.rotation(p.angle(0.0), detuning)))
            }
            InversionPulse::Adiabatic(p, cfg) => integrate_bloch(BlochVector::S, p, detuning, cfg),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorProfile {
    /// (detuning Hz, probability left on the starting pole).
    pub points: Vec<(f64, f64)>,
    /// Mean over the grid weighted by the line profile.
    pub weighted_mean: f64,
}

impl ErrorProfile {
    pub fn max_error(&self) -> f64 {
        self.points.iter().map(|p| p.1).fold(0.0, f64::max)
    }

    /// Points with |detuning| <= half_width.
    pub fn within(&self, half_width: f64) -> impl Iterator<Item = &(f64, f64)> {
        self.points
            .iter()
            .filter(move |p| p.0.abs() <= half_width * (1.0 + 1e-12))
    }
}

/// Inversion error (1 + z_final)/2 on an evenly spaced grid spanning +-2 FWHM.
pub fn inversion_error_profile(
    pulse: &InversionPulse,
    dist: &DetuningDistribution,
    n_samples: usize,
) -> Result<ErrorProfile> {
    dist.validate()?;
    if n_samples < 3 {
        return Err(Error::invalid(format!(
            "inversion profile needs at least 3 samples (got {n_samples})"
        )));
    }
    let half = 2.0 * dist.fwhm;
    let step = 2.0 * half / (n_samples - 1) as f64;
    let grid: Vec<f64> = (0..n_samples).map(|i| -half + step * i as f64).collect();
    let errors: Vec<f64> = grid
        .par_iter()
        .map(|d| pulse.invert(*d).map(|b| 0.5 * (1.0 + b.z)))
        .collect::<Result<_>>()?;

    let (num, den) = grid
        .iter()
        .zip(&errors)
        .fold((0.0, 0.0), |(n, d), (det, e)| {
            let w = dist.profile(*det);
            (n + w * e, d + w)
        });
    Ok(ErrorProfile {
        points: grid.into_iter().zip(errors).collect(),
        weighted_mean: num / den,
    })
}
