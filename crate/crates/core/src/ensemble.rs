//! Inhomogeneously broadened two-level spin ensemble.
//!
//! Each spin is a Bloch vector in the rotating frame of the {|g>, |s>}
//! transition, with z = +1 for |s> and z = -1 for |g>. All rotations are
//! right-handed: a positive detuning turns +x toward +y during free evolution.

use std::f64::consts::{LN_2, PI};

use nalgebra::{Rotation3, Unit, Vector3};
use num_complex::Complex64;
use rand_distr::{Cauchy, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

/// Lorentzian samples outside +-LORENTZ_CUTOFF x FWHM are redrawn.
pub const LORENTZ_CUTOFF: f64 = 50.0;

/// Half-width, in standard deviations, of the stratified Gaussian grid.
const GAUSS_GRID_SIGMAS: f64 = 6.0;

/// FWHM / sigma for a Gaussian.
pub const GAUSS_FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_4;

const COHERENCE_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineShape {
    Gaussian,
    Lorentzian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetuningDistribution {
    pub shape: LineShape,
    /// Full width at half maximum, Hz.
    pub fwhm: f64,
}

impl DetuningDistribution {
    pub fn new(shape: LineShape, fwhm: f64) -> Result<Self> {
        let d = DetuningDistribution { shape, fwhm };
        d.validate()?;
        Ok(d)
    }

    pub fn gaussian(fwhm: f64) -> Result<Self> {
        Self::new(LineShape::Gaussian, fwhm)
    }

    pub fn lorentzian(fwhm: f64) -> Result<Self> {
        Self::new(LineShape::Lorentzian, fwhm)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fwhm > 0.0) || !self.fwhm.is_finite() {
            return Err(Error::invalid(format!(
                "DetuningDistribution.fwhm must be > 0 (got {})",
                self.fwhm
            )));
        }
        Ok(())
    }

    /// Gaussian standard deviation; for a Lorentzian this is the half width.
    pub fn sigma(&self) -> f64 {
        match self.shape {
            LineShape::Gaussian => self.fwhm / GAUSS_FWHM_PER_SIGMA,
            LineShape::Lorentzian => self.fwhm / 2.0,
        }
    }

    /// Unnormalized line profile, peak 1 at zero detuning.
    pub fn profile(&self, detuning: f64) -> f64 {
        let u = detuning / self.fwhm;
        match self.shape {
            LineShape::Gaussian => (-4.0 * LN_2 * u * u).exp(),
            LineShape::Lorentzian => {
                if u.abs() > LORENTZ_CUTOFF {
                    0.0
                } else {
                    1.0 / (1.0 + 4.0 * u * u)
                }
            }
        }
    }

    /// Half-span of the support used for deterministic grids.
    pub fn grid_half_span(&self) -> f64 {
        match self.shape {
            LineShape::Gaussian => GAUSS_GRID_SIGMAS * self.sigma(),
            LineShape::Lorentzian => LORENTZ_CUTOFF * self.fwhm,
        }
    }

    fn draw<R: rand::Rng>(&self, rng: &mut R) -> f64 {
        match self.shape {
            LineShape::Gaussian => Normal::new(0.0, self.sigma())
                .expect("sigma is positive")
                .sample(rng),
            LineShape::Lorentzian => {
                let cauchy = Cauchy::new(0.0, self.fwhm / 2.0).expect("scale is positive");
                loop {
                    let d = cauchy.sample(rng);
                    if d.abs() <= LORENTZ_CUTOFF * self.fwhm {
                        return d;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVector {
    pub const S: BlochVector = BlochVector {
        x: 0.0,
        y: 0.0,
        z: 1.0,
    };
    pub const G: BlochVector = BlochVector {
        x: 0.0,
        y: 0.0,
        z: -1.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        BlochVector { x, y, z }
    }

    /// Unit vector on the equator at azimuth `phase`.
    pub fn transverse(phase: f64) -> Self {
        BlochVector::new(phase.cos(), phase.sin(), 0.0)
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Population on |g>, i.e. (1 - z) / 2.
    pub fn population_g(&self) -> f64 {
        0.5 * (1.0 - self.z)
    }

    pub fn rotated(&self, rot: &Rotation3<f64>) -> Self {
        (rot * Vector3::from(*self)).into()
    }

    /// Right-handed rotation about z.
    pub fn precessed(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        BlochVector::new(c * self.x - s * self.y, s * self.x + c * self.y, self.z)
    }
}

impl From<BlochVector> for Vector3<f64> {
    fn from(b: BlochVector) -> Self {
        Vector3::new(b.x, b.y, b.z)
    }
}

impl From<Vector3<f64>> for BlochVector {
    fn from(v: Vector3<f64>) -> Self {
        BlochVector::new(v.x, v.y, v.z)
    }
}

/// Right-handed rotation by `angle` about `axis` (need not be normalized).
pub fn rotation(axis: Vector3<f64>, angle: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle)
}

/// Collective transverse amplitude, sum_i w_i (x_i - i y_i).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CoherenceAmplitude {
    pub re: f64,
    pub im: f64,
}

impl CoherenceAmplitude {
    pub fn magnitude(&self) -> f64 {
        self.re.hypot(self.im)
    }

    pub fn phase(&self) -> f64 {
        self.im.atan2(self.re)
    }
}

impl From<Complex64> for CoherenceAmplitude {
    fn from(c: Complex64) -> Self {
        CoherenceAmplitude { re: c.re, im: c.im }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpinEnsemble {
    detunings: Vec<f64>,
    states: Vec<BlochVector>,
    weights: Vec<f64>,
    seed: u64,
}

impl SpinEnsemble {
    /// Builds an ensemble from parts, checking lengths, weights and norms.
    pub fn from_parts(
        detunings: Vec<f64>,
        states: Vec<BlochVector>,
        weights: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        let n = detunings.len();
        if n == 0 {
            return Err(Error::invalid("ensemble must contain at least one spin"));
        }
        if states.len() != n || weights.len() != n {
            return Err(Error::invalid(format!(
                "ensemble arrays differ in length: detunings {}, states {}, weights {}",
                n,
                states.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("ensemble weights must be non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "ensemble weights must sum to 1 (got {total})"
            )));
        }
        if let Some(b) = states.iter().find(|b| b.norm() > 1.0 + 1e-12) {
            return Err(Error::invalid(format!(
                "Bloch vector norm exceeds 1: {}",
                b.norm()
            )));
        }
        Ok(SpinEnsemble {
            detunings,
            states,
            weights,
            seed,
        })
    }

    /// Deterministic grid over the line with profile weights. The grid
    /// spacing sets a revival time 1/spacing beyond which the discrete sum
    /// rephases spuriously.
    pub fn stratified(dist: &DetuningDistribution, n: usize) -> Result<Self> {
        dist.validate()?;
        if n == 0 {
            return Err(Error::invalid("ensemble size n must be >= 1"));
        }
        if n == 1 {
            return Self::from_parts(vec![0.0], vec![BlochVector::S], vec![1.0], 0);
        }
        let half = dist.grid_half_span();
        let step = 2.0 * half / (n - 1) as f64;
        let detunings: Vec<f64> = (0..n).map(|i| -half + step * i as f64).collect();
        let raw: Vec<f64> = detunings.iter().map(|d| dist.profile(*d)).collect();
        let total: f64 = raw.iter().sum();
        let weights = raw.into_iter().map(|w| w / total).collect();
        Self::from_parts(detunings, vec![BlochVector::S; n], weights, 0)
    }

    /// `n` spins at zero detuning in |s>, equal weights.
    pub fn resonant(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("ensemble size n must be >= 1"));
        }
        Self::from_parts(
            vec![0.0; n],
            vec![BlochVector::S; n],
            vec![1.0 / n as f64; n],
            0,
        )
    }

    /// Spins tilted by `tilt` from the |s> pole with independent uniform
    /// random azimuths drawn from `seed`.
    pub fn with_random_tilt(&self, tilt: f64, seed: u64) -> Self {
        use rand::Rng;
        let mut rng = seeds::rng(seeds::derive(seed, seeds::STREAM_INITIAL, 0));
        let (s, c) = tilt.sin_cos();
        let states = (0..self.len())
            .map(|_| {
                let phi = rng.gen::<f64>() * std::f64::consts::TAU;
                BlochVector::new(s * phi.cos(), s * phi.sin(), c)
            })
            .collect();
        self.with_states(states)
    }

    pub fn len(&self) -> usize {
        self.detunings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detunings.is_empty()
    }

    pub fn detunings(&self) -> &[f64] {
        &self.detunings
    }

    pub fn states(&self) -> &[BlochVector] {
        &self.states
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Same spins, every state replaced by `state`.
    pub fn with_uniform_state(&self, state: BlochVector) -> Self {
        SpinEnsemble {
            states: vec![state; self.len()],
            ..self.clone()
        }
    }

    /// Same spins with new states. Panics if the length differs.
    pub fn with_states(&self, states: Vec<BlochVector>) -> Self {
        assert_eq!(states.len(), self.len(), "state count must match ensemble");
        SpinEnsemble {
            states,
            ..self.clone()
        }
    }

    /// Weighted mean population on |g>.
    pub fn mean_population_g(&self) -> f64 {
        self.states
            .iter()
            .zip(&self.weights)
            .map(|(b, w)| w * b.population_g())
            .sum()
    }
}

/// Draws `n` detunings from `dist`; all spins start in |s> with equal weight.
pub fn sample_detunings(dist: &DetuningDistribution, n: usize, seed: u64) -> Result<SpinEnsemble> {
    dist.validate()?;
    if n == 0 {
        return Err(Error::invalid("ensemble size n must be >= 1"));
    }
    let mut rng = seeds::rng(seeds::derive(seed, seeds::STREAM_ENSEMBLE, 0));
    let detunings: Vec<f64> = (0..n).map(|_| dist.draw(&mut rng)).collect();
    let w = 1.0 / n as f64;
    Ok(SpinEnsemble {
        detunings,
        states: vec![BlochVector::S; n],
        weights: vec![w; n],
        seed,
    })
}

/// Free precession for `dt` seconds, with optional transverse T2 damping.
pub fn free_evolve(ens: &SpinEnsemble, dt: f64, t2: Option<f64>) -> Result<SpinEnsemble> {
    if !(dt >= 0.0) {
        return Err(Error::invalid(format!(
            "free evolution time must be >= 0 (got {dt})"
        )));
    }
    let damping = match t2 {
        Some(t2) if !(t2 > 0.0) => {
            return Err(Error::invalid(format!("t2 must be > 0 (got {t2})")))
        }
        Some(t2) => (-dt / t2).exp(),
        None => 1.0,
    };
    let states = ens
        .states
        .par_iter()
        .zip(ens.detunings.par_iter())
        .map(|(b, d)| {
            let mut out = b.precessed(2.0 * PI * d * dt);
            out.x *= damping;
            out.y *= damping;
            out
        })
        .collect();
    Ok(ens.with_states(states))
}

/// Weighted transverse amplitude. Summed in fixed-size chunks so the result
/// does not depend on the thread count.
pub fn collective_coherence(ens: &SpinEnsemble) -> CoherenceAmplitude {
    let partials: Vec<Complex64> = ens
        .states
        .par_chunks(COHERENCE_CHUNK)
        .zip(ens.weights.par_chunks(COHERENCE_CHUNK))
        .map(|(bs, ws)| {
            bs.iter()
                .zip(ws)
                .fold(Complex64::new(0.0, 0.0), |acc, (b, w)| {
                    acc + Complex64::new(w * b.x, -w * b.y)
                })
        })
        .collect();
    partials
        .into_iter()
        .fold(Complex64::new(0.0, 0.0), |a, b| a + b)
        .into()
}

/// Closed-form |A(t)| for a phased ensemble with a continuous line.
pub fn dephasing_envelope(dist: &DetuningDistribution, t: f64) -> f64 {
    let g = dist.fwhm;
    match dist.shape {
        LineShape::Gaussian => (-(PI * g * t).powi(2) / (4.0 * LN_2)).exp(),
        LineShape::Lorentzian => (-PI * g * t).exp(),
    }
}

/// 1/e time of the Gaussian envelope, 2 sqrt(ln 2) / (pi FWHM).
pub fn gaussian_t2_star(fwhm: f64) -> f64 {
    2.0 * LN_2.sqrt() / (PI * fwhm)
}
