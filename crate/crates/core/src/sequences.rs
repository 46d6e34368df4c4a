//! Dynamical-decoupling sequences.
//!
//! A sequence is a list of steps, each a free-evolution wait followed by an
//! optional pulse. Pulses sit at the centers of their refocusing intervals,
//! so the first and last waits are half the inter-pulse spacing.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_6};
use std::io::Write;

use nalgebra::{Rotation3, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{collective_coherence, rotation, BlochVector, SpinEnsemble};
use crate::error::{Error, Result};
use crate::pulses::PulseSpec;
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SequenceKind {
    Xx,
    Xy4,
    Xy8,
    /// Knill DD: XY-4 with every pulse replaced by a five-pulse composite. Experimental.
    Kdd,
    Custom,
}

impl SequenceKind {
    pub const BUILT_IN: [SequenceKind; 4] = [
        SequenceKind::Xx,
        SequenceKind::Xy4,
        SequenceKind::Xy8,
        SequenceKind::Kdd,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SequenceKind::Xx => "xx",
            SequenceKind::Xy4 => "xy4",
            SequenceKind::Xy8 => "xy8",
            SequenceKind::Kdd => "kdd",
            SequenceKind::Custom => "custom",
        }
    }

    /// Pulse axis phases, in order.
    pub fn phases(&self) -> Vec<f64> {
        const X: f64 = 0.0;
        const Y: f64 = FRAC_PI_2;
        match self {
            SequenceKind::Xx => vec![X, X],
            SequenceKind::Xy4 => vec![X, Y, X, Y],
            SequenceKind::Xy8 => vec![X, Y, X, Y, Y, X, Y, X],
            SequenceKind::Kdd => [X, Y, X, Y]
                .iter()
                .flat_map(|phi| {
                    [FRAC_PI_6, 0.0, FRAC_PI_2, 0.0, FRAC_PI_6].map(|offset| offset + phi)
                })
                .collect(),
            SequenceKind::Custom => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceStep {
    /// Free evolution before the pulse, seconds.
    pub wait: f64,
    pub pulse: Option<PulseSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DDSequence {
    steps: Vec<SequenceStep>,
    kind: SequenceKind,
    total_duration: f64,
}

impl DDSequence {
    pub fn custom(steps: Vec<SequenceStep>) -> Result<Self> {
        if steps.iter().any(|s| !(s.wait >= 0.0)) {
            return Err(Error::invalid("DDSequence waits must be >= 0"));
        }
        for p in steps.iter().filter_map(|s| s.pulse.as_ref()) {
            p.validate()?;
        }
        let total_duration = steps.iter().map(|s| s.wait).sum();
        Ok(DDSequence {
            steps,
            kind: SequenceKind::Custom,
            total_duration,
        })
    }

    /// Free evolution for `t_s` with no pulses.
    pub fn free(t_s: f64) -> Result<Self> {
        check_duration(t_s)?;
        Self::custom(vec![SequenceStep {
            wait: t_s,
            pulse: None,
        }])
    }

    pub fn steps(&self) -> &[SequenceStep] {
        &self.steps
    }

    pub fn kind(&self) -> SequenceKind {
        self.kind
    }

    pub fn total_duration(&self) -> f64 {
        self.total_duration
    }

    pub fn pulse_count(&self) -> usize {
        self.steps.iter().filter(|s| s.pulse.is_some()).count()
    }

    pub fn pulses(&self) -> impl Iterator<Item = &PulseSpec> {
        self.steps.iter().filter_map(|s| s.pulse.as_ref())
    }

    /// Same timing with every pulse's error parameters taken from `template`
    /// (axis phases are kept).
    pub fn with_pulse_model(&self, template: &PulseSpec) -> Self {
        let steps = self
            .steps
            .iter()
            .map(|s| SequenceStep {
                wait: s.wait,
                pulse: s.pulse.map(|p| PulseSpec {
                    axis_phase: p.axis_phase,
                    ..*template
                }),
            })
            .collect();
        DDSequence {
            steps,
            ..self.clone()
        }
    }
}

fn check_duration(t_s: f64) -> Result<()> {
    if !(t_s > 0.0) || !t_s.is_finite() {
        return Err(Error::invalid(format!(
            "DDSequence timing: t_s must be > 0 (got {t_s})"
        )));
    }
    Ok(())
}

/// Builds a built-in sequence of total length `t_s`. The template's
/// `axis_phase` is added to every pulse phase.
pub fn build_sequence(kind: SequenceKind, t_s: f64, template: &PulseSpec) -> Result<DDSequence> {
    check_duration(t_s)?;
    template.validate()?;
    if kind == SequenceKind::Custom {
        return Err(Error::invalid(
            "custom sequences are built with DDSequence::custom",
        ));
    }
    let phases = kind.phases();
    let n = phases.len();
    let gap = t_s / n as f64;
    let mut steps: Vec<SequenceStep> = phases
        .iter()
        .enumerate()
        .map(|(i, phi)| SequenceStep {
            wait: if i == 0 { 0.5 * gap } else { gap },
            pulse: Some(template.with_phase(template.axis_phase + phi)),
        })
        .collect();
    steps.push(SequenceStep {
        wait: 0.5 * gap,
        pulse: None,
    });
    Ok(DDSequence {
        steps,
        kind,
        total_duration: t_s,
    })
}

/// Per-pulse on-resonance angles, with jitter drawn from (seed, pulse index).
fn pulse_angles(seq: &DDSequence, seed: u64) -> Vec<f64> {
    seq.pulses()
        .enumerate()
        .map(|(k, p)| p.angle(p.jitter_draw(seeds::derive(seed, seeds::STREAM_JITTER, k as u64))))
        .collect()
}

fn evolve_spin(
    mut b: BlochVector,
    detuning: f64,
    seq: &DDSequence,
    angles: &[f64],
    t2: Option<f64>,
) -> BlochVector {
    let mut k = 0;
    for step in &seq.steps {
        b = b.precessed(2.0 * std::f64::consts::PI * detuning * step.wait);
        if let Some(t2) = t2 {
            let d = (-step.wait / t2).exp();
            b.x *= d;
            b.y *= d;
        }
        if let Some(p) = &step.pulse {
            b = b.rotated(&p.rotation(angles[k], detuning));
            k += 1;
        }
    }
    b
}

/// Runs the sequence on every spin. Jitter is common to all spins within a
/// pulse application and seeded by (seed, pulse index).
pub fn apply_sequence(
    ens: &SpinEnsemble,
    seq: &DDSequence,
    seed: u64,
    t2: Option<f64>,
) -> Result<SpinEnsemble> {
    if let Some(t2) = t2 {
        if !(t2 > 0.0) {
            return Err(Error::invalid(format!("t2 must be > 0 (got {t2})")));
        }
    }
    let angles = pulse_angles(seq, seed);
    let states = ens
        .states()
        .par_iter()
        .zip(ens.detunings().par_iter())
        .map(|(b, d)| evolve_spin(*b, *d, seq, &angles, t2))
        .collect();
    Ok(ens.with_states(states))
}

/// Exact single-spin propagator of the sequence at `detuning`, jitter-free.
pub fn sequence_propagator(seq: &DDSequence, detuning: f64) -> Rotation3<f64> {
    let z = Vector3::z();
    seq.steps.iter().fold(Rotation3::identity(), |acc, step| {
        let free = rotation(z, 2.0 * std::f64::consts::PI * detuning * step.wait);
        let acc = free * acc;
        match &step.pulse {
            Some(p) => p.rotation(p.angle(0.0), detuning) * acc,
            None => acc,
        }
    })
}

/// Population moved to |g> by one pass of the sequence, starting in |s>.
pub fn sequence_population_error(seq: &DDSequence, detuning: f64) -> f64 {
    BlochVector::S
        .rotated(&sequence_propagator(seq, detuning))
        .population_g()
}

/// Finds the per-pulse systematic error for which one pass of `kind`
/// (timing `t_s`, other pulse parameters from `template`) moves `target`
/// population at `detuning`. Bisection over [0, 0.5]; the error must grow
/// monotonically on that bracket, which holds on resonance.
pub fn calibrate_systematic_error(
    kind: SequenceKind,
    t_s: f64,
    template: &PulseSpec,
    target: f64,
    detuning: f64,
) -> Result<f64> {
    if !(0.0..=0.5).contains(&target) {
        return Err(Error::invalid(format!(
            "calibration target must lie in [0, 0.5] (got {target})"
        )));
    }
    let base = build_sequence(kind, t_s, template)?;
    let error_at = |eps: f64| {
        let seq = base.with_pulse_model(&template.with_systematic_error(eps));
        sequence_population_error(&seq, detuning)
    };
    let (mut lo, mut hi) = (0.0, 0.5);
    if error_at(hi) < target {
        return Err(Error::Calibration(format!(
            "{} cannot reach a per-sequence error of {target} with |eps| <= 0.5",
            kind.name()
        )));
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if error_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThermalizationCurve {
    pub n_sequences: Vec<usize>,
    pub rho_g: Vec<f64>,
}

/// Two-level mixing recursion: rho_g(N) = (1 - (1 - 2 eps)^N) / 2.
pub fn thermalization_curve(eps_seq: f64, n_max: usize) -> Result<ThermalizationCurve> {
    if !(0.0..=0.5).contains(&eps_seq) {
        return Err(Error::invalid(format!(
            "per-sequence error must lie in [0, 0.5] (got {eps_seq})"
        )));
    }
    let n_sequences: Vec<usize> = (0..=n_max).collect();
    let rho_g = n_sequences
        .iter()
        .map(|n| 0.5 * (1.0 - (1.0 - 2.0 * eps_seq).powi(*n as i32)))
        .collect();
    Ok(ThermalizationCurve { n_sequences, rho_g })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloCurve {
    pub n_sequences: Vec<usize>,
    pub rho_g: Vec<f64>,
    pub stderr: Vec<f64>,
}

fn weighted_mean_and_stderr(values: &[f64], weights: &[f64]) -> (f64, f64) {
    let mean: f64 = values.iter().zip(weights).map(|(v, w)| v * w).sum();
    let var: f64 = values
        .iter()
        .zip(weights)
        .map(|(v, w)| (w * (v - mean)).powi(2))
        .sum();
    (mean, var.sqrt())
}

/// Applies `seq` repeatedly to `ens` and records the mean |g> population.
///
/// With `randomize_frames`, every spin receives an independent random frame
/// phase before each pass, so the per-pass error adds incoherently as it does
/// for spins whose phase is scrambled between sequences. Its expectation then
/// equals the closed-form [`thermalization_curve`]. Without it the passes
/// compose coherently.
pub fn thermalization_monte_carlo(
    ens: &SpinEnsemble,
    seq: &DDSequence,
    n_max: usize,
    seed: u64,
    randomize_frames: bool,
) -> Result<MonteCarloCurve> {
    let n = ens.len();
    let mut frame_rngs: Vec<_> = (0..n)
        .map(|i| seeds::rng(seeds::derive(seed, seeds::STREAM_FRAME, i as u64)))
        .collect();
    let mut cur = ens.clone();
    let mut out = MonteCarloCurve {
        n_sequences: Vec::with_capacity(n_max + 1),
        rho_g: Vec::with_capacity(n_max + 1),
        stderr: Vec::with_capacity(n_max + 1),
    };
    let record = |cur: &SpinEnsemble, k: usize, out: &mut MonteCarloCurve| {
        let pops: Vec<f64> = cur.states().iter().map(|b| b.population_g()).collect();
        let (m, se) = weighted_mean_and_stderr(&pops, cur.weights());
        out.n_sequences.push(k);
        out.rho_g.push(m);
        out.stderr.push(se);
    };
    record(&cur, 0, &mut out);
    for k in 1..=n_max {
        let phases: Vec<f64> = if randomize_frames {
            frame_rngs
                .iter_mut()
                .map(|r| r.gen::<f64>() * std::f64::consts::TAU)
                .collect()
        } else {
            vec![0.0; n]
        };
        let framed: Vec<BlochVector> = cur
            .states()
            .iter()
            .zip(&phases)
            .map(|(b, p)| b.precessed(*p))
            .collect();
        let pass = apply_sequence(
            &cur.with_states(framed),
            seq,
            seeds::derive(seed, seeds::STREAM_JITTER, k as u64),
            None,
        )?;
        let unframed = pass
            .states()
            .iter()
            .zip(&phases)
            .map(|(b, p)| b.precessed(-p))
            .collect();
        cur = cur.with_states(unframed);
        record(&cur, k, &mut out);
    }
    Ok(out)
}

/// Writes `N,rho_g_closed_form,rho_g_monte_carlo,stderr` rows.
pub fn write_thermalization_csv<W: Write>(
    w: &mut W,
    closed: &ThermalizationCurve,
    mc: &MonteCarloCurve,
) -> std::io::Result<()> {
    writeln!(w, "N,rho_g_closed_form,rho_g_monte_carlo,stderr")?;
    for (i, n) in closed.n_sequences.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{}",
            n, closed.rho_g[i], mc.rho_g[i], mc.stderr[i]
        )?;
    }
    Ok(())
}

/// |collective coherence| after running `seq` on an ensemble that starts
/// with unit transverse coherence.
pub fn rephasing_fidelity(
    ens: &SpinEnsemble,
    seq: &DDSequence,
    seed: u64,
    t2: Option<f64>,
) -> Result<f64> {
    let out = apply_sequence(ens, seq, seed, t2)?;
    Ok(collective_coherence(&out).magnitude())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrecisionReport {
    /// 1/N: per-pulse precision needed without collective filtering.
    pub naive_bound: f64,
    pub achieved: f64,
    pub ratio: f64,
}

pub fn precision_requirement(n_spins: f64, achieved_error: f64) -> Result<PrecisionReport> {
    if !(n_spins >= 1.0) {
        return Err(Error::invalid(format!(
            "n_spins must be >= 1 (got {n_spins})"
        )));
    }
    let naive_bound = 1.0 / n_spins;
    Ok(PrecisionReport {
        naive_bound,
        achieved: achieved_error,
        ratio: achieved_error / naive_bound,
    })
}
