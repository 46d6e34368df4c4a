//! Atomic frequency comb stage.
//!
//! The comb is a row of Gaussian absorption teeth spaced by Delta. Light
//! absorbed by the comb re-emerges as an echo after 1/Delta; a control pulse
//! pair moves the excitation to the spin transition and back, adding the spin
//! storage time T_S.
//!
//! The forward-retrieval efficiency d^2 exp(-d) exp(-d0) with d = d_total/F
//! is the standard AFC expression from the earlier AFC literature. It is the
//! one closed-form ingredient in the chain that is not computed here from
//! first principles.

use std::f64::consts::{LN_2, PI};
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{BlochVector, CoherenceAmplitude, DetuningDistribution, SpinEnsemble};
use crate::error::{Error, Result};
use crate::pulses::PulseSpec;
use crate::sequences::{build_sequence, rephasing_fidelity, DDSequence, SequenceKind};

/// Spectral samples per tooth FWHM.
const SAMPLES_PER_TOOTH: f64 = 20.0;

/// Spectral samples per period for a delta-tooth comb.
const SAMPLES_PER_PERIOD: f64 = 200.0;

/// Default control-pulse dead time as a fraction of 1/Delta.
pub const DEFAULT_DEAD_TIME_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombConfig {
    /// Tooth spacing Delta, Hz.
    pub periodicity: f64,
    /// Delta / tooth FWHM. `f64::INFINITY` gives delta-function teeth.
    pub finesse: f64,
    /// Total comb width, Hz.
    pub comb_width: f64,
    /// Per-pass peak absorbance.
    pub optical_depth: f64,
    pub passes: u32,
    pub background_depth: f64,
}

impl CombConfig {
    pub fn validate(&self) -> Result<()> {
        self.diagnostics()
            .into_iter()
            .next()
            .map_or(Ok(()), |(_, m)| Err(Error::InvalidArgument(m)))
    }

    /// Every violated constraint as (field, message).
    pub fn diagnostics(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if !(self.periodicity > 0.0) {
            out.push((
                "periodicity",
                format!(
                    "CombConfig.periodicity must be > 0 (got {})",
                    self.periodicity
                ),
            ));
        }
        if !(self.finesse > 1.0) {
            out.push((
                "finesse",
                format!("CombConfig.finesse must be > 1 (got {})", self.finesse),
            ));
        }
        if !(self.comb_width >= 3.0 * self.periodicity) {
            out.push((
                "comb_width",
                format!(
                    "CombConfig.comb_width must be >= 3 x periodicity = {} Hz (got {})",
                    3.0 * self.periodicity,
                    self.comb_width
                ),
            ));
        }
        if !(self.optical_depth > 0.0) {
            out.push((
                "optical_depth",
                format!(
                    "CombConfig.optical_depth must be > 0 (got {})",
                    self.optical_depth
                ),
            ));
        }
        if !(1..=2).contains(&self.passes) {
            out.push((
                "passes",
                format!("CombConfig.passes must be 1 or 2 (got {})", self.passes),
            ));
        }
        if !(self.background_depth >= 0.0) {
            out.push((
                "background_depth",
                format!(
                    "CombConfig.background_depth must be >= 0 (got {})",
                    self.background_depth
                ),
            ));
        }
        out
    }

    pub fn afc_delay(&self) -> f64 {
        1.0 / self.periodicity
    }

    pub fn peak_depth(&self) -> f64 {
        self.optical_depth * self.passes as f64
    }

    /// Effective comb depth d_total / F.
    pub fn effective_depth(&self) -> f64 {
        self.peak_depth() / self.finesse
    }

    pub fn tooth_fwhm(&self) -> f64 {
        self.periodicity / self.finesse
    }

    /// Tooth centers, symmetric about zero.
    pub fn tooth_centers(&self) -> Vec<f64> {
        let half = (0.5 * self.comb_width / self.periodicity + 1e-9).floor() as i64;
        (-half..=half)
            .map(|k| k as f64 * self.periodicity)
            .collect()
    }

    /// Fraction of input light taken up by the comb, 1 - exp(-d_eff).
    pub fn absorption(&self) -> f64 {
        1.0 - (-self.effective_depth()).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CombSpectrum {
    pub frequencies: Vec<f64>,
    /// Tooth absorbance only.
    pub tooth_depth: Vec<f64>,
    pub background_depth: f64,
    pub tooth_centers: Vec<f64>,
}

impl CombSpectrum {
    pub fn depth(&self, i: usize) -> f64 {
        self.tooth_depth[i] + self.background_depth
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "frequency_hz,depth")?;
        for (i, f) in self.frequencies.iter().enumerate() {
            writeln!(w, "{},{}", f, self.depth(i))?;
        }
        Ok(())
    }
}

/// Samples the absorption profile of the comb.
pub fn build_comb(cfg: &CombConfig) -> Result<CombSpectrum> {
    cfg.validate()?;
    let centers = cfg.tooth_centers();
    let edge = *centers.last().expect("at least three teeth");
    let (step, pad) = if cfg.finesse.is_finite() {
        let g = cfg.tooth_fwhm();
        (g / SAMPLES_PER_TOOTH, 4.0 * g)
    } else {
        (cfg.periodicity / SAMPLES_PER_PERIOD, 0.5 * cfg.periodicity)
    };
    let n = (2.0 * (edge + pad) / step).round() as usize + 1;
    let frequencies: Vec<f64> = (0..n).map(|i| -(edge + pad) + step * i as f64).collect();

    let mut tooth_depth: Vec<f64> = if cfg.finesse.is_finite() {
        let g = cfg.tooth_fwhm();
        let a = 4.0 * LN_2 / (g * g);
        frequencies
            .par_iter()
            .map(|f| centers.iter().map(|c| (-a * (f - c) * (f - c)).exp()).sum())
            .collect()
    } else {
        // Teeth land exactly on grid points.
        frequencies
            .iter()
            .map(|f| {
                let k = f / cfg.periodicity;
                if (k - k.round()).abs() * SAMPLES_PER_PERIOD < 0.5
                    && k.round().abs() <= (centers.len() / 2) as f64
                {
                    1.0
                } else {
                    0.0
                }
            })
            .collect()
    };
    let peak = tooth_depth.iter().cloned().fold(0.0, f64::max);
    let scale = cfg.peak_depth() / peak;
    tooth_depth.iter_mut().for_each(|d| *d *= scale);

    Ok(CombSpectrum {
        frequencies,
        tooth_depth,
        background_depth: cfg.background_depth,
        tooth_centers: centers,
    })
}

/// Normalized Fourier response of the sampled tooth distribution,
/// sum_j n_j exp(-2 pi i f_j t) / sum_j n_j.
pub fn spectrum_response(spec: &CombSpectrum, t: f64) -> CoherenceAmplitude {
    let norm: f64 = spec.tooth_depth.iter().sum();
    let sum = spec
        .frequencies
        .iter()
        .zip(&spec.tooth_depth)
        .filter(|(_, d)| **d > 0.0)
        .fold(Complex64::new(0.0, 0.0), |acc, (f, d)| {
            acc + Complex64::from_polar(*d, -2.0 * PI * f * t)
        });
    (sum / norm).into()
}

pub fn afc_echo_amplitude(cfg: &CombConfig, t: f64) -> Result<CoherenceAmplitude> {
    if !(t >= 0.0) {
        return Err(Error::invalid(format!("echo time must be >= 0 (got {t})")));
    }
    Ok(spectrum_response(&build_comb(cfg)?, t))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EchoTrace {
    pub times: Vec<f64>,
    pub amplitudes: Vec<f64>,
}

impl EchoTrace {
    /// Time of the largest amplitude.
    pub fn argmax(&self) -> (f64, f64) {
        self.times
            .iter()
            .zip(&self.amplitudes)
            .fold((0.0, f64::NEG_INFINITY), |best, (t, a)| {
                if *a > best.1 {
                    (*t, *a)
                } else {
                    best
                }
            })
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "time_s,amplitude")?;
        for (t, a) in self.times.iter().zip(&self.amplitudes) {
            writeln!(w, "{},{}", t, a)?;
        }
        Ok(())
    }
}

/// |echo amplitude| on `n` evenly spaced times over [t_start, t_end].
pub fn echo_trace(cfg: &CombConfig, t_start: f64, t_end: f64, n: usize) -> Result<EchoTrace> {
    if !(t_start >= 0.0 && t_end > t_start && n >= 2) {
        return Err(Error::invalid(
            "echo trace needs 0 <= t_start < t_end and n >= 2",
        ));
    }
    let spec = build_comb(cfg)?;
    let dt = (t_end - t_start) / (n - 1) as f64;
    let times: Vec<f64> = (0..n).map(|i| t_start + dt * i as f64).collect();
    let amplitudes = times
        .par_iter()
        .map(|t| spectrum_response(&spec, *t).magnitude())
        .collect();
    Ok(EchoTrace { times, amplitudes })
}

/// Echo intensity relative to the input at t = 1/Delta.
pub fn echo_dephasing_factor(cfg: &CombConfig) -> Result<f64> {
    Ok(afc_echo_amplitude(cfg, cfg.afc_delay())?
        .magnitude()
        .powi(2))
}

/// Forward-retrieval AFC efficiency d^2 exp(-d) exp(-d0) times the echo
/// dephasing factor.
pub fn afc_efficiency(cfg: &CombConfig) -> Result<f64> {
    let d = cfg.effective_depth();
    Ok(d * d * (-d).exp() * (-cfg.background_depth).exp() * echo_dephasing_factor(cfg)?)
}

/// exp(-(t / tau)^exponent), an effective spin-storage loss fitted to data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StretchedExp {
    pub tau: f64,
    pub exponent: f64,
}

impl StretchedExp {
    pub fn factor(&self, t: f64) -> f64 {
        (-(t / self.tau).powf(self.exponent)).exp()
    }
}

fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    // y = a - c x; returns (a, c, sse)
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let a = my - slope * mx;
    let sse = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - a - slope * x).powi(2))
        .sum();
    (a, -slope, sse)
}

/// Least-squares fit of ln y = ln A - (t/tau)^beta. Returns (A, decay).
pub fn fit_stretched_exponential(points: &[(f64, f64)]) -> Result<(f64, StretchedExp)> {
    if points.len() < 3 {
        return Err(Error::Calibration(
            "stretched-exponential fit needs >= 3 points".into(),
        ));
    }
    if points.iter().any(|(t, y)| !(*t > 0.0 && *y > 0.0)) {
        return Err(Error::Calibration("fit points need t > 0 and y > 0".into()));
    }
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let sse = |beta: f64| {
        let xs: Vec<f64> = points.iter().map(|p| p.0.powf(beta)).collect();
        linear_fit(&xs, &ys)
    };
    // Coarse scan, then golden-section refinement around the best node.
    let (lo_b, hi_b, nodes) = (0.3, 5.0, 471);
    let h = (hi_b - lo_b) / (nodes - 1) as f64;
    let best = (0..nodes)
        .map(|i| lo_b + h * i as f64)
        .min_by(|a, b| sse(*a).2.total_cmp(&sse(*b).2))
        .expect("nodes > 0");
    let (mut a, mut b) = ((best - h).max(lo_b), (best + h).min(hi_b));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if sse(c).2 < sse(d).2 {
            b = d;
        } else {
            a = c;
        }
    }
    let beta = 0.5 * (a + b);
    let (ln_amp, c, _) = sse(beta);
    if !(c > 0.0) {
        return Err(Error::Calibration("fitted decay is not decreasing".into()));
    }
    Ok((
        ln_amp.exp(),
        StretchedExp {
            tau: c.powf(-1.0 / beta),
            exponent: beta,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryModel {
    pub comb: CombConfig,
    /// Optical-to-spin transfer probability per control pulse.
    pub conversion_efficiency: f64,
    pub spin_line: DetuningDistribution,
    /// `None` stores without any decoupling pulses.
    pub sequence_kind: Option<SequenceKind>,
    pub readout_loss: f64,
    /// Fitted effective spin-storage loss; a calibration artifact.
    pub spin_decay: Option<StretchedExp>,
    pub t2: Option<f64>,
    /// Grid size of the stratified spin line used for the rephasing factor.
    pub line_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EfficiencyBreakdown {
    pub afc: f64,
    pub conversion_squared: f64,
    pub rephasing_squared: f64,
    pub spin_decay: f64,
    pub readout: f64,
    pub eta: f64,
}

impl MemoryModel {
    pub fn validate(&self) -> Result<()> {
        self.comb.validate()?;
        self.spin_line.validate()?;
        for (name, p) in [
            (
                "MemoryModel.conversion_efficiency",
                self.conversion_efficiency,
            ),
            ("MemoryModel.readout_loss", self.readout_loss),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!(
                    "{name} must lie in [0, 1] (got {p})"
                )));
            }
        }
        if self.line_samples == 0 {
            return Err(Error::invalid("MemoryModel.line_samples must be >= 1"));
        }
        Ok(())
    }

    /// Control-pulse transfer that makes absorption x transfer equal `write_stage`.
    pub fn conversion_for_write_stage(comb: &CombConfig, write_stage: f64) -> Result<f64> {
        comb.validate()?;
        let eta_c = write_stage / comb.absorption();
        if !(0.0..=1.0).contains(&eta_c) {
            return Err(Error::Calibration(format!(
                "write stage {write_stage} needs control transfer {eta_c:.4} > 1 at comb absorption {:.4}",
                comb.absorption()
            )));
        }
        Ok(eta_c)
    }

    /// The decoupling sequence used during storage `t_s`.
    pub fn storage_sequence(&self, t_s: f64, pulse: &PulseSpec) -> Result<DDSequence> {
        let seq = match self.sequence_kind {
            None => DDSequence::free(t_s)?,
            Some(kind) => build_sequence(kind, t_s, pulse)?,
        };
        if seq.pulse_count() % 2 != 0 {
            return Err(Error::Domain(format!(
                "storage sequence has {} pulses; an even count is needed to return to |s>",
                seq.pulse_count()
            )));
        }
        Ok(seq)
    }

    /// Spin-storage amplitude factor |A(t_s)| on the stratified line.
    pub fn rephasing_amplitude(&self, t_s: f64, pulse: &PulseSpec) -> Result<f64> {
        let ens = SpinEnsemble::stratified(&self.spin_line, self.line_samples)?
            .with_uniform_state(BlochVector::transverse(0.0));
        let seq = self.storage_sequence(t_s, pulse)?;
        rephasing_fidelity(&ens, &seq, 0, self.t2)
    }

    pub fn breakdown(&self, t_s: f64, pulse: &PulseSpec) -> Result<EfficiencyBreakdown> {
        self.validate()?;
        let afc = afc_efficiency(&self.comb)?;
        let conversion_squared = self.conversion_efficiency.powi(2);
        let rephasing_squared = self.rephasing_amplitude(t_s, pulse)?.powi(2);
        let spin_decay = self.spin_decay.map_or(1.0, |d| d.factor(t_s));
        let readout = 1.0 - self.readout_loss;
        Ok(EfficiencyBreakdown {
            afc,
            conversion_squared,
            rephasing_squared,
            spin_decay,
            readout,
            eta: afc * conversion_squared * rephasing_squared * spin_decay * readout,
        })
    }

    /// Readout loss that makes the chain produce `target` at `t_s`.
    pub fn calibrate_readout_loss(&self, t_s: f64, pulse: &PulseSpec, target: f64) -> Result<f64> {
        let lossless = MemoryModel {
            readout_loss: 0.0,
            ..self.clone()
        };
        let eta = memory_efficiency(&lossless, t_s, pulse)?;
        let loss = 1.0 - target / eta;
        if !(0.0..=1.0).contains(&loss) {
            return Err(Error::Calibration(format!(
                "target efficiency {target} exceeds the lossless chain value {eta:.5}"
            )));
        }
        Ok(loss)
    }
}

/// End-to-end memory efficiency eta(t_s).
pub fn memory_efficiency(model: &MemoryModel, t_s: f64, pulse: &PulseSpec) -> Result<f64> {
    Ok(model.breakdown(t_s, pulse)?.eta)
}

/// Mean spin-wave excitation after writing `mu_in` photons.
pub fn spinwave_excitation(mu_in: f64, model: &MemoryModel) -> Result<f64> {
    if !(mu_in >= 0.0) {
        return Err(Error::invalid(format!(
            "mean photon number must be >= 0 (got {mu_in})"
        )));
    }
    Ok(mu_in * model.comb.absorption() * model.conversion_efficiency)
}

/// Time in integer picoseconds so that the timeline sums are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Picos(pub u64);

impl Picos {
    pub fn from_secs(s: f64) -> Result<Self> {
        if !(s >= 0.0) || !s.is_finite() {
            return Err(Error::invalid(format!(
                "time must be finite and >= 0 (got {s})"
            )));
        }
        Ok(Picos((s * 1e12).round() as u64))
    }

    pub fn secs(&self) -> f64 {
        self.0 as f64 * 1e-12
    }
}

impl std::ops::Add for Picos {
    type Output = Picos;
    fn add(self, o: Picos) -> Picos {
        Picos(self.0 + o.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeSlot {
    pub input: Picos,
    pub output: Picos,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryTimeline {
    pub afc_delay: Picos,
    pub t_s: Picos,
    pub total: Picos,
    pub usable_window: Picos,
    pub mode_slots: Vec<ModeSlot>,
}

/// Schedules `n_modes` back-to-back input modes, each stored for 1/Delta + t_s.
/// The usable input window is 1/Delta minus the control-pulse dead time.
pub fn memory_timeline(
    delta: f64,
    t_s: f64,
    n_modes: usize,
    mode_duration: f64,
    dead_time_fraction: f64,
) -> Result<MemoryTimeline> {
    if !(delta > 0.0) {
        return Err(Error::invalid(format!(
            "periodicity must be > 0 (got {delta})"
        )));
    }
    if n_modes == 0 {
        return Err(Error::invalid("n_modes must be >= 1"));
    }
    if !(0.0..1.0).contains(&dead_time_fraction) {
        return Err(Error::invalid(format!(
            "dead_time_fraction must lie in [0, 1) (got {dead_time_fraction})"
        )));
    }
    let afc_delay = Picos::from_secs(1.0 / delta)?;
    let t_s = Picos::from_secs(t_s)?;
    let mode = Picos::from_secs(mode_duration)?;
    if mode.0 == 0 {
        return Err(Error::invalid("mode_duration must be > 0"));
    }
    let dead = Picos::from_secs(dead_time_fraction * afc_delay.secs())?;
    let usable = Picos(afc_delay.0 - dead.0.min(afc_delay.0));
    let requested = Picos(mode.0 * n_modes as u64);
    if requested > usable {
        return Err(Error::Capacity {
            constraint: "multimode window (1/Delta minus control-pulse dead time)",
            requested: requested.secs(),
            available: usable.secs(),
        });
    }
    let total = afc_delay + t_s;
    let mode_slots = (0..n_modes as u64)
        .map(|i| {
            let input = Picos(i * mode.0);
            ModeSlot {
                input,
                output: input + total,
            }
        })
        .collect();
    Ok(MemoryTimeline {
        afc_delay,
        t_s,
        total,
        usable_window: usable,
        mode_slots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::LineShape;

    pub(crate) fn comb(finesse: f64) -> CombConfig {
        CombConfig {
            periodicity: 100e3,
            finesse,
            comb_width: 2e6,
            optical_depth: 2.6,
            passes: 2,
            background_depth: 0.1,
        }
    }

    fn model() -> MemoryModel {
        let c = comb(4.0);
        MemoryModel {
            comb: c,
            conversion_efficiency: MemoryModel::conversion_for_write_stage(&c, 0.5).unwrap(),
            spin_line: DetuningDistribution {
                shape: LineShape::Gaussian,
                fwhm: 27e3,
            },
            sequence_kind: Some(SequenceKind::Xy4),
            readout_loss: 0.2,
            spin_decay: None,
            t2: None,
            line_samples: 401,
        }
    }

    #[test]
    fn tooth_count_and_depth() {
        let spec = build_comb(&comb(10.0)).unwrap();
        assert_eq!(spec.tooth_centers.len(), 21);
        assert_eq!(spec.tooth_centers[10], 0.0);
        let peak = spec.tooth_depth.iter().cloned().fold(0.0, f64::max);
        assert!((peak - 5.2).abs() < 1e-12);
    }

    #[test]
    fn invalid_comb_configs() {
        let mut c = comb(0.5);
        assert!(build_comb(&c).is_err());
        c = comb(4.0);
        c.comb_width = 250e3;
        assert!(build_comb(&c).is_err());
        c = comb(4.0);
        c.optical_depth = 0.0;
        assert!(c.validate().is_err());
        c.passes = 3;
        assert_eq!(c.diagnostics().len(), 2);
    }

    #[test]
    fn echo_at_zero_and_dirac_limit() {
        let a = afc_echo_amplitude(&comb(10.0), 0.0).unwrap();
        assert!((a.magnitude() - 1.0).abs() < 1e-12);
        let c = comb(f64::INFINITY);
        let at_echo = afc_echo_amplitude(&c, c.afc_delay()).unwrap();
        assert!((at_echo.magnitude() - 1.0).abs() < 1e-9);
        assert!(afc_echo_amplitude(&c, -1e-6).is_err());
    }

    #[test]
    fn dephasing_factor_finesse_ten() {
        let f = echo_dephasing_factor(&comb(10.0)).unwrap();
        let approx = (-7.0f64 / 100.0).exp();
        assert!((f / approx - 1.0).abs() < 0.05, "factor {f}");
    }

    #[test]
    fn efficiency_scales_with_conversion_squared() {
        let pulse = PulseSpec::pi(0.0);
        let m = model();
        let e1 = memory_efficiency(&m, 0.5e-3, &pulse).unwrap();
        let half = MemoryModel {
            conversion_efficiency: m.conversion_efficiency / 2.0,
            ..m.clone()
        };
        let e2 = memory_efficiency(&half, 0.5e-3, &pulse).unwrap();
        assert!((e2 / e1 - 0.25).abs() < 1e-12);
        let zero = MemoryModel {
            conversion_efficiency: 0.0,
            ..m
        };
        assert_eq!(memory_efficiency(&zero, 0.5e-3, &pulse).unwrap(), 0.0);
    }

    #[test]
    fn readout_calibration_round_trips() {
        let pulse = PulseSpec::pi(0.0);
        let m = model();
        let loss = m.calibrate_readout_loss(0.25e-3, &pulse, 0.05).unwrap();
        let cal = MemoryModel {
            readout_loss: loss,
            ..m.clone()
        };
        assert!((memory_efficiency(&cal, 0.25e-3, &pulse).unwrap() - 0.05).abs() < 1e-12);
        assert!(m.calibrate_readout_loss(0.25e-3, &pulse, 0.9).is_err());
    }

    #[test]
    fn spinwave_excitation_is_linear() {
        let m = model();
        assert!((spinwave_excitation(2.0, &m).unwrap() - 1.0).abs() < 1e-12);
        assert!((spinwave_excitation(1.1, &m).unwrap() - 0.55).abs() < 1e-12);
        assert_eq!(spinwave_excitation(0.0, &m).unwrap(), 0.0);
        assert!(spinwave_excitation(-1.0, &m).is_err());
    }

    #[test]
    fn write_stage_above_absorption_fails() {
        let mut c = comb(4.0);
        c.optical_depth = 0.1;
        assert!(MemoryModel::conversion_for_write_stage(&c, 0.5).is_err());
    }

    #[test]
    fn stretched_exp_fit_recovers_parameters() {
        let truth = StretchedExp {
            tau: 0.8e-3,
            exponent: 1.4,
        };
        let pts: Vec<(f64, f64)> = [0.2e-3, 0.5e-3, 0.9e-3, 1.3e-3, 1.6e-3]
            .iter()
            .map(|t| (*t, 0.07 * truth.factor(*t)))
            .collect();
        let (a, fit) = fit_stretched_exponential(&pts).unwrap();
        assert!((a / 0.07 - 1.0).abs() < 1e-6);
        assert!((fit.tau / truth.tau - 1.0).abs() < 1e-6);
        assert!((fit.exponent - truth.exponent).abs() < 1e-6);
    }

    #[test]
    fn timeline_single_mode() {
        let tl = memory_timeline(100e3, 0.5e-3, 1, 1.6e-6, DEFAULT_DEAD_TIME_FRACTION).unwrap();
        assert_eq!(tl.total, Picos(510_000_000));
        assert_eq!(
            tl.mode_slots[0].output.0 - tl.mode_slots[0].input.0,
            tl.total.0
        );
        assert_eq!(tl.usable_window, Picos(8_000_000));
    }

    #[test]
    fn timeline_capacity() {
        assert!(memory_timeline(100e3, 0.5e-3, 5, 1.6e-6, DEFAULT_DEAD_TIME_FRACTION).is_ok());
        let err =
            memory_timeline(100e3, 0.5e-3, 6, 1.6e-6, DEFAULT_DEAD_TIME_FRACTION).unwrap_err();
        assert!(matches!(err, Error::Capacity { .. }));
        let err = memory_timeline(100e3, 0.5e-3, 1, 9e-6, DEFAULT_DEAD_TIME_FRACTION).unwrap_err();
        assert!(err.to_string().contains("multimode window"));
        assert!(memory_timeline(100e3, 0.5e-3, 0, 1e-6, 0.2).is_err());
    }
}
