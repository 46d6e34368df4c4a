//! Noise, photon counting and figures of merit.
//!
//! Noise is Poissonian and white in time within the detection gate. The
//! unconditional noise probability is an additive budget: control-pulse
//! noise, residual spin population mapped to the output mode, an extra RF
//! term for noise seen in practice beyond that floor, and detector dark
//! counts.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Control-pulse-induced noise probability without RF pulses.
    pub optical_readout_noise: f64,
    /// Output noise probability per unit residual |g> population.
    pub residual_coupling: f64,
    /// Added noise with RF pulses beyond the residual-population floor.
    pub extra_rf_noise: f64,
    pub detector_dark: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            optical_readout_noise: 5e-3,
            residual_coupling: 1.0,
            extra_rf_noise: 0.0,
            detector_dark: 0.0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            (
                "NoiseModel.optical_readout_noise",
                self.optical_readout_noise,
            ),
            ("NoiseModel.residual_coupling", self.residual_coupling),
            ("NoiseModel.extra_rf_noise", self.extra_rf_noise),
            ("NoiseModel.detector_dark", self.detector_dark),
        ] {
            if !(v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be >= 0 (got {v})")));
            }
        }
        Ok(())
    }
}

/// Coupling beta for which `rho_err` contributes `floor` to p_n.
pub fn calibrate_residual_coupling(rho_err: f64, floor: f64) -> Result<f64> {
    if !(rho_err > 0.0) || !(floor >= 0.0) {
        return Err(Error::Calibration(format!(
            "need rho_err > 0 and floor >= 0 (got {rho_err}, {floor})"
        )));
    }
    Ok(floor / rho_err)
}

/// p_n = p_opt + beta rho_err + extra_rf + dark.
pub fn noise_probability(model: &NoiseModel, rho_err: f64) -> Result<f64> {
    model.validate()?;
    if !(0.0..=0.5).contains(&rho_err) {
        return Err(Error::invalid(format!(
            "residual population must lie in [0, 0.5] (got {rho_err})"
        )));
    }
    let p = model.optical_readout_noise
        + model.residual_coupling * rho_err
        + model.extra_rf_noise
        + model.detector_dark;
    if p > 1.0 {
        return Err(Error::Domain(format!("noise probability {p} exceeds 1")));
    }
    Ok(p)
}

/// Signal-to-noise ratio mu eta / p_n.
pub fn snr_analytic(mu: f64, eta: f64, p_n: f64) -> Result<f64> {
    if p_n == 0.0 {
        return Err(Error::Domain(
            "noise-free: SNR is unbounded when p_n = 0".into(),
        ));
    }
    if !(p_n > 0.0) {
        return Err(Error::invalid(format!("p_n must be > 0 (got {p_n})")));
    }
    Ok(mu * eta / p_n)
}

/// Input mean photon number giving unit SNR, p_n / eta.
pub fn mu1(p_n: f64, eta: f64) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(Error::Domain(format!("mu1 needs eta > 0 (got {eta})")));
    }
    Ok(p_n / eta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FidelityBound {
    pub fidelity: f64,
    /// F > 2/3, equivalently p > mu1.
    pub quantum: bool,
}

pub const CLASSICAL_FIDELITY: f64 = 2.0 / 3.0;

/// Post-selected qubit storage fidelity limited by white noise,
/// (1 + mu1/p) / (1 + 2 mu1/p).
pub fn qubit_fidelity(mu1: f64, p: f64) -> Result<FidelityBound> {
    if p == 0.0 {
        return Err(Error::Domain("qubit fidelity needs p > 0".into()));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!("p must lie in (0, 1] (got {p})")));
    }
    if !(mu1 >= 0.0) {
        return Err(Error::invalid(format!("mu1 must be >= 0 (got {mu1})")));
    }
    let r = mu1 / p;
    Ok(FidelityBound {
        fidelity: (1.0 + r) / (1.0 + 2.0 * r),
        quantum: p > mu1,
    })
}

/// Open interval of p for which storage beats the classical bound, or `None`.
pub fn quantum_regime_window(mu1: f64) -> Result<Option<(f64, f64)>> {
    if !(mu1 >= 0.0) {
        return Err(Error::invalid(format!("mu1 must be >= 0 (got {mu1})")));
    }
    Ok((mu1 < 1.0).then_some((mu1, 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub bin_width: f64,
    pub n_bins: usize,
    /// Output-mode pulse RMS width, seconds; signal counts follow this
    /// Gaussian profile centered in the gate.
    pub signal_width: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            bin_width: 100e-9,
            n_bins: 40,
            signal_width: 400e-9,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bin_width > 0.0) || self.n_bins == 0 || !(self.signal_width > 0.0) {
            return Err(Error::invalid(
                "GateConfig needs bin_width > 0, n_bins >= 1 and signal_width > 0",
            ));
        }
        Ok(())
    }

    fn duration(&self) -> f64 {
        self.bin_width * self.n_bins as f64
    }

    fn bin_of(&self, t: f64) -> usize {
        ((t / self.bin_width).floor().max(0.0) as usize).min(self.n_bins - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStatistics {
    pub bin_starts: Vec<f64>,
    pub counts_with_input: Vec<u64>,
    pub counts_without_input: Vec<u64>,
    pub trials: u64,
    pub mu: f64,
    /// (mean_with - mean_without) / mu; absent when mu = 0.
    pub eta: Option<Estimate>,
    pub p_n: Estimate,
    pub snr: Estimate,
    /// mu / SNR; absent when the SNR estimate is not positive.
    pub mu1: Option<Estimate>,
}

impl RunStatistics {
    pub fn write_histogram_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "bin_start_s,counts_with,counts_without")?;
        for i in 0..self.bin_starts.len() {
            writeln!(
                w,
                "{},{},{}",
                self.bin_starts[i], self.counts_with_input[i], self.counts_without_input[i]
            )?;
        }
        Ok(())
    }
}

struct TrialCounts {
    with_bins: Vec<u64>,
    without_bins: Vec<u64>,
    with_total: u64,
    without_total: u64,
}

fn one_trial(signal: f64, p_n: f64, gate: &GateConfig, seed: u64) -> TrialCounts {
    let mut rng = seeds::rng(seed);
    let mut with_bins = vec![0u64; gate.n_bins];
    let mut without_bins = vec![0u64; gate.n_bins];
    let center = 0.5 * gate.duration();
    let normal = rand_distr::Normal::new(center, gate.signal_width).expect("width > 0");

    let draw = |mean: f64, rng: &mut rand_chacha::ChaCha8Rng| -> u64 {
        if mean > 0.0 {
            Poisson::new(mean).expect("mean > 0").sample(rng) as u64
        } else {
            0
        }
    };
    let s = draw(signal, &mut rng);
    let n_with = draw(p_n, &mut rng);
    let n_without = draw(p_n, &mut rng);
    for _ in 0..s {
        let t: f64 = normal.sample(&mut rng);
        with_bins[gate.bin_of(t.clamp(0.0, gate.duration()))] += 1;
    }
    for _ in 0..n_with {
        with_bins[gate.bin_of(rng.gen::<f64>() * gate.duration())] += 1;
    }
    for _ in 0..n_without {
        without_bins[gate.bin_of(rng.gen::<f64>() * gate.duration())] += 1;
    }
    TrialCounts {
        with_bins,
        without_bins,
        with_total: s + n_with,
        without_total: n_without,
    }
}

fn mean_and_var(xs: &[u64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().map(|x| *x as f64).sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (*x as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Monte Carlo photon counting with and without the input pulse. Each trial
/// has its own seed derived from (seed, trial index), so results do not
/// depend on the thread count.
pub fn simulate_run(
    mu: f64,
    eta: f64,
    p_n: f64,
    trials: u64,
    gate: &GateConfig,
    seed: u64,
) -> Result<RunStatistics> {
    gate.validate()?;
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    if !(mu >= 0.0) || !(0.0..=1.0).contains(&eta) || !(0.0..=1.0).contains(&p_n) {
        return Err(Error::invalid(format!(
            "need mu >= 0, eta and p_n in [0, 1] (got {mu}, {eta}, {p_n})"
        )));
    }
    let signal = mu * eta;
    let results: Vec<TrialCounts> = (0..trials)
        .into_par_iter()
        .map(|i| {
            one_trial(
                signal,
                p_n,
                gate,
                seeds::derive(seed, seeds::STREAM_TRIALS, i),
            )
        })
        .collect();

    let mut counts_with_input = vec![0u64; gate.n_bins];
    let mut counts_without_input = vec![0u64; gate.n_bins];
    for r in &results {
        counts_with_input
            .iter_mut()
            .zip(&r.with_bins)
            .for_each(|(a, b)| *a += b);
        counts_without_input
            .iter_mut()
            .zip(&r.without_bins)
            .for_each(|(a, b)| *a += b);
    }
    let with: Vec<u64> = results.iter().map(|r| r.with_total).collect();
    let without: Vec<u64> = results.iter().map(|r| r.without_total).collect();
    let n = trials as f64;
    let (mw, vw) = mean_and_var(&with);
    let (mo, vo) = mean_and_var(&without);
    let (sw, so) = ((vw / n).sqrt(), (vo / n).sqrt());

    let snr = if mo > 0.0 {
        let value = (mw - mo) / mo;
        let stderr = ((sw / mo).powi(2) + (mw * so / (mo * mo)).powi(2)).sqrt();
        Estimate { value, stderr }
    } else {
        return Err(Error::Domain(
            "no noise counts recorded without input; increase trials or p_n".into(),
        ));
    };
    let eta_est = (mu > 0.0).then(|| Estimate {
        value: (mw - mo) / mu,
        stderr: (sw * sw + so * so).sqrt() / mu,
    });
    let mu1 = (snr.value > 0.0).then(|| Estimate {
        value: mu / snr.value,
        stderr: mu * snr.stderr / (snr.value * snr.value),
    });
    Ok(RunStatistics {
        bin_starts: (0..gate.n_bins)
            .map(|i| i as f64 * gate.bin_width)
            .collect(),
        counts_with_input,
        counts_without_input,
        trials,
        mu,
        eta: eta_est,
        p_n: Estimate {
            value: mo,
            stderr: so,
        },
        snr,
        mu1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_budget() {
        let m = NoiseModel::default();
        assert!((noise_probability(&m, 0.0).unwrap() - 5e-3).abs() < 1e-15);
        assert!((noise_probability(&m, 0.002).unwrap() - 7e-3).abs() < 1e-15);
        let zero = NoiseModel {
            optical_readout_noise: 0.0,
            residual_coupling: 0.0,
            extra_rf_noise: 0.0,
            detector_dark: 0.0,
        };
        assert_eq!(noise_probability(&zero, 0.0).unwrap(), 0.0);
        assert!(noise_probability(&m, 0.6).is_err());
        assert!((calibrate_residual_coupling(0.002, 2e-3).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn snr_values() {
        assert!((snr_analytic(2.0, 0.051, 0.010).unwrap() - 10.2).abs() < 1e-9);
        assert!((snr_analytic(1.1, 0.057, 0.005).unwrap() - 12.54).abs() < 1e-9);
        assert_eq!(snr_analytic(0.0, 0.05, 0.01).unwrap(), 0.0);
        assert!(matches!(
            snr_analytic(1.0, 0.05, 0.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn mu1_values() {
        assert!((mu1(5e-3, 0.057).unwrap() - 0.0877).abs() < 1e-4);
        assert!((mu1(16e-3, 0.065).unwrap() - 0.246).abs() < 1e-3);
        assert_eq!(mu1(0.0, 0.3).unwrap(), 0.0);
        assert!(mu1(0.01, 0.0).is_err());
    }

    #[test]
    fn fidelity_values() {
        assert_eq!(qubit_fidelity(0.0, 0.3).unwrap().fidelity, 1.0);
        let b = qubit_fidelity(0.37, 0.37).unwrap();
        assert_eq!(b.fidelity, 2.0 / 3.0);
        assert!(!b.quantum);
        let f = qubit_fidelity(0.2, 1.0).unwrap();
        assert!((f.fidelity - 6.0 / 7.0).abs() < 1e-15 && f.quantum);
        assert!(qubit_fidelity(0.2, 0.0).is_err());
    }

    #[test]
    fn window() {
        assert_eq!(quantum_regime_window(0.2).unwrap(), Some((0.2, 1.0)));
        assert_eq!(quantum_regime_window(0.96).unwrap(), Some((0.96, 1.0)));
        assert_eq!(quantum_regime_window(1.2).unwrap(), None);
        assert_eq!(quantum_regime_window(1.0).unwrap(), None);
    }

    #[test]
    fn simulated_run_is_deterministic_and_consistent() {
        let g = GateConfig::default();
        let a = simulate_run(2.0, 0.051, 0.010, 20_000, &g, 4).unwrap();
        let b = simulate_run(2.0, 0.051, 0.010, 20_000, &g, 4).unwrap();
        assert_eq!(a, b);
        assert!((a.snr.value - 10.2).abs() < 3.0 * a.snr.stderr);
        let m1 = a.mu1.unwrap();
        assert!((m1.value * a.snr.value - 2.0).abs() < 1e-12);
        let total: u64 = a.counts_with_input.iter().sum();
        assert!(total > 0);
    }

    #[test]
    fn zero_input_gives_zero_snr() {
        let r = simulate_run(0.0, 0.05, 0.01, 50_000, &GateConfig::default(), 2).unwrap();
        assert!(r.snr.value.abs() < 3.0 * r.snr.stderr);
        assert!(r.eta.is_none());
    }

    #[test]
    fn histogram_csv_header() {
        let r = simulate_run(1.0, 0.05, 0.01, 100, &GateConfig::default(), 2).unwrap();
        let mut buf = Vec::new();
        r.write_histogram_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("bin_start_s,counts_with,counts_without\n"));
        assert_eq!(text.lines().count(), 41);
    }
}
