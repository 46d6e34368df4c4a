//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//! Reference values come either from measured fixtures or from small
//! oracles written here, independent of the library code under test.

use std::f64::consts::{LN_2, PI};
use std::time::{Duration, Instant};

use afcsim::afc::{echo_dephasing_factor, echo_trace, memory_timeline, CombConfig};
use afcsim::detection::{
    calibrate_residual_coupling, mu1, noise_probability, quantum_regime_window, qubit_fidelity,
    simulate_run, snr_analytic, GateConfig, NoiseModel,
};
use afcsim::ensemble::{
    collective_coherence, dephasing_envelope, free_evolve, gaussian_t2_star, sample_detunings,
    BlochVector, DetuningDistribution, SpinEnsemble,
};
use afcsim::experiment::{inversion_pipeline, resolve};
use afcsim::pulses::{
    integrate_bloch, AdiabaticPulseSpec, ChirpEnvelope, IntegratorConfig, PulseSpec,
};
use afcsim::sequences::{
    build_sequence, calibrate_systematic_error, sequence_population_error, thermalization_curve,
    thermalization_monte_carlo, SequenceKind,
};
use afcsim::Error;

/// Prints the verdict line and fails the test when any check failed.
fn report(id: u32, name: &str, checks: &[(bool, String)]) {
    let pass = checks.iter().all(|c| c.0);
    let detail = checks
        .iter()
        .map(|(ok, d)| format!("{}{d}", if *ok { "" } else { "FAILED " }))
        .collect::<Vec<_>>()
        .join("; ");
    println!(
        "criterion {id:>2} [{name}]: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {id} failed: {detail}");
}

/// Measured storage-time sweep: (T_S s, eta, eta err, mu1, mu1 err, p_n, p_n err, SNR, SNR err).
const SWEEP: [[f64; 9]; 6] = [
    [0.25e-3, 0.065, 0.005, 0.24, 0.04, 16e-3, 2e-3, 8.0, 2.0],
    [0.50e-3, 0.051, 0.004, 0.20, 0.04, 10e-3, 2e-3, 10.0, 2.0],
    [0.75e-3, 0.035, 0.002, 0.32, 0.05, 11e-3, 2e-3, 6.0, 1.0],
    [1.00e-3, 0.023, 0.002, 0.30, 0.06, 7e-3, 1e-3, 7.0, 2.0],
    [1.25e-3, 0.014, 0.001, 0.69, 0.12, 10e-3, 1e-3, 3.0, 1.0],
    [1.50e-3, 0.010, 0.001, 0.96, 0.18, 9e-3, 1e-3, 2.0, 1.0],
];
const SWEEP_MU: f64 = 2.0;

// ---------------------------------------------------------------------------
// Oracles

/// |E exp(2 pi i delta t)| for a Gaussian line: exp(-2 pi^2 sigma^2 t^2).
fn gaussian_coherence_oracle(fwhm: f64, t: f64) -> f64 {
    let sigma = fwhm / (2.0 * (2.0 * LN_2).sqrt());
    (-2.0 * PI * PI * sigma * sigma * t * t).exp()
}

/// First t at which a decreasing function drops to 1/e, by bisection.
fn one_over_e_time(f: impl Fn(f64) -> f64, hi: f64) -> f64 {
    let target = (-1.0f64).exp();
    let (mut a, mut b) = (0.0, hi);
    for _ in 0..60 {
        let m = 0.5 * (a + b);
        if f(m) > target {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Rodrigues rotation matrix for a unit axis.
fn rot(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let [x, y, z] = axis;
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
        [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
    ]
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

/// Population moved off |s> by a train of on-resonance pulses with angle
/// pi (1 + eps) about equatorial axes at the given phases.
fn train_error_oracle(phases: &[f64], eps: f64) -> f64 {
    let mut v = [0.0, 0.0, 1.0];
    for p in phases {
        v = mat_vec(&rot([p.cos(), p.sin(), 0.0], PI * (1.0 + eps)), v);
    }
    0.5 * (1.0 - v[2])
}

/// Two-level mixing recursion for the population in |g>.
fn mixing_oracle(eps: f64, n: usize) -> f64 {
    (0..n).fold(0.0, |rho, _| rho * (1.0 - eps) + (1.0 - rho) * eps)
}

/// Echo intensity of one Gaussian tooth of FWHM Delta/F at t = 1/Delta,
/// by direct quadrature of its Fourier transform.
fn tooth_dephasing_oracle(finesse: f64) -> f64 {
    let delta = 1.0;
    let gamma = delta / finesse;
    let a = 4.0 * LN_2 / (gamma * gamma);
    let n = 20001;
    let half = 6.0 * gamma;
    let h = 2.0 * half / (n - 1) as f64;
    let (mut re, mut norm) = (0.0, 0.0);
    for i in 0..n {
        let f = -half + h * i as f64;
        let g = (-a * f * f).exp();
        re += g * (2.0 * PI * f / delta).cos();
        norm += g;
    }
    (re / norm).powi(2)
}

fn comb(finesse: f64) -> CombConfig {
    CombConfig {
        periodicity: 100e3,
        finesse,
        comb_width: 2e6,
        optical_depth: 2.6,
        passes: 2,
        background_depth: 0.1,
    }
}

// ---------------------------------------------------------------------------
// Criteria

#[test]
fn criterion_01_t2_star_envelope() {
    let fwhm = 27e3;
    let target = 19.6e-6;
    let line = DetuningDistribution::gaussian(fwhm).unwrap();

    let oracle = one_over_e_time(|t| gaussian_coherence_oracle(fwhm, t), 100e-6);
    let closed = one_over_e_time(|t| dephasing_envelope(&line, t), 100e-6);

    let start = Instant::now();
    let ens = sample_detunings(&line, 100_000, 7)
        .unwrap()
        .with_uniform_state(BlochVector::transverse(0.0));
    let mc = one_over_e_time(
        |t| collective_coherence(&free_evolve(&ens, t, None).unwrap()).magnitude(),
        100e-6,
    );
    let elapsed = start.elapsed();

    let within = |x: f64| (x / target - 1.0).abs() <= 0.02;
    report(
        1,
        "T2* envelope",
        &[
            (
                within(closed),
                format!("closed form {:.3} us", closed * 1e6),
            ),
            (
                within(mc),
                format!("1e5-spin Monte Carlo {:.3} us", mc * 1e6),
            ),
            (
                (closed / oracle - 1.0).abs() < 1e-9
                    && (gaussian_t2_star(fwhm) / oracle - 1.0).abs() < 1e-9,
                format!("oracle {:.3} us", oracle * 1e6),
            ),
            (
                elapsed < Duration::from_secs(1),
                format!("runtime {elapsed:.2?}"),
            ),
        ],
    );
}

#[test]
fn criterion_02_thermalization() {
    let eps = 0.036;
    let closed = thermalization_curve(eps, 100).unwrap();
    let oracle_50 = mixing_oracle(eps, 50);

    // Monte Carlo: resonant spins, XX pulses whose error gives eps per pass,
    // independent random phase per spin between passes.
    let base = PulseSpec::pi(0.0);
    let per_pulse = calibrate_systematic_error(SequenceKind::Xx, 0.5e-3, &base, eps, 0.0).unwrap();
    let seq = build_sequence(
        SequenceKind::Xx,
        0.5e-3,
        &base.with_systematic_error(per_pulse),
    )
    .unwrap();
    let ens = SpinEnsemble::resonant(10_000).unwrap();
    let mc = thermalization_monte_carlo(&ens, &seq, 100, 11, true).unwrap();
    let (c50, m50, se50) = (closed.rho_g[50], mc.rho_g[50], mc.stderr[50]);

    let small = thermalization_curve(0.002, 100).unwrap().rho_g[100];
    report(
        2,
        "XX vs XY-4 thermalization",
        &[
            (
                (0.45..=0.5).contains(&c50) && (c50 - oracle_50).abs() < 1e-12,
                format!("closed-form rho_g(50) = {c50:.4}, recursion oracle {oracle_50:.4}"),
            ),
            (
                (m50 - c50).abs() <= 3.0 * se50,
                format!("Monte Carlo rho_g(50) = {m50:.4} +- {se50:.4}"),
            ),
            (
                small <= 0.1,
                format!("eps_seq = 0.002 gives rho_g(100) = {small:.4}, bound 0.1"),
            ),
        ],
    );
}

#[test]
fn criterion_03_robustness_ordering() {
    let base = PulseSpec::pi(0.0);
    let t_s = 0.5e-3;
    let eps = calibrate_systematic_error(SequenceKind::Xx, t_s, &base, 0.036, 0.0).unwrap();
    let pulse = base.with_systematic_error(eps);
    let xx = build_sequence(SequenceKind::Xx, t_s, &pulse).unwrap();
    let xy4 = build_sequence(SequenceKind::Xy4, t_s, &pulse).unwrap();

    let start = Instant::now();
    let e_xy4 = sequence_population_error(&xy4, 0.0);
    let elapsed = start.elapsed();
    let e_xx = sequence_population_error(&xx, 0.0);

    let y = PI / 2.0;
    let oracle_xx = train_error_oracle(&[0.0, 0.0], eps);
    let oracle_xy4 = train_error_oracle(&[0.0, y, 0.0, y], eps);
    report(
        3,
        "robustness ordering",
        &[
            (
                (e_xx - 0.036).abs() < 1e-9,
                format!("XX {:.4}%/sequence at eps {eps:.5}", e_xx * 100.0),
            ),
            (e_xy4 <= 0.0036, format!("XY-4 {:.2e}/sequence", e_xy4)),
            (
                (e_xx - oracle_xx).abs() < 1e-12 && (e_xy4 - oracle_xy4).abs() < 1e-12,
                format!("matrix oracle XX {oracle_xx:.4}, XY-4 {oracle_xy4:.2e}"),
            ),
            (
                elapsed < Duration::from_millis(1),
                format!("composition {elapsed:.2?}"),
            ),
        ],
    );
}

#[test]
fn criterion_04_storage_sweep_consistency() {
    let mut checks = Vec::new();
    for [t, eta, _, m1, m1_err, p_n, _, snr, snr_err] in SWEEP {
        let s = snr_analytic(SWEEP_MU, eta, p_n).unwrap();
        let m = mu1(p_n, eta).unwrap();
        let ok = (s - snr).abs() <= snr_err
            && (m - m1).abs() <= m1_err
            && (s - SWEEP_MU * eta / p_n).abs() < 1e-12
            && (m - p_n / eta).abs() < 1e-12;
        checks.push((ok, format!("{:.2} ms: SNR {s:.2}, mu1 {m:.3}", t * 1e3)));
    }
    report(4, "storage-time sweep consistency", &checks);
}

#[test]
fn criterion_05_fidelity_algebra() {
    let f0 = [0.1, 0.5, 1.0].map(|p| qubit_fidelity(0.0, p).unwrap().fidelity);
    let edge = qubit_fidelity(0.3, 0.3).unwrap();
    let f = qubit_fidelity(0.2, 1.0).unwrap().fidelity;
    let windows = [0.2, 0.96, 1.0, 1.2].map(|m| quantum_regime_window(m).unwrap());
    report(
        5,
        "fidelity algebra",
        &[
            (f0.iter().all(|x| *x == 1.0), "F(0, p) = 1".into()),
            (
                edge.fidelity == 2.0 / 3.0 && !edge.quantum,
                format!("F(p = mu1) = {}", edge.fidelity),
            ),
            ((f - 6.0 / 7.0).abs() < 1e-15, format!("F(0.2, 1) = {f:.6}")),
            (
                windows[0] == Some((0.2, 1.0))
                    && windows[1] == Some((0.96, 1.0))
                    && windows[2].is_none()
                    && windows[3].is_none(),
                "window empty iff mu1 >= 1".into(),
            ),
        ],
    );
}

#[test]
fn criterion_06_echo_timing() {
    let mut checks = Vec::new();
    let n = 2001;
    for f in [2.0, 5.0, 10.0, 40.0] {
        let c = comb(f);
        let trace = echo_trace(&c, 0.0, 2.0 * c.afc_delay(), n).unwrap();
        let step = 2.0 * c.afc_delay() / (n - 1) as f64;
        // Skip the t = 0 lobe.
        let (t_peak, _) = afcsim::afc::EchoTrace {
            times: trace.times[n / 4..].to_vec(),
            amplitudes: trace.amplitudes[n / 4..].to_vec(),
        }
        .argmax();
        checks.push((
            (t_peak - c.afc_delay()).abs() <= step * (1.0 + 1e-9),
            format!("F = {f}: peak at {:.4} us", t_peak * 1e6),
        ));
    }
    let factor = echo_dephasing_factor(&comb(10.0)).unwrap();
    let oracle = tooth_dephasing_oracle(10.0);
    let approx = (-7.0f64 / 100.0).exp();
    checks.push((
        (oracle / approx - 1.0).abs() <= 0.05 && (factor / oracle - 1.0).abs() <= 0.05,
        format!("F = 10 dephasing {factor:.4}, oracle {oracle:.4}, exp(-7/F^2) {approx:.4}"),
    ));
    report(6, "echo timing", &checks);
}

fn lz_pulse(peak_rabi: f64) -> AdiabaticPulseSpec {
    AdiabaticPulseSpec {
        peak_rabi,
        chirp_span: 200e3,
        duration: 500e-6,
        envelope: ChirpEnvelope::ConstantChirpLinear,
    }
}

/// exp(-pi Omega^2 / (2 k)) with Omega in rad/s and k in rad/s^2.
fn landau_zener_oracle(p: &AdiabaticPulseSpec) -> f64 {
    let omega = 2.0 * PI * p.peak_rabi;
    let k = 2.0 * PI * p.chirp_span / p.duration;
    (-PI * omega * omega / (2.0 * k)).exp()
}

#[test]
fn criterion_07_adiabatic_oracle() {
    let mut checks = Vec::new();
    let mut worst_drift: f64 = 0.0;
    for rabi in [10e3, 12e3, 15e3, 18e3] {
        let p = lz_pulse(rabi);
        let cfg = IntegratorConfig::for_duration(p.duration);
        let lz = landau_zener_oracle(&p);
        let z = integrate_bloch(BlochVector::S, &p, 0.0, &cfg).unwrap().z;
        let z_half = integrate_bloch(BlochVector::S, &p, 0.0, &cfg.halved())
            .unwrap()
            .z;
        worst_drift = worst_drift.max((z - z_half).abs());
        let err = 0.5 * (1.0 + z);
        let ratio = err / lz;
        checks.push((
            p.adiabaticity() > 2.0 && (0.5..=2.0).contains(&ratio),
            format!(
                "adiabaticity {:.2}: ODE {err:.2e} vs LZ {lz:.2e}",
                p.adiabaticity()
            ),
        ));
    }
    let preset = resolve(Some("adiabatic"), None).unwrap();
    let p = preset.adiabatic.spec();
    let cfg = IntegratorConfig::for_duration(p.duration);
    for d in [-27e3, -13.5e3, 13.5e3, 27e3] {
        let z = integrate_bloch(BlochVector::S, &p, d, &cfg).unwrap().z;
        let z_half = integrate_bloch(BlochVector::S, &p, d, &cfg.halved())
            .unwrap()
            .z;
        worst_drift = worst_drift.max((z - z_half).abs());
    }
    checks.push((
        worst_drift < 1e-6,
        format!("Richardson drift {worst_drift:.1e}"),
    ));
    let mean = inversion_pipeline(&preset).unwrap().adiabatic.weighted_mean;
    checks.push((
        (0.001..=0.02).contains(&mean),
        format!("preset mean error over the line {:.3}%", mean * 100.0),
    ));
    report(7, "adiabatic-pulse oracle", &checks);
}

#[test]
fn criterion_08_monte_carlo_detection() {
    let gate = GateConfig::default();
    let mut checks = Vec::new();
    let start = Instant::now();
    for (i, row) in SWEEP.iter().enumerate() {
        let (eta, p_n) = (row[1], row[5]);
        let s = simulate_run(SWEEP_MU, eta, p_n, 100_000, &gate, 1000 + i as u64).unwrap();
        let expected = SWEEP_MU * eta / p_n;
        checks.push((
            (s.snr.value - expected).abs() <= 3.0 * s.snr.stderr,
            format!(
                "{:.2} ms: {:.2} +- {:.2} vs {expected:.2}",
                row[0] * 1e3,
                s.snr.value,
                s.snr.stderr
            ),
        ));
    }
    let elapsed = start.elapsed();
    checks.push((
        elapsed < Duration::from_secs(5),
        format!("runtime {elapsed:.2?}"),
    ));

    let csv = |seed| {
        let s = simulate_run(SWEEP_MU, 0.051, 0.010, 100_000, &gate, seed).unwrap();
        let mut buf = Vec::new();
        s.write_histogram_csv(&mut buf).unwrap();
        buf
    };
    checks.push((
        csv(5) == csv(5),
        "same seed, identical histogram bytes".into(),
    ));
    report(8, "Monte Carlo detection", &checks);
}

#[test]
fn criterion_09_noise_floor() {
    let beta = calibrate_residual_coupling(0.002, 2e-3).unwrap();
    let model = NoiseModel {
        optical_readout_noise: 5e-3,
        residual_coupling: beta,
        extra_rf_noise: 0.0,
        detector_dark: 0.0,
    };
    let added = noise_probability(&model, 0.002).unwrap() - noise_probability(&model, 0.0).unwrap();
    report(
        9,
        "noise floor",
        &[(
            (1e-3..=3e-3).contains(&added),
            format!("beta {beta}, added noise {added:.2e}"),
        )],
    );
}

#[test]
fn criterion_10_timeline_exactness() {
    let (delta, t_s, mode) = (100e3, 0.5e-3, 1.6e-6);
    let tl = memory_timeline(delta, t_s, 5, mode, 0.2).unwrap();
    // 1/Delta = 10 us and T_S = 500 us in integer picoseconds.
    let expected = 10_000_000u64 + 500_000_000;
    let exact = tl.total.0 == expected
        && tl.mode_slots.len() == 5
        && tl
            .mode_slots
            .iter()
            .all(|s| s.output.0 - s.input.0 == expected);
    let sixth = memory_timeline(delta, t_s, 6, mode, 0.2);
    report(
        10,
        "timeline exactness",
        &[
            (exact, format!("5 modes, each stored {} ps", tl.total.0)),
            (
                matches!(sixth, Err(Error::Capacity { .. })),
                match &sixth {
                    Err(e) => format!("6th mode: {e}"),
                    Ok(_) => "6th mode accepted".into(),
                },
            ),
        ],
    );
}
