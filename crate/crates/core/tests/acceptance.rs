//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; the process exits nonzero on any FAIL.

use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spinscope_core::estimation::{
    classify_detectability, cramer_rao, fisher_matrix, sensitivity_dd_s1, sensitivity_dd_s_half, DistanceMetric,
    FisherOptions, ParamVector,
};
use spinscope_core::measurement::{readout_std, sample_point};
use spinscope_core::register::{derive_frame, load_register, GAMMA_13C};
use spinscope_core::signals::{self, lorentzian_width, resonance_times, SignalOptions};
use spinscope_core::spectrum::{
    fft_spectrum, find_peaks, multiquantum_lines, pair_frequencies, tau_sweep_correlation, BinSelection, Spectrum,
    SpectrumOptions, Statistic, Window,
};
use spinscope_core::{
    ElectronSpin, Environment, NuclearSpin, Oracle, Protocol, Register, TWO_PI,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn registers_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/registers")
}

fn load(name: &str) -> Register {
    load_register(registers_dir().join(name)).expect("shipped register loads")
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn carbon_register(e: ElectronSpin, spins: &[(f64, f64)]) -> Register {
    let spins = spins.iter().enumerate().map(|(i, &(a, b))| NuclearSpin::carbon13(format!("C{}", i + 1), a, b)).collect();
    Register::new(e, Environment::default(), spins).unwrap()
}

// 1. Closed forms against the density-matrix oracle.
fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let random4: Vec<(f64, f64)> =
        (0..4).map(|_| (rng.random_range(-60e3..60e3), rng.random_range(2e3..40e3))).collect();
    let mut regs = vec![
        load("nv_single.json"),
        load("nv_two_spin.json"),
        load("group_iv_three_spin.json"),
        load("nv_single.json").with_electron(ElectronSpin::group_iv()),
        carbon_register(ElectronSpin::nv_like(), &random4),
        carbon_register(ElectronSpin::group_iv(), &random4),
    ];
    regs.push(load("group_iv_three_spin.json").with_electron(ElectronSpin::nv_like()));

    let taus = linspace(0.05e-6, 20e-6, 200);
    let t_free = linspace(0.0, 40e-6, 200);
    let mut worst: (f64, String) = (0.0, String::new());
    let mut points = 0usize;
    for reg in &regs {
        let oracle = Oracle::new(reg).map_err(|e| e.to_string())?;
        let omega_l = TWO_PI * GAMMA_13C * reg.environment.b_field;
        let tau_eseem = std::f64::consts::PI / omega_l;
        let protocols = [
            Protocol::Ramsey,
            Protocol::HahnEcho,
            Protocol::Dd { pulses: 2 },
            Protocol::Dd { pulses: 8 },
            Protocol::Dd { pulses: 16 },
            Protocol::FivePulse { tau1: tau_eseem, tau2: tau_eseem },
            Protocol::FivePulse { tau1: 0.7e-6, tau2: 1.3e-6 },
        ];
        for proto in protocols {
            let grid = if proto.is_correlation() { &t_free } else { &taus };
            let analytic = proto.evaluate_grid(reg, grid, false).map_err(|e| e.to_string())?;
            for (&x, &a) in grid.iter().zip(&analytic) {
                let exact = oracle.simulate(&proto.descriptor(x).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
                let err = (a - exact).abs();
                points += 1;
                if err > worst.0 {
                    worst = (err, format!("{} on {} spins at x={x:.3e}", proto.kind().name(), reg.spins.len()));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst.0 <= 1e-9, format!("max |analytic - oracle| = {:.2e} ({})", worst.0, worst.1))?;
    ensure(secs < 300.0, format!("runtime {secs:.1}s exceeds 5 min"))?;
    Ok(format!("{points} points, max error {:.2e}, {secs:.1}s", worst.0))
}

// 2. Resolution formulas at the quoted operating point.
fn sensitivity_numbers() -> Outcome {
    let env = Environment::default();
    let spin = NuclearSpin::carbon13("C", 0.0, 5e3);
    let frame = derive_frame(&spin, &ElectronSpin::nv_like(), 500e3 / GAMMA_13C).map_err(|e| e.to_string())?;
    let t2 = 100e-6;
    let s1 = sensitivity_dd_s1(&frame, t2, t2 / 2.0);
    let sh = sensitivity_dd_s_half(t2, t2);
    ensure((s1.value - 400.0).abs() < 1e-9 && (s1.bound - 400.0).abs() < 1e-9, format!("S=1 gives {} / {}", s1.value, s1.bound))?;
    ensure((sh.bound - 80e3).abs() < 1e-6, format!("S=1/2 gives {}", sh.bound))?;
    ensure(env.t2 == t2 && env.t1 == 1.0, "environment defaults differ from T1 = 1 s, T2 = 100 us")?;
    let ratio = sh.bound / s1.bound;
    Ok(format!("400 Hz and 80 kHz; formula ratio {ratio:.1}, not the ~160 sometimes quoted"))
}

// 3. s0 = -s1 makes the decoupling and echo signals even in A_zz.
fn s_half_evenness() -> Outcome {
    let e = ElectronSpin::group_iv();
    let taus = linspace(0.05e-6, 10e-6, 400);
    let mut worst = 0.0f64;
    for &(azz, azx) in &[(12e3, 7e3), (-48e3, 25e3), (90e3, 60e3)] {
        let plus = carbon_register(e, &[(azz, azx), (20e3, 9e3)]);
        let minus = carbon_register(e, &[(-azz, azx), (20e3, 9e3)]);
        for &tau in &taus {
            for n in [2usize, 8, 16] {
                let o = SignalOptions::with_pulses(n);
                let d = signals::dd(&plus, tau, &o).unwrap() - signals::dd(&minus, tau, &o).unwrap();
                worst = worst.max(d.abs());
            }
            let d = signals::hahn_echo(&plus, tau, &SignalOptions::default()).unwrap()
                - signals::hahn_echo(&minus, tau, &SignalOptions::default()).unwrap();
            worst = worst.max(d.abs());
        }
    }
    ensure(worst <= 1e-12, format!("max signal difference {worst:.2e}"))?;

    let reg = carbon_register(e, &[(0.0, 15e3), (30e3, 10e3)]);
    let grid = linspace(0.1e-6, 5e-6, 400);
    let fim = fisher_matrix(&reg, &Protocol::Dd { pulses: 16 }, &grid, &FisherOptions::default())
        .map_err(|e| e.to_string())?
        .fim;
    let scale = fim.abs().max();
    let row = (0..fim.ncols()).map(|j| fim[(0, j)].abs()).fold(0.0, f64::max);
    ensure(row <= 1e-10 * scale, format!("A_zz=0 row max {row:.2e} vs FIM scale {scale:.2e}"))?;
    Ok(format!("signal difference {worst:.1e}, FIM row {:.1e} relative", row / scale))
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
        if (b - a).abs() < 1e-18 {
            break;
        }
    }
    (a + b) / 2.0
}

// 4. Decoupling dips sit at the predicted resonance times.
fn resonance_times_check() -> Outcome {
    let e = ElectronSpin::nv_like();
    let n = 64usize;
    let opts = SignalOptions::with_pulses(n);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let azz = rng.random_range(-30e3..30e3);
        let azx = rng.random_range(3e3..12e3);
        let reg = carbon_register(e, &[(azz, azx)]);
        let frame = reg.frames().unwrap()[0];
        let w = lorentzian_width(&frame, &e);
        for p in 0..=5 {
            let tp = resonance_times(&frame, &e, p).tau;
            let half = TWO_PI / (n as f64 * (frame.omega_0 + frame.omega_1));
            let f = |t: f64| signals::dd(&reg, t, &opts).unwrap();
            let grid = linspace(tp - half, tp + half, 4001);
            let i = (0..grid.len()).min_by(|&a, &b| f(grid[a]).total_cmp(&f(grid[b]))).unwrap();
            let step = grid[1] - grid[0];
            let tmin = golden_min(f, grid[i] - step, grid[i] + step);
            worst = worst.max((tmin - tp).abs() / (w / 2.0));
        }
    }
    ensure(worst <= 1.0, format!("worst |tau_min - tau_p| = {worst:.2} of w/2"))?;
    Ok(format!("10 spins x p=0..5, worst offset {worst:.2} of w/2"))
}

fn eseem_spectrum(reg: &Register, tau: f64, times: &[f64]) -> Spectrum {
    let proto = Protocol::FivePulse { tau1: tau, tau2: tau };
    let v = proto.evaluate_grid(reg, times, false).unwrap();
    fft_spectrum(times, &v, &SpectrumOptions { window: Window::Hann, zero_pad: 4 }).unwrap()
}

fn db(a: f64, b: f64) -> f64 {
    20.0 * (a / b).log10()
}

// 5. A nucleus vanishes from the correlation spectrum at its blind spot.
fn blind_spots() -> Outcome {
    let e = ElectronSpin::group_iv();
    // Combination lines in T come from products of three modulated factors,
    // so three strongly coupled nuclei are needed to see them.
    let reg = carbon_register(e, &[(150e3, 120e3), (-60e3, 80e3), (40e3, 90e3)]);
    let frames = reg.frames().unwrap();
    let target = &frames[0];
    let bright_tau = std::f64::consts::PI / target.omega_0;
    let blind_tau = 2.0 * bright_tau;
    let times: Vec<f64> = (0..2000).map(|k| k as f64 * 0.2e-6).collect();
    let bright = eseem_spectrum(&reg, bright_tau, &times);
    let blind = eseem_spectrum(&reg, blind_tau, &times);
    let hw = 2.0 * bright.bin_width();

    let (fa, fb) = (target.omega_0 / TWO_PI, target.omega_1 / TWO_PI);
    let mut lines = vec![("omega_alpha".to_string(), fa), ("omega_beta".to_string(), fb)];
    // Combination lines that involve the target nucleus and are resolvable
    // from every single-quantum line.
    let single: Vec<f64> = frames.iter().flat_map(|f| [f.omega_0 / TWO_PI, f.omega_1 / TWO_PI]).collect();
    let peak = bright.amplitude_near(fa, hw);
    for line in multiquantum_lines(&frames, 2) {
        let involves_target = line.composition.iter().any(|c| c.0 == 0);
        // Each branch component only carries that branch's frequencies.
        let branch = line.composition[0].1;
        let is_mq = line.composition.len() > 1 && line.composition.iter().all(|c| c.1 == branch);
        let clear = single.iter().all(|s| (s - line.freq).abs() > 10.0 * hw)
            && line.freq < 0.45 / (times[1] - times[0]);
        if involves_target && is_mq && clear && bright.amplitude_near(line.freq, hw) > 1e-3 * peak {
            lines.push((format!("mq {:.1} kHz", line.freq / 1e3), line.freq));
        }
    }
    ensure(lines.len() > 2, "no multi-quantum line of the target is visible at the bright spot")?;
    let mut worst = f64::INFINITY;
    let mut worst_name = String::new();
    for (name, f) in &lines {
        let drop = db(bright.amplitude_near(*f, hw), blind.amplitude_near(*f, hw));
        if drop < worst {
            worst = drop;
            worst_name = name.clone();
        }
    }
    ensure(worst >= 20.0, format!("{worst_name} drops only {worst:.1} dB"))?;
    // The other nucleus must stay visible, otherwise the drop is trivial.
    let other = frames[1].omega_0 / TWO_PI;
    let kept = db(bright.amplitude_near(other, hw), blind.amplitude_near(other, hw)).abs();
    ensure(blind.amplitude_near(other, hw) > 0.0 && kept < 40.0, "second nucleus vanished too")?;
    Ok(format!("{} lines of the target drop >= {worst:.1} dB (weakest: {worst_name})", lines.len()))
}

// 6. FIM symmetric PSD, additive over grid partitions, CRB ∝ 1/reps.
fn fim_structure() -> Outcome {
    let cases: Vec<(Register, Protocol, Vec<f64>)> = vec![
        (load("nv_two_spin.json"), Protocol::Dd { pulses: 16 }, linspace(0.1e-6, 5e-6, 300)),
        (load("group_iv_three_spin.json"), Protocol::Dd { pulses: 8 }, linspace(0.1e-6, 5e-6, 300)),
        (load("group_iv_three_spin.json"), Protocol::FivePulse { tau1: 1e-6, tau2: 1e-6 }, linspace(0.0, 100e-6, 300)),
        (load("twin_spins.json"), Protocol::HahnEcho, linspace(0.1e-6, 20e-6, 300)),
        (load("bispecies.json"), Protocol::Dd { pulses: 16 }, linspace(0.1e-6, 5e-6, 300)),
    ];
    let opts = FisherOptions::default();
    let mut worst_add = 0.0f64;
    for (reg, proto, grid) in &cases {
        let f = fisher_matrix(reg, proto, grid, &opts).map_err(|e| e.to_string())?.fim;
        let scale = f.abs().max();
        let asym = (&f - f.transpose()).abs().max();
        ensure(asym <= 1e-10 * scale, format!("{}: asymmetry {asym:.2e}", proto.kind().name()))?;
        let eig = f.clone().symmetric_eigenvalues();
        let lmin = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        ensure(lmin >= -1e-10 * scale, format!("{}: eigenvalue {lmin:.2e}", proto.kind().name()))?;

        let g1: Vec<f64> = grid.iter().step_by(2).copied().collect();
        let g2: Vec<f64> = grid.iter().skip(1).step_by(2).copied().collect();
        let f1 = fisher_matrix(reg, proto, &g1, &opts).unwrap().fim;
        let f2 = fisher_matrix(reg, proto, &g2, &opts).unwrap().fim;
        let mut union = g1.clone();
        union.extend(&g2);
        union.sort_by(f64::total_cmp);
        let fu = fisher_matrix(reg, proto, &union, &opts).unwrap().fim;
        let add = (&fu - (&f1 + &f2)).abs().max() / scale;
        worst_add = worst_add.max(add);
        ensure(add <= 1e-12, format!("{}: additivity residual {add:.2e}", proto.kind().name()))?;

        let c1 = cramer_rao(&f, 10_000).unwrap();
        for k in [2u64, 3, 7] {
            let ck = cramer_rao(&f, 10_000 * k).unwrap();
            let dev = (ck.crb.map(|x| x * k as f64) - &c1.crb).abs().max();
            ensure(dev <= 1e-15 * c1.crb.abs().max(), format!("CRB scaling deviates by {dev:.2e}"))?;
        }
    }
    Ok(format!("{} registers, additivity residual {worst_add:.1e} (rounding)", cases.len()))
}

fn detect_count(reg: &Register, proto: Protocol, grid: &[f64]) -> Result<usize, String> {
    let fim = fisher_matrix(reg, &proto, grid, &FisherOptions::default()).map_err(|e| e.to_string())?.fim;
    let crb = cramer_rao(&fim, 10_000).map_err(|e| e.to_string())?;
    let params = ParamVector::from_register(reg);
    Ok(classify_detectability(&params, &crb.bounds, DistanceMetric::PerType).iter().filter(|&&d| d).count())
}

// 7. Detectability ordering on the synthetic 23-spin register.
fn detectability_ordering() -> Outcome {
    let s1 = load("synthetic_23.json");
    ensure(s1.spins.len() == 23 && s1.environment.t1 == 1.0 && s1.environment.t2 == 100e-6, "unexpected register")?;
    let sh = s1.with_electron(ElectronSpin::group_iv());
    let dd_grid = linspace(0.1e-6, 5e-6, 1000);
    let omega_l = TWO_PI * GAMMA_13C * s1.environment.b_field;
    let tau = std::f64::consts::PI / omega_l;
    let t_grid: Vec<f64> = (0..1000).map(|k| k as f64 * 0.4e-6).collect();

    let dd_s1 = detect_count(&s1, Protocol::Dd { pulses: 16 }, &dd_grid)?;
    let dd_sh = detect_count(&sh, Protocol::Dd { pulses: 16 }, &dd_grid)?;
    let esm_sh = detect_count(&sh, Protocol::FivePulse { tau1: tau, tau2: tau }, &t_grid)?;
    let summary = format!("DD16 S=1: {dd_s1}/23, DD16 S=1/2: {dd_sh}/23, 5-pulse S=1/2: {esm_sh}/23");
    ensure(esm_sh > dd_sh && dd_s1 > dd_sh, summary.clone())?;
    Ok(summary)
}

// 8. Sampled readout spread against delta-method propagation.
fn noise_statistics() -> Outcome {
    let cfg = spinscope_core::NoiseConfig::default();
    let samples: Vec<f64> = (0..1000u64)
        .map(|seed| sample_point(0.5, &spinscope_core::NoiseConfig { seed, ..cfg }, 0))
        .collect();
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (samples.len() - 1) as f64;
    let emp = var.sqrt();
    let pred = readout_std(0.5, &cfg);
    let rel = (emp / pred - 1.0).abs();
    ensure(rel <= 0.2, format!("empirical {emp:.5} vs predicted {pred:.5}"))?;
    Ok(format!("empirical sd {emp:.5}, delta method {pred:.5} ({:.1}% off)", 100.0 * rel))
}

// 9. Pairing the two branch frequencies of each nucleus across a τ sweep.
fn frequency_pairing() -> Outcome {
    let reg = load("group_iv_three_spin.json");
    let frames = reg.frames().unwrap();
    let times: Vec<f64> = (0..1000).map(|k| k as f64 * 0.5e-6).collect();
    let taus: Vec<f64> = (1..=50).map(|k| k as f64 * 10e-6).collect();
    let spectra: Vec<Spectrum> = taus.iter().map(|&t| eseem_spectrum(&reg, t, &times)).collect();
    let mut proj = spectra[0].clone();
    for s in &spectra[1..] {
        for (p, &a) in proj.amps.iter_mut().zip(&s.amps) {
            *p = p.max(a);
        }
    }
    let peaks = find_peaks(&proj, 0.1).map_err(|e| e.to_string())?;
    ensure(peaks.len() == 6, format!("expected 6 peaks, found {}", peaks.len()))?;
    let bins: Vec<usize> = peaks.iter().map(|p| p.bin).collect();
    let map = tau_sweep_correlation(&spectra, &taus, &BinSelection::Bins(bins), Statistic::Pearson)
        .map_err(|e| e.to_string())?;
    let pairing = pair_frequencies(&map, &peaks).map_err(|e| e.to_string())?;
    ensure(pairing.pairs.len() == 3, format!("{} pairs", pairing.pairs.len()))?;

    let tol = 2.0 * proj.bin_width();
    let owner = |f: f64| -> Option<usize> {
        frames.iter().position(|fr| {
            (fr.omega_0 / TWO_PI - f).abs() < tol || (fr.omega_1 / TWO_PI - f).abs() < tol
        })
    };
    let mut same_min = f64::INFINITY;
    for pair in &pairing.pairs {
        let (a, b) = (owner(pair.freq_a), owner(pair.freq_b));
        ensure(a.is_some() && a == b, format!("pair {:.0}/{:.0} Hz mixes nuclei", pair.freq_a, pair.freq_b))?;
        same_min = same_min.min(pair.score);
    }
    let mut cross_max = f64::NEG_INFINITY;
    for i in 0..peaks.len() {
        for j in i + 1..peaks.len() {
            if owner(peaks[i].freq) != owner(peaks[j].freq) {
                cross_max = cross_max.max(map.corr[map.index_of(peaks[i].freq)][map.index_of(peaks[j].freq)]);
            }
        }
    }
    ensure(same_min > cross_max, format!("same-nucleus {same_min:.3} <= cross {cross_max:.3}"))?;
    Ok(format!("3 pairs recovered, same-nucleus corr >= {same_min:.3}, cross-nucleus <= {cross_max:.3}"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 oracle equivalence", oracle_equivalence),
        ("2 sensitivity numbers", sensitivity_numbers),
        ("3 S=1/2 evenness", s_half_evenness),
        ("4 resonance times", resonance_times_check),
        ("5 blind/bright spots", blind_spots),
        ("6 FIM structure", fim_structure),
        ("7 detectability ordering", detectability_ordering),
        ("8 noise statistics", noise_statistics),
        ("9 frequency pairing", frequency_pairing),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let t = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("criterion {name}: PASS ({msg}) [{secs:.1}s]"),
            Err(msg) => {
                failed += 1;
                println!("criterion {name}: FAIL ({msg}) [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
