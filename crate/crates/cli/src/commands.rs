use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use spinscope_core::estimation::{analyze, DistanceMetric, FdStep, FisherOptions};
use spinscope_core::measurement::{probability_from_signal, sample_point, synthesize_trace, PRNG_NAME};
use spinscope_core::register::{larmor_frequency, GAMMA_13C};
use spinscope_core::signals::{baths_by_species, bispecies_dd, blind_bright_spots, Branch, SpotLists};
use spinscope_core::spectrum::{
    fft_spectrum, find_peaks, pair_frequencies, tau_sweep_correlation, write_correlation_csv, write_spectrum_csv,
    BinSelection, Pairing, Peak, Spectrum, SpectrumOptions, Statistic, Window,
};
use spinscope_core::{NoiseConfig, Oracle, Protocol, ProtocolKind, Register, TWO_PI};

use crate::error::CliError;
use crate::grid::{linspace, parse_grid, parse_seconds};
use crate::output::{csv_preamble, ensure_dir, write, write_json, Manifest};
use crate::{FisherArgs, MetricArg, NoiseArgs, OracleCheckArgs, ProtocolArgs, SimulateArgs, SpectrumArgs, WindowArg};

pub fn load_register(path: &Path) -> Result<Register, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    Register::from_json_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Angular Larmor frequency of the register's first species (¹³C if empty).
fn omega_l(reg: &Register) -> f64 {
    match reg.spins.first() {
        Some(s) => larmor_frequency(s, reg.environment.b_field),
        None => TWO_PI * GAMMA_13C * reg.environment.b_field,
    }
}

fn opt_seconds(s: &Option<String>) -> Result<Option<f64>, CliError> {
    s.as_deref().map(parse_seconds).transpose()
}

/// Protocol from flags. Correlation sequences default to the first Larmor
/// bright spot: π/ω_L for the 5-pulse sequence, π/(2ω_L) for CPMG blocks.
pub fn build_protocol(args: &ProtocolArgs, reg: &Register) -> Result<Protocol, CliError> {
    let kind = ProtocolKind::from_str(&args.protocol)?;
    let (tau1, tau2) = (opt_seconds(&args.tau1)?, opt_seconds(&args.tau2)?);
    let wl = omega_l(reg);
    let p = match kind {
        ProtocolKind::Ramsey => Protocol::Ramsey,
        ProtocolKind::Hahn => Protocol::HahnEcho,
        ProtocolKind::Dd => Protocol::Dd { pulses: args.pulses.unwrap_or(16) },
        ProtocolKind::FivePulse => {
            let d = PI / wl;
            Protocol::FivePulse { tau1: tau1.unwrap_or(d), tau2: tau2.or(tau1).unwrap_or(d) }
        }
        ProtocolKind::DdEseem => {
            let d = PI / (2.0 * wl);
            Protocol::DdEseem { tau1: tau1.unwrap_or(d), tau2: tau2.or(tau1).unwrap_or(d), pulses: args.pulses.unwrap_or(72) }
        }
    };
    if !p.is_correlation() && (tau1.is_some() || tau2.is_some()) {
        log::warn!("--tau1/--tau2 are ignored by {}", kind.name());
    }
    if matches!(kind, ProtocolKind::Ramsey | ProtocolKind::Hahn) && args.pulses.is_some() {
        log::warn!("--pulses is ignored by {}", kind.name());
    }
    p.validate()?;
    if let Protocol::FivePulse { tau1, tau2 } | Protocol::DdEseem { tau1, tau2, .. } = p {
        if !(tau1 > 0.0 && tau2 > 0.0) {
            return Err(CliError::Validation("tau1 and tau2 must be positive".into()));
        }
    }
    Ok(p)
}

/// 1000-point default sweeps.
pub fn default_grid(p: &Protocol) -> Vec<f64> {
    match p {
        Protocol::Ramsey => linspace(0.1e-6, 20e-6, 1000),
        Protocol::HahnEcho => linspace(0.1e-6, 50e-6, 1000),
        Protocol::Dd { .. } => linspace(0.1e-6, 5e-6, 1000),
        Protocol::FivePulse { .. } | Protocol::DdEseem { .. } => (0..1000).map(|k| k as f64 * 0.4e-6).collect(),
    }
}

fn grid_for(args: &ProtocolArgs, p: &Protocol) -> Result<Vec<f64>, CliError> {
    let g = match &args.grid {
        Some(s) => parse_grid(s)?,
        None => default_grid(p),
    };
    if g[0] < 0.0 {
        return Err(CliError::Validation("grid values must be >= 0".into()));
    }
    Ok(g)
}

fn noise_config(a: &NoiseArgs) -> Result<Option<NoiseConfig>, CliError> {
    if a.noiseless {
        return Ok(None);
    }
    let cfg = NoiseConfig { reps: a.reps, photons_bright: a.photons_bright, photons_dark: a.photons_dark, seed: a.seed };
    cfg.validate()?;
    Ok(Some(cfg))
}

fn protocol_json(p: &Protocol) -> serde_json::Value {
    serde_json::to_value(p).expect("protocol serializes")
}

pub fn simulate(a: &SimulateArgs, threads: usize) -> Result<(), CliError> {
    let start = Instant::now();
    let reg = load_register(&a.register)?;
    let proto = build_protocol(&a.protocol, &reg)?;
    let grid = grid_for(&a.protocol, &proto)?;
    let noise = noise_config(&a.noise)?;
    if matches!(proto, Protocol::DdEseem { .. }) && reg.spins.len() > spinscope_core::oracle::MAX_ORACLE_SPINS {
        return Err(CliError::Validation("dd_eseem is oracle-backed and limited to 12 spins".into()));
    }
    let trace = synthesize_trace(&reg, &proto, &grid, !a.no_decay, noise.as_ref())?;

    ensure_dir(&a.out)?;
    let digest = reg.digest();
    let seed = noise.map(|n| n.seed);
    let mut outputs = vec![write(&a.out.join("trace.json"), format!("{}\n", trace.to_json()).as_bytes())?];
    let mut csv = csv_preamble(&digest, seed);
    csv.push_str(&format!("{}_s,p\n", trace.sweep_name));
    for (x, v) in trace.sweep_values.iter().zip(&trace.values) {
        csv.push_str(&format!("{x:e},{v:e}\n"));
    }
    outputs.push(write(&a.out.join("trace.csv"), csv.as_bytes())?);

    let manifest = Manifest {
        tool: "spinscope",
        version: env!("CARGO_PKG_VERSION"),
        command: "simulate",
        register_path: a.register.display().to_string(),
        register_digest: digest.clone(),
        protocol: protocol_json(&proto),
        grid_points: grid.len(),
        grid_start_s: grid[0],
        grid_stop_s: *grid.last().unwrap(),
        include_decay: !a.no_decay,
        seed,
        noise: serde_json::to_value(noise).unwrap(),
        prng: noise.map(|_| PRNG_NAME.to_string()),
        threads,
        wall_time_s: start.elapsed().as_secs_f64(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    write_json(&a.out.join("manifest.json"), &manifest)?;

    let (lo, hi) = trace.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    println!("protocol     {}", proto.kind().name());
    println!("points       {}", grid.len());
    println!("p range      {lo:.6} .. {hi:.6}");
    if noise.is_some() {
        println!("acquisition  {:.3} s", trace.meta.acquisition_time_s);
    }
    println!("register     {digest}");
    println!("wrote        {}", a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct CheckRow {
    protocol: String,
    points: usize,
    max_abs_dev: f64,
    worst_at_s: f64,
    pass: bool,
}

#[derive(Serialize)]
struct CheckReport {
    register_digest: String,
    tolerance: f64,
    rows: Vec<CheckRow>,
    pass: bool,
}

/// Default suite limit; the oracle itself goes further.
const ORACLE_CHECK_MAX_SPINS: usize = 4;

pub fn oracle_check(a: &OracleCheckArgs) -> Result<(), CliError> {
    let reg = load_register(&a.register)?;
    if reg.spins.len() > ORACLE_CHECK_MAX_SPINS {
        return Err(CliError::Validation(format!(
            "default oracle suite supports at most {ORACLE_CHECK_MAX_SPINS} spins, register has {}",
            reg.spins.len()
        )));
    }
    if a.tolerance.is_nan() || a.tolerance < 0.0 {
        return Err(CliError::Validation("--tolerance must be >= 0".into()));
    }
    let taus = match &a.grid {
        Some(g) => parse_grid(g)?,
        None => linspace(0.05e-6, 20e-6, 200),
    };
    let t_free = linspace(0.0, 40e-6, 200);
    let wl = omega_l(&reg);
    let suite: Vec<(String, Protocol)> = vec![
        ("ramsey".into(), Protocol::Ramsey),
        ("hahn".into(), Protocol::HahnEcho),
        ("dd".into(), Protocol::Dd { pulses: 2 }),
        ("dd".into(), Protocol::Dd { pulses: 8 }),
        ("dd".into(), Protocol::Dd { pulses: 16 }),
        ("5p_eseem".into(), Protocol::FivePulse { tau1: PI / wl, tau2: PI / wl }),
        ("5p_eseem".into(), Protocol::FivePulse { tau1: 0.7e-6, tau2: 1.3e-6 }),
    ];
    if let Some(c) = &a.corrupt {
        let k = ProtocolKind::from_str(c)?;
        if !suite.iter().any(|(_, p)| p.kind() == k) {
            return Err(CliError::Validation(format!("{c} is not part of the oracle suite")));
        }
    }
    let corrupt_kind = a.corrupt.as_deref().map(ProtocolKind::from_str).transpose()?;
    // Negative control: the closed form sees transverse couplings off by 5%.
    let corrupted = reg.with_spins(
        reg.spins
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.a_zx *= 1.05;
                s
            })
            .collect(),
    );

    let oracle = Oracle::new(&reg)?;
    let mut rows = Vec::new();
    for (name, proto) in &suite {
        let grid = if proto.is_correlation() { &t_free } else { &taus };
        let model = if corrupt_kind == Some(proto.kind()) { &corrupted } else { &reg };
        let analytic = proto.evaluate_grid(model, grid, false)?;
        let devs: Vec<f64> = grid
            .par_iter()
            .zip(analytic.par_iter())
            .map(|(&x, &v)| -> Result<f64, CliError> { Ok((oracle.simulate(&proto.descriptor(x)?)? - v).abs()) })
            .collect::<Result<_, _>>()?;
        let (i, dev) = devs.iter().enumerate().fold((0, 0.0f64), |b, (i, &d)| if d > b.1 { (i, d) } else { b });
        let label = match proto {
            Protocol::Dd { pulses } => format!("{name}(N={pulses})"),
            Protocol::FivePulse { tau1, tau2 } => format!("{name}(tau1={tau1:.3e},tau2={tau2:.3e})"),
            _ => name.clone(),
        };
        rows.push(CheckRow { protocol: label, points: grid.len(), max_abs_dev: dev, worst_at_s: grid[i], pass: dev <= a.tolerance });
    }
    let pass = rows.iter().all(|r| r.pass);
    println!("{:<40} {:>6} {:>12}  result", "protocol", "points", "max |dev|");
    for r in &rows {
        println!("{:<40} {:>6} {:>12.3e}  {}", r.protocol, r.points, r.max_abs_dev, if r.pass { "PASS" } else { "FAIL" });
    }
    let report = CheckReport { register_digest: reg.digest(), tolerance: a.tolerance, rows, pass };
    if let Some(dir) = &a.out {
        ensure_dir(dir)?;
        write_json(&dir.join("oracle_check.json"), &report)?;
    }
    if !pass {
        let failed: Vec<&str> = report.rows.iter().filter(|r| !r.pass).map(|r| r.protocol.as_str()).collect();
        return Err(CliError::Tolerance(format!("{} exceeds {:e}", failed.join(", "), a.tolerance)));
    }
    Ok(())
}

pub fn fisher(a: &FisherArgs) -> Result<(), CliError> {
    let reg = load_register(&a.register)?;
    if reg.spins.is_empty() {
        return Err(CliError::Validation("register has no nuclear spins to estimate".into()));
    }
    let proto = build_protocol(&a.protocol, &reg)?;
    let grid = grid_for(&a.protocol, &proto)?;
    let fd_step = match a.fd_step {
        Some(h) if h > 0.0 && h.is_finite() => FdStep::Fixed(h),
        Some(h) => return Err(CliError::Validation(format!("--fd-step must be positive, got {h}"))),
        None => FdStep::Auto,
    };
    let opts = FisherOptions { fd_step, include_decay: !a.no_decay, ..Default::default() };
    let metric = match a.metric {
        MetricArg::PerType => DistanceMetric::PerType,
        MetricArg::Euclidean => DistanceMetric::Euclidean,
    };
    let res = analyze(&reg, &proto, &grid, &opts, a.reps, metric)?;
    let n = reg.spins.len();

    println!("protocol {}  points {}  reps {}", proto.kind().name(), grid.len(), a.reps);
    println!("{:<12} {:>12} {:>12} {:>12} {:>12}  detectable", "spin", "A_zz (Hz)", "bound", "A_zx (Hz)", "bound");
    let fmt_b = |b: Option<f64>| b.map_or("inf".to_string(), |v| format!("{v:.4e}"));
    for (j, s) in reg.spins.iter().enumerate() {
        println!(
            "{:<12} {:>12.1} {:>12} {:>12.1} {:>12}  {}",
            s.label,
            s.a_zz,
            fmt_b(res.bounds[j]),
            s.a_zx,
            fmt_b(res.bounds[n + j]),
            if res.detectable[j] { "yes" } else { "no" }
        );
    }
    println!("detectable {}/{}", res.detectable.iter().filter(|&&d| d).count(), n);
    if res.provenance.clamped_fraction > 0.01 {
        println!("warning: p clamped on {:.1}% of grid points", 100.0 * res.provenance.clamped_fraction);
    }
    if !res.null_space.is_empty() {
        println!("singular FIM: {} null direction(s)", res.null_space.len());
        for v in &res.null_space {
            let terms: Vec<String> = v
                .iter()
                .enumerate()
                .filter(|(_, c)| c.abs() > 0.1)
                .map(|(i, c)| format!("{c:+.3}·{}", res.labels[i]))
                .collect();
            println!("  {}", terms.join(" "));
        }
    }
    for e in &res.ellipses {
        println!(
            "ellipse {} ↔ {}: cov({}, {}) = {:.3e}{}",
            reg.spins[e.spin].label,
            reg.spins[e.partner_spin].label,
            res.labels[e.param],
            res.labels[e.partner_param],
            e.covariance,
            if e.is_line { " (line)" } else { "" }
        );
    }
    if let Some(dir) = &a.out {
        ensure_dir(dir)?;
        write_json(&dir.join("fisher.json"), &res)?;
        println!("wrote {}", dir.join("fisher.json").display());
    }
    Ok(())
}

#[derive(Serialize)]
struct NucleusPrediction {
    label: String,
    species: String,
    f_alpha_hz: f64,
    f_beta_hz: f64,
    alpha_spots_s: SpotLists,
    beta_spots_s: SpotLists,
}

#[derive(Serialize)]
struct SpeciesLine {
    species: String,
    larmor_hz: f64,
    amplitude: f64,
}

#[derive(Serialize)]
struct SpectrumReport {
    register_digest: String,
    seed: Option<u64>,
    protocol: serde_json::Value,
    tau_values_s: Vec<f64>,
    peaks: Vec<Peak>,
    pairing: Option<Pairing>,
    predictions: Vec<NucleusPrediction>,
    species: Vec<SpeciesLine>,
}

fn with_taus(p: &Protocol, tau: f64) -> Protocol {
    match *p {
        Protocol::FivePulse { .. } => Protocol::FivePulse { tau1: tau, tau2: tau },
        Protocol::DdEseem { pulses, .. } => Protocol::DdEseem { tau1: tau, tau2: tau, pulses },
        other => other,
    }
}

pub fn spectrum(a: &SpectrumArgs) -> Result<(), CliError> {
    let reg = load_register(&a.register)?;
    let base = build_protocol(&a.protocol, &reg)?;
    if !base.is_correlation() {
        return Err(CliError::Validation(format!(
            "spectrum needs 5p_eseem or dd_eseem, got {}",
            base.kind().name()
        )));
    }
    if !(a.threshold > 0.0 && a.threshold < 1.0) {
        return Err(CliError::Validation("--threshold must lie in (0, 1)".into()));
    }
    let times = grid_for(&a.protocol, &base)?;
    let noise = noise_config(&a.noise)?;
    let taus: Vec<f64> = match (&a.tau_sweep, &a.protocol.tau1) {
        (Some(s), _) => parse_grid(s)?,
        (None, Some(_)) => vec![],
        (None, None) => parse_grid("10us:500us:10us")?,
    };
    let protocols: Vec<Protocol> = if taus.is_empty() { vec![base] } else { taus.iter().map(|&t| with_taus(&base, t)).collect() };
    let opts = SpectrumOptions {
        window: match a.window {
            WindowArg::None => Window::None,
            WindowArg::Hann => Window::Hann,
        },
        zero_pad: a.zero_pad,
    };
    let oracle = if matches!(base, Protocol::DdEseem { .. }) { Some(Oracle::new(&reg)?) } else { None };
    let spectra: Vec<Spectrum> = protocols
        .par_iter()
        .map(|p| -> Result<Spectrum, CliError> {
            let signal: Vec<f64> = match (&oracle, p) {
                (Some(o), Protocol::DdEseem { tau1, tau2, pulses }) => times
                    .iter()
                    .map(|&t| {
                        spinscope_core::signals::dd_eseem_with(
                            o,
                            &reg,
                            &spinscope_core::EseemTiming::new(*tau1, *tau2, t),
                            *pulses,
                            &spinscope_core::SignalOptions { include_decay: !a.no_decay, ..Default::default() },
                        )
                    })
                    .collect::<Result<_, _>>()?,
                _ => p.evaluate_grid(&reg, &times, !a.no_decay)?,
            };
            let mut values: Vec<f64> = signal.iter().map(|&s| probability_from_signal(s)).collect::<Result<_, _>>()?;
            if let Some(cfg) = &noise {
                values = values.iter().enumerate().map(|(i, &p)| sample_point(p, cfg, i as u64)).collect();
            }
            Ok(fft_spectrum(&times, &values, &opts)?)
        })
        .collect::<Result<_, _>>()?;

    ensure_dir(&a.out)?;
    let digest = reg.digest();
    let seed = noise.map(|n| n.seed);
    let preamble = csv_preamble(&digest, seed);
    let write_spec = |name: &str, s: &Spectrum| -> Result<(), CliError> {
        let mut buf = preamble.clone().into_bytes();
        write_spectrum_csv(s, &mut buf)?;
        write(&a.out.join(name), &buf)?;
        Ok(())
    };

    let mut projection = spectra[0].clone();
    for s in &spectra[1..] {
        for (p, &v) in projection.amps.iter_mut().zip(&s.amps) {
            *p = p.max(v);
        }
    }
    let peaks = find_peaks(&projection, a.threshold)?;
    let mut pairing = None;
    if spectra.len() == 1 {
        write_spec("spectrum.csv", &spectra[0])?;
    } else {
        for (i, s) in spectra.iter().enumerate() {
            write_spec(&format!("spectrum_{i:03}.csv"), s)?;
        }
        write_spec("projection.csv", &projection)?;
        let sel = BinSelection::Bins(peaks.iter().map(|p| p.bin).collect());
        if spectra.len() >= 5 && peaks.len() >= 2 {
            let map = tau_sweep_correlation(&spectra, &taus, &sel, Statistic::Pearson)?;
            let mut buf = preamble.clone().into_bytes();
            write_correlation_csv(&map, &mut buf)?;
            write(&a.out.join("correlation.csv"), &buf)?;
            pairing = Some(pair_frequencies(&map, &peaks)?);
        } else {
            log::warn!("pairing needs >= 5 τ values and >= 2 peaks");
        }
    }

    let frames = reg.frames()?;
    let predictions: Vec<NucleusPrediction> = reg
        .spins
        .iter()
        .zip(&frames)
        .map(|(s, f)| NucleusPrediction {
            label: s.label.clone(),
            species: s.species.clone(),
            f_alpha_hz: f.omega_0 / TWO_PI,
            f_beta_hz: f.omega_1 / TWO_PI,
            alpha_spots_s: blind_bright_spots(f, Branch::Alpha, 3),
            beta_spots_s: blind_bright_spots(f, Branch::Beta, 3),
        })
        .collect();

    let baths = if reg.spins.is_empty() { Vec::new() } else { baths_by_species(&reg)? };
    let hw = 2.0 * projection.bin_width();
    let species: Vec<SpeciesLine> = baths
        .iter()
        .map(|(name, b)| {
            let f = b.omega_l / TWO_PI;
            SpeciesLine { species: name.clone(), larmor_hz: f, amplitude: projection.amplitude_near(f, hw) }
        })
        .collect();
    if baths.len() >= 2 {
        let mut csv = preamble.clone();
        csv.push_str(&format!("tau_s,{}+{}\n", baths[0].0, baths[1].0));
        for tau in linspace(0.1e-6, 20e-6, 2000) {
            csv.push_str(&format!("{tau:e},{:e}\n", bispecies_dd(&baths[0].1, &baths[1].1, tau)));
        }
        write(&a.out.join("baths_dd.csv"), csv.as_bytes())?;
    }

    let report = SpectrumReport {
        register_digest: digest,
        seed,
        protocol: protocol_json(&base),
        tau_values_s: taus,
        peaks: peaks.clone(),
        pairing: pairing.clone(),
        predictions,
        species,
    };
    write_json(&a.out.join("spectrum_report.json"), &report)?;

    println!("spectra {}  peaks {}", spectra.len(), peaks.len());
    for p in &peaks {
        println!("  peak {:>12.1} Hz  amp {:.3e}", p.freq, p.amp);
    }
    if let Some(pr) = &pairing {
        for pair in &pr.pairs {
            println!("  pair {:.1} Hz ↔ {:.1} Hz  corr {:.3}", pair.freq_a, pair.freq_b, pair.score);
        }
    }
    for s in &report.species {
        println!("  species {:<6} Larmor {:.1} Hz  amp {:.3e}", s.species, s.larmor_hz, s.amplitude);
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn register_validate(path: &Path) -> Result<(), CliError> {
    let reg = load_register(path)?;
    let frames = reg.frames()?;
    let mut by_species: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &reg.spins {
        *by_species.entry(s.species.as_str()).or_default() += 1;
    }
    println!("register   {}", path.display());
    println!("digest     {}", reg.digest());
    println!("electron   s0 = {}, s1 = {}", reg.electron.s0, reg.electron.s1);
    println!("B          {:.6e} T", reg.environment.b_field);
    println!("T1, T2     {} s, {} s", reg.environment.t1, reg.environment.t2);
    println!("spins      {} {:?}", reg.spins.len(), by_species);
    if !frames.is_empty() {
        println!("{:<10} {:>14} {:>14} {:>12}", "label", "f_alpha (Hz)", "f_beta (Hz)", "k_depth");
        for (s, f) in reg.spins.iter().zip(&frames) {
            println!("{:<10} {:>14.1} {:>14.1} {:>12.4e}", s.label, f.omega_0 / TWO_PI, f.omega_1 / TWO_PI, f.k_depth);
        }
    }
    println!("ok");
    Ok(())
}
