//! Frequency-domain analysis of correlation traces: spectra, peaks,
//! τ-sweep correlation maps and peak pairing.

use std::io::Write;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::measurement::Trace;
use crate::register::DerivedSpinFrame;
use crate::TWO_PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    None,
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumOptions {
    pub window: Window,
    pub zero_pad: usize,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        SpectrumOptions { window: Window::None, zero_pad: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Spectrum {
    /// Hz, uniform from 0.
    pub freqs: Vec<f64>,
    /// |X(f)| scaled so a unit-amplitude tone peaks near 1.
    pub amps: Vec<f64>,
    pub window: Window,
    pub source: String,
}

impl Spectrum {
    pub fn bin_width(&self) -> f64 {
        self.freqs.get(1).copied().unwrap_or(0.0)
    }

    pub fn nearest_bin(&self, f: f64) -> usize {
        let df = self.bin_width();
        if df == 0.0 {
            return 0;
        }
        ((f / df).round().max(0.0) as usize).min(self.freqs.len() - 1)
    }

    /// Maximum amplitude within ±`half_width` Hz of `f`.
    pub fn amplitude_near(&self, f: f64, half_width: f64) -> f64 {
        self.freqs
            .iter()
            .zip(&self.amps)
            .filter(|(x, _)| (*x - f).abs() <= half_width)
            .map(|(_, a)| *a)
            .fold(0.0, f64::max)
    }
}

fn sample_step(times: &[f64]) -> Result<f64> {
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(Error::NonUniformGrid);
    }
    for w in times.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt {
            return Err(Error::NonUniformGrid);
        }
    }
    Ok(dt)
}

fn digest_values(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Magnitude spectrum of uniformly sampled `values` after mean removal.
pub fn fft_spectrum(times: &[f64], values: &[f64], opts: &SpectrumOptions) -> Result<Spectrum> {
    let n = values.len();
    if n < 16 || times.len() != n {
        return Err(Error::InsufficientData(format!("need >= 16 uniformly sampled points, got {n}")));
    }
    if opts.zero_pad == 0 {
        return Err(Error::validation("zero_pad", "must be >= 1"));
    }
    let dt = sample_step(times)?;
    let constant = values.iter().all(|&v| v == values[0]);
    let mean = if constant { values[0] } else { values.iter().sum::<f64>() / n as f64 };
    let win: Vec<f64> = match opts.window {
        Window::None => vec![1.0; n],
        Window::Hann => (0..n).map(|i| 0.5 - 0.5 * (TWO_PI * i as f64 / (n - 1) as f64).cos()).collect(),
    };
    let wsum: f64 = win.iter().sum();
    let m = n * opts.zero_pad;
    let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); m];
    for i in 0..n {
        buf[i] = Complex::new((values[i] - mean) * win[i], 0.0);
    }
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    let half = m / 2 + 1;
    let df = 1.0 / (m as f64 * dt);
    Ok(Spectrum {
        freqs: (0..half).map(|k| k as f64 * df).collect(),
        amps: buf[..half].iter().map(|z| 2.0 * z.norm() / wsum).collect(),
        window: opts.window,
        source: digest_values(values),
    })
}

pub fn spectrum_of_trace(trace: &Trace, opts: &SpectrumOptions) -> Result<Spectrum> {
    fft_spectrum(&trace.sweep_values, &trace.values, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Peak {
    pub freq: f64,
    pub amp: f64,
    pub bin: usize,
}

/// Local maxima above `threshold_rel·max`, refined by a 3-point parabola.
pub fn find_peaks(spec: &Spectrum, threshold_rel: f64) -> Result<Vec<Peak>> {
    if !(threshold_rel > 0.0 && threshold_rel < 1.0) {
        return Err(Error::validation("threshold_rel", "must be in (0, 1)"));
    }
    let a = &spec.amps;
    let max = a.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 || a.len() < 3 {
        return Ok(Vec::new());
    }
    let df = spec.bin_width();
    let mut out = Vec::new();
    for i in 1..a.len() - 1 {
        if a[i] > a[i - 1] && a[i] >= a[i + 1] && a[i] > threshold_rel * max {
            let (l, c, r) = (a[i - 1], a[i], a[i + 1]);
            let denom = l - 2.0 * c + r;
            let delta = if denom != 0.0 { 0.5 * (l - r) / denom } else { 0.0 };
            out.push(Peak { freq: spec.freqs[i] + delta * df, amp: c - 0.25 * (l - r) * delta, bin: i });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    #[default]
    Pearson,
    Spearman,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BinSelection {
    All,
    /// Bins with frequency in [lo, hi] Hz.
    Band(f64, f64),
    Bins(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationMap {
    pub freqs: Vec<f64>,
    pub bins: Vec<usize>,
    /// Row-major, symmetric, unit diagonal.
    pub corr: Vec<Vec<f64>>,
    /// Bins whose amplitude did not vary with τ (correlations set to 0).
    pub zero_variance: Vec<bool>,
    pub tau_values: Vec<f64>,
}

impl CorrelationMap {
    pub fn index_of(&self, freq: f64) -> usize {
        let mut best = 0;
        for (i, f) in self.freqs.iter().enumerate() {
            if (f - freq).abs() < (self.freqs[best] - freq).abs() {
                best = i;
            }
        }
        best
    }
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Centered, unit-norm profile; None for zero variance.
fn standardize(x: &[f64]) -> Option<Vec<f64>> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if norm <= 1e-12 * scale.max(f64::MIN_POSITIVE) || norm == 0.0 {
        return None;
    }
    Some(c.into_iter().map(|v| v / norm).collect())
}

/// Correlates the amplitude-vs-τ profiles of the selected bins across one
/// spectrum per τ value.
pub fn tau_sweep_correlation(
    spectra: &[Spectrum],
    tau_values: &[f64],
    selection: &BinSelection,
    statistic: Statistic,
) -> Result<CorrelationMap> {
    if spectra.len() < 5 || spectra.len() != tau_values.len() {
        return Err(Error::InsufficientData(format!(
            "need >= 5 spectra with matching τ values, got {} and {}",
            spectra.len(),
            tau_values.len()
        )));
    }
    let nbins = spectra[0].amps.len();
    if spectra.iter().any(|s| s.amps.len() != nbins) {
        return Err(Error::validation("spectra", "must share one frequency grid"));
    }
    let bins: Vec<usize> = match selection {
        BinSelection::All => (0..nbins).collect(),
        BinSelection::Band(lo, hi) => (0..nbins).filter(|&i| spectra[0].freqs[i] >= *lo && spectra[0].freqs[i] <= *hi).collect(),
        BinSelection::Bins(b) => {
            if b.iter().any(|&i| i >= nbins) {
                return Err(Error::validation("bins", "index beyond spectrum length"));
            }
            b.clone()
        }
    };
    let profiles: Vec<Option<Vec<f64>>> = bins
        .iter()
        .map(|&b| {
            let raw: Vec<f64> = spectra.iter().map(|s| s.amps[b]).collect();
            let x = match statistic {
                Statistic::Pearson => raw,
                Statistic::Spearman => ranks(&raw),
            };
            standardize(&x)
        })
        .collect();
    let m = bins.len();
    let mut corr = vec![vec![0.0; m]; m];
    for i in 0..m {
        corr[i][i] = 1.0;
        for j in i + 1..m {
            let c = match (&profiles[i], &profiles[j]) {
                (Some(a), Some(b)) => a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0),
                _ => 0.0,
            };
            corr[i][j] = c;
            corr[j][i] = c;
        }
    }
    Ok(CorrelationMap {
        freqs: bins.iter().map(|&b| spectra[0].freqs[b]).collect(),
        bins,
        corr,
        zero_variance: profiles.iter().map(|p| p.is_none()).collect(),
        tau_values: tau_values.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrequencyPair {
    pub freq_a: f64,
    pub freq_b: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pairing {
    pub pairs: Vec<FrequencyPair>,
    pub unpaired: Vec<f64>,
}

/// Greedy matching: highest correlation first, each peak used once, ties
/// broken toward lower frequencies.
pub fn pair_frequencies(map: &CorrelationMap, peaks: &[Peak]) -> Result<Pairing> {
    if peaks.len() < 2 {
        return Err(Error::InsufficientData("need at least two peaks".into()));
    }
    let mut sorted: Vec<Peak> = peaks.to_vec();
    sorted.sort_by(|a, b| a.freq.total_cmp(&b.freq));
    let idx: Vec<usize> = sorted.iter().map(|p| map.index_of(p.freq)).collect();
    let mut cand = Vec::new();
    for i in 0..sorted.len() {
        for j in i + 1..sorted.len() {
            cand.push((map.corr[idx[i]][idx[j]], i, j));
        }
    }
    cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used = vec![false; sorted.len()];
    let mut pairs = Vec::new();
    for (score, i, j) in cand {
        if !used[i] && !used[j] {
            used[i] = true;
            used[j] = true;
            pairs.push(FrequencyPair { freq_a: sorted[i].freq, freq_b: sorted[j].freq, score });
        }
    }
    let unpaired = (0..sorted.len()).filter(|&i| !used[i]).map(|i| sorted[i].freq).collect();
    Ok(Pairing { pairs, unpaired })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MqLine {
    /// Hz, folded to be positive.
    pub freq: f64,
    /// (spin index, branch 0 = α / 1 = β, coefficient ±1).
    pub composition: Vec<(usize, u8, i8)>,
}

/// Sums and differences of up to `max_order + 1` single-quantum frequencies.
/// Order 1 on one spin gives ω_α, ω_β, ω_α+ω_β, |ω_α-ω_β|.
pub fn multiquantum_lines(frames: &[DerivedSpinFrame], max_order: usize) -> Vec<MqLine> {
    let base: Vec<(usize, u8, f64)> = frames
        .iter()
        .enumerate()
        .flat_map(|(j, f)| [(j, 0u8, f.omega_0 / TWO_PI), (j, 1u8, f.omega_1 / TWO_PI)])
        .collect();
    let mut out = Vec::new();
    let mut chosen = Vec::new();
    fn recurse(
        base: &[(usize, u8, f64)],
        start: usize,
        left: usize,
        chosen: &mut Vec<usize>,
        out: &mut Vec<MqLine>,
    ) {
        if !chosen.is_empty() {
            // First coefficient fixed to +1; the rest take both signs.
            let k = chosen.len();
            for mask in 0..(1usize << (k - 1)) {
                let mut f = base[chosen[0]].2;
                let mut comp = vec![(base[chosen[0]].0, base[chosen[0]].1, 1i8)];
                for (pos, &c) in chosen.iter().enumerate().skip(1) {
                    let sign: i8 = if mask >> (pos - 1) & 1 == 1 { -1 } else { 1 };
                    f += sign as f64 * base[c].2;
                    comp.push((base[c].0, base[c].1, sign));
                }
                if f < 0.0 {
                    f = -f;
                    comp.iter_mut().for_each(|c| c.2 = -c.2);
                }
                if f > 0.0 {
                    out.push(MqLine { freq: f, composition: comp });
                }
            }
        }
        if left == 0 {
            return;
        }
        for i in start..base.len() {
            chosen.push(i);
            recurse(base, i + 1, left - 1, chosen, out);
            chosen.pop();
        }
    }
    recurse(&base, 0, max_order.max(1) + 1, &mut chosen, &mut out);
    out.sort_by(|a, b| a.freq.total_cmp(&b.freq));
    out
}

pub fn write_spectrum_csv<W: Write>(spec: &Spectrum, mut w: W) -> Result<()> {
    writeln!(w, "freq_hz,amp")?;
    for (f, a) in spec.freqs.iter().zip(&spec.amps) {
        writeln!(w, "{f},{a}")?;
    }
    Ok(())
}

pub fn write_correlation_csv<W: Write>(map: &CorrelationMap, mut w: W) -> Result<()> {
    writeln!(w, "freq_i_hz,freq_j_hz,corr")?;
    for (i, fi) in map.freqs.iter().enumerate() {
        for (j, fj) in map.freqs.iter().enumerate() {
            writeln!(w, "{fi},{fj},{}", map.corr[i][j])?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::register::{ElectronSpin, Environment, NuclearSpin, Register};
    use crate::signals::{five_pulse_eseem, EseemTiming, SignalOptions};

    fn grid(n: usize, dt: f64) -> Vec<f64> {
        (0..n).map(|i| i as f64 * dt).collect()
    }

    #[test]
    fn constant_trace_has_zero_spectrum() {
        let t = grid(64, 1e-6);
        let s = fft_spectrum(&t, &vec![0.7; 64], &SpectrumOptions::default()).unwrap();
        assert!(s.amps.iter().all(|&a| a < 1e-14));
        assert!(find_peaks(&s, 0.1).unwrap().is_empty());
    }

    #[test]
    fn single_tone() {
        let t = grid(500, 0.5e-6);
        let f0 = 123.4e3;
        let y: Vec<f64> = t.iter().map(|x| (TWO_PI * f0 * x).cos()).collect();
        let s = fft_spectrum(&t, &y, &SpectrumOptions::default()).unwrap();
        let p = find_peaks(&s, 0.5).unwrap();
        assert_eq!(p.len(), 1);
        assert!((p[0].freq - f0).abs() < s.bin_width());
        assert!((p[0].amp - 1.0).abs() < 0.05);
    }

    #[test]
    fn two_tones_ordered() {
        let t = grid(1000, 0.4e-6);
        let y: Vec<f64> = t.iter().map(|x| (TWO_PI * 100e3 * x).cos() + 0.3 * (TWO_PI * 300e3 * x).cos()).collect();
        let s = fft_spectrum(&t, &y, &SpectrumOptions { window: Window::Hann, zero_pad: 4 }).unwrap();
        let p = find_peaks(&s, 0.1).unwrap();
        assert_eq!(p.len(), 2);
        assert!(p[0].freq < p[1].freq && p[0].amp > p[1].amp);
    }

    #[test]
    fn rejects_bad_grids() {
        let mut t = grid(32, 1e-6);
        t[5] += 0.3e-6;
        assert!(matches!(fft_spectrum(&t, &[0.0; 32], &SpectrumOptions::default()), Err(Error::NonUniformGrid)));
        assert!(fft_spectrum(&grid(8, 1.0), &[0.0; 8], &SpectrumOptions::default()).is_err());
    }

    #[test]
    fn one_spin_eseem_peaks_at_branch_frequencies() {
        let r = Register::new(ElectronSpin::nv_like(), Environment::default(), vec![NuclearSpin::carbon13("c", 60e3, 35e3)]).unwrap();
        let f = r.frames().unwrap()[0];
        let t = grid(1000, 0.4e-6);
        let tau = 0.65e-6;
        let y: Vec<f64> = t
            .iter()
            .map(|&x| five_pulse_eseem(&r, &EseemTiming::new(tau, tau, x), &SignalOptions::default()).unwrap())
            .collect();
        let s = fft_spectrum(&t, &y, &SpectrumOptions { window: Window::Hann, zero_pad: 4 }).unwrap();
        let mut p = find_peaks(&s, 0.05).unwrap();
        p.sort_by(|a, b| b.amp.total_cmp(&a.amp));
        let mut top: Vec<f64> = p.iter().take(2).map(|p| p.freq).collect();
        top.sort_by(f64::total_cmp);
        let mut want = [f.omega_0 / TWO_PI, f.omega_1 / TWO_PI];
        want.sort_by(f64::total_cmp);
        for (a, b) in top.iter().zip(want) {
            assert!((a - b).abs() < s.bin_width(), "{a} vs {b}");
        }
    }

    fn fake_spectra(profiles: &[Vec<f64>]) -> Vec<Spectrum> {
        let ntau = profiles[0].len();
        (0..ntau)
            .map(|t| Spectrum {
                freqs: (0..profiles.len()).map(|i| i as f64).collect(),
                amps: profiles.iter().map(|p| p[t]).collect(),
                window: Window::None,
                source: String::new(),
            })
            .collect()
    }

    #[test]
    fn correlation_map_conventions() {
        let a: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin().abs()).collect();
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v + 0.1).collect();
        let c = vec![0.5; 8];
        let spectra = fake_spectra(&[a, b, c]);
        let taus: Vec<f64> = (0..8).map(|i| i as f64).collect();
        for stat in [Statistic::Pearson, Statistic::Spearman] {
            let m = tau_sweep_correlation(&spectra, &taus, &BinSelection::All, stat).unwrap();
            assert!((m.corr[0][1] - 1.0).abs() < 1e-12);
            assert_eq!(m.corr[0][2], 0.0);
            assert_eq!(m.zero_variance, vec![false, false, true]);
            for i in 0..3 {
                assert_eq!(m.corr[i][i], 1.0);
                for j in 0..3 {
                    assert_eq!(m.corr[i][j], m.corr[j][i]);
                }
            }
        }
        assert!(tau_sweep_correlation(&spectra[..4], &taus[..4], &BinSelection::All, Statistic::Pearson).is_err());
    }

    #[test]
    fn greedy_pairing() {
        let map = CorrelationMap {
            freqs: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            bins: vec![0, 1, 2, 3, 4],
            corr: vec![
                vec![1.0, 0.1, 0.9, 0.2, 0.3],
                vec![0.1, 1.0, 0.0, 0.95, 0.1],
                vec![0.9, 0.0, 1.0, 0.1, 0.2],
                vec![0.2, 0.95, 0.1, 1.0, 0.1],
                vec![0.3, 0.1, 0.2, 0.1, 1.0],
            ],
            zero_variance: vec![false; 5],
            tau_values: vec![],
        };
        let peaks: Vec<Peak> = (1..=5).map(|i| Peak { freq: i as f64, amp: 1.0, bin: i }).collect();
        let p = pair_frequencies(&map, &peaks).unwrap();
        assert_eq!(p.pairs.len(), 2);
        assert_eq!((p.pairs[0].freq_a, p.pairs[0].freq_b), (2.0, 4.0));
        assert_eq!((p.pairs[1].freq_a, p.pairs[1].freq_b), (1.0, 3.0));
        assert_eq!(p.unpaired, vec![5.0]);
        let two = pair_frequencies(&map, &peaks[..2]).unwrap();
        assert_eq!(two.pairs.len(), 1);
        assert!(pair_frequencies(&map, &peaks[..1]).is_err());
    }

    #[test]
    fn multiquantum_enumeration() {
        let r = Register::new(ElectronSpin::nv_like(), Environment::default(), vec![NuclearSpin::carbon13("c", 60e3, 35e3)]).unwrap();
        let f = r.frames().unwrap();
        let lines = multiquantum_lines(&f, 1);
        assert_eq!(lines.len(), 4);
        let (a, b) = (f[0].omega_0 / TWO_PI, f[0].omega_1 / TWO_PI);
        let mut want = vec![a, b, a + b, (a - b).abs()];
        want.sort_by(f64::total_cmp);
        for (l, w) in lines.iter().zip(want) {
            assert!((l.freq - w).abs() < 1e-6);
        }
    }

    #[test]
    fn csv_export() {
        let s = Spectrum { freqs: vec![0.0, 1.0], amps: vec![0.5, 0.25], window: Window::None, source: String::new() };
        let mut buf = Vec::new();
        write_spectrum_csv(&s, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "freq_hz,amp\n0,0.5\n1,0.25\n");
    }
}
