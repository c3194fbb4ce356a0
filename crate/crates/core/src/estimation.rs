//! Fisher information over the 2n hyperfine parameters, Cramér-Rao bounds,
//! detectability and covariance ellipses.
//!
//! Parameter layout: `[A_zz(0..n), A_zx(0..n)]`, all in Hz.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::check_grid;
use crate::protocol::Protocol;
use crate::register::{DerivedSpinFrame, Register};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn from_register(register: &Register) -> Self {
        let zz = register.spins.iter().map(|s| s.a_zz);
        let zx = register.spins.iter().map(|s| s.a_zx);
        ParamVector { values: zz.chain(zx).collect() }
    }

    pub fn n_spins(&self) -> usize {
        self.values.len() / 2
    }

    pub fn a_zz(&self, j: usize) -> f64 {
        self.values[j]
    }

    pub fn a_zx(&self, j: usize) -> f64 {
        self.values[self.n_spins() + j]
    }

    /// Copy of `register` with couplings replaced by this vector. No
    /// validation: finite-difference steps may push A_zx below zero.
    pub fn apply(&self, register: &Register) -> Register {
        let n = self.n_spins();
        let mut r = register.clone();
        for (j, s) in r.spins.iter_mut().enumerate() {
            s.a_zz = self.values[j];
            s.a_zx = self.values[n + j];
        }
        r
    }

    pub fn label(register: &Register, i: usize) -> String {
        let n = register.spins.len();
        if i < n {
            format!("A_zz[{}]", register.spins[i].label)
        } else {
            format!("A_zx[{}]", register.spins[i - n].label)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FdStep {
    /// max(10 Hz, 1e-4·|param|)
    Auto,
    Fixed(f64),
}

impl FdStep {
    pub fn step(&self, value: f64) -> f64 {
        match *self {
            FdStep::Auto => (1e-4 * value.abs()).max(10.0),
            FdStep::Fixed(h) => h,
        }
    }

    fn halved(&self, value: f64) -> FdStep {
        FdStep::Fixed(self.step(value) / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherOptions {
    pub fd_step: FdStep,
    pub p_floor: f64,
    pub include_decay: bool,
}

impl Default for FisherOptions {
    fn default() -> Self {
        FisherOptions { fd_step: FdStep::Auto, p_floor: 1e-6, include_decay: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FimReport {
    pub fim: DMatrix<f64>,
    /// Fraction of grid points where p hit the clamp.
    pub clamped_fraction: f64,
}

fn probabilities(register: &Register, protocol: &Protocol, grid: &[f64], opts: &FisherOptions) -> Result<Vec<f64>> {
    let lo = opts.p_floor;
    Ok(protocol
        .evaluate_grid(register, grid, opts.include_decay)?
        .into_iter()
        .map(|s| ((1.0 + s) / 2.0).clamp(lo, 1.0 - lo))
        .collect())
}

fn derivative_rows(
    register: &Register,
    protocol: &Protocol,
    grid: &[f64],
    opts: &FisherOptions,
    steps: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let theta = ParamVector::from_register(register);
    (0..theta.values.len())
        .into_par_iter()
        .map(|i| {
            let h = steps[i];
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus.values[i] += h;
            minus.values[i] -= h;
            let pp = probabilities(&plus.apply(register), protocol, grid, opts)?;
            let pm = probabilities(&minus.apply(register), protocol, grid, opts)?;
            Ok(pp.iter().zip(&pm).map(|(a, b)| (a - b) / (2.0 * h)).collect())
        })
        .collect()
}

fn fim_with_steps(
    register: &Register,
    protocol: &Protocol,
    grid: &[f64],
    opts: &FisherOptions,
    steps: &[f64],
) -> Result<FimReport> {
    check_grid(grid)?;
    protocol.validate()?;
    if !(opts.p_floor > 0.0 && opts.p_floor < 0.5) {
        return Err(Error::validation("p_floor", "must be in (0, 0.5)"));
    }
    if steps.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::validation("fd_step", "must be > 0"));
    }
    let p0 = probabilities(register, protocol, grid, opts)?;
    let raw = protocol.evaluate_grid(register, grid, opts.include_decay)?;
    let clamped = raw
        .iter()
        .filter(|&&s| {
            let p = (1.0 + s) / 2.0;
            p < opts.p_floor || p > 1.0 - opts.p_floor
        })
        .count();
    let clamped_fraction = clamped as f64 / grid.len() as f64;
    if clamped_fraction > 0.01 {
        log::warn!("probability clamp active on {:.1}% of grid points", 100.0 * clamped_fraction);
    }
    let d = derivative_rows(register, protocol, grid, opts, steps)?;
    let weight: Vec<f64> = p0.iter().map(|p| 1.0 / (p * (1.0 - p))).collect();
    let m = d.len();
    let mut fim = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let mut acc = 0.0;
            for t in 0..grid.len() {
                acc += d[i][t] * d[j][t] * weight[t];
            }
            fim[(i, j)] = acc;
            fim[(j, i)] = acc;
        }
    }
    Ok(FimReport { fim, clamped_fraction })
}

/// F_ij = Σ_x ∂_i p ∂_j p / (p(1-p)) with central differences.
pub fn fisher_matrix(register: &Register, protocol: &Protocol, grid: &[f64], opts: &FisherOptions) -> Result<FimReport> {
    let theta = ParamVector::from_register(register);
    let steps: Vec<f64> = theta.values.iter().map(|&v| opts.fd_step.step(v)).collect();
    fim_with_steps(register, protocol, grid, opts, &steps)
}

/// Largest relative change of a FIM entry when the step is halved, over
/// entries above `1e-6·max|F|`. Values above 0.01 flag an unreliable step.
pub fn fd_consistency(register: &Register, protocol: &Protocol, grid: &[f64], opts: &FisherOptions) -> Result<f64> {
    let theta = ParamVector::from_register(register);
    let steps: Vec<f64> = theta.values.iter().map(|&v| opts.fd_step.step(v)).collect();
    let half: Vec<f64> = theta.values.iter().map(|&v| opts.fd_step.halved(v).step(v)).collect();
    let a = fim_with_steps(register, protocol, grid, opts, &steps)?.fim;
    let b = fim_with_steps(register, protocol, grid, opts, &half)?.fim;
    let scale = a.amax();
    let mut worst: f64 = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        if x.abs() > 1e-6 * scale {
            worst = worst.max((x - y).abs() / x.abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrbResult {
    /// Pseudo-inverse of the FIM divided by reps.
    pub crb: DMatrix<f64>,
    /// sqrt(diag); infinite for parameters touching the null space.
    pub bounds: Vec<f64>,
    pub rank: usize,
    /// Orthonormal null-space directions (empty for a full-rank FIM).
    pub null_space: Vec<Vec<f64>>,
}

pub const PINV_CUTOFF: f64 = 1e-10;
const NULL_COMPONENT: f64 = 1e-6;

/// Cramér-Rao matrix F⁺/reps with a spectral cutoff at 1e-10·λ_max.
pub fn cramer_rao(fim: &DMatrix<f64>, reps: u64) -> Result<CrbResult> {
    if reps == 0 {
        return Err(Error::validation("reps", "must be >= 1"));
    }
    let m = fim.nrows();
    if fim.ncols() != m {
        return Err(Error::validation("fim", "must be square"));
    }
    let eig = SymmetricEigen::new(fim.clone());
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let mut pinv = DMatrix::<f64>::zeros(m, m);
    let mut null_space = Vec::new();
    for k in 0..m {
        let v = eig.eigenvectors.column(k);
        let lam = eig.eigenvalues[k];
        if lmax > 0.0 && lam > PINV_CUTOFF * lmax {
            pinv += (v * v.transpose()) / lam;
        } else {
            null_space.push(v.iter().cloned().collect::<Vec<f64>>());
        }
    }
    let crb = pinv.map(|x| x / reps as f64);
    let bounds = (0..m)
        .map(|i| {
            if null_space.iter().any(|v| v[i].abs() > NULL_COMPONENT) {
                f64::INFINITY
            } else {
                crb[(i, i)].max(0.0).sqrt()
            }
        })
        .collect();
    Ok(CrbResult { crb, bounds, rank: m - null_space.len(), null_space })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    /// A_zz bound against A_zz distances, A_zx against A_zx.
    PerType,
    /// Both bounds against the 2D distance in the (A_zz, A_zx) plane.
    Euclidean,
}

/// A spin is detectable if, for A_zz or A_zx, its bound is below both the
/// parameter's magnitude and the distance to the nearest other spin.
pub fn classify_detectability(params: &ParamVector, bounds: &[f64], metric: DistanceMetric) -> Vec<bool> {
    let n = params.n_spins();
    (0..n)
        .map(|j| {
            let nearest = |ty: usize| -> f64 {
                (0..n)
                    .filter(|&m| m != j)
                    .map(|m| match metric {
                        DistanceMetric::PerType => (params.values[ty * n + j] - params.values[ty * n + m]).abs(),
                        DistanceMetric::Euclidean => {
                            (params.a_zz(j) - params.a_zz(m)).hypot(params.a_zx(j) - params.a_zx(m))
                        }
                    })
                    .fold(f64::INFINITY, f64::min)
            };
            (0..2).any(|ty| {
                let b = bounds[ty * n + j];
                b < params.values[ty * n + j].abs() && b < nearest(ty)
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub spin: usize,
    pub partner_spin: usize,
    /// Indices into the parameter vector of the covarying pair.
    pub param: usize,
    pub partner_param: usize,
    pub covariance: f64,
    /// (A_zz, A_zx) of the spin and of its partner.
    pub vertices: [[f64; 2]; 2],
    /// CRB bound of `param`.
    pub minor_axis: f64,
    /// Zero covariance: the ellipse collapses to a line.
    pub is_line: bool,
}

/// For every spin, the other spin whose parameters covary most with its own.
pub fn covariance_ellipses(crb: &DMatrix<f64>, params: &ParamVector) -> Vec<Ellipse> {
    let n = params.n_spins();
    (0..n)
        .filter_map(|j| {
            let mut best: Option<(usize, usize, usize, f64)> = None;
            for m in (0..n).filter(|&m| m != j) {
                for pi in [j, n + j] {
                    for pm in [m, n + m] {
                        let c = crb[(pi, pm)];
                        if best.is_none_or(|b| c.abs() > b.3.abs()) {
                            best = Some((m, pi, pm, c));
                        }
                    }
                }
            }
            best.map(|(m, pi, pm, c)| Ellipse {
                spin: j,
                partner_spin: m,
                param: pi,
                partner_param: pm,
                covariance: c,
                vertices: [[params.a_zz(j), params.a_zx(j)], [params.a_zz(m), params.a_zx(m)]],
                minor_axis: crb[(pi, pi)].max(0.0).sqrt(),
                is_line: c == 0.0,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sensitivity {
    /// Value at the chosen interpulse time (Hz).
    pub value: f64,
    /// Bound set by the echo coherence time (Hz).
    pub bound: f64,
    /// True when the formula degenerates (no transverse coupling).
    pub degenerate: bool,
}

/// Longitudinal resolution for S=1-like decoupling: (2/τ_p)(A_zx/ω_L), with
/// bound (4/T2)(A_zx/ω_L).
pub fn sensitivity_dd_s1(frame: &DerivedSpinFrame, t2: f64, tau_p: f64) -> Sensitivity {
    let ratio = frame.a_zx / frame.omega_l;
    Sensitivity { value: 2.0 / tau_p * ratio, bound: 4.0 / t2 * ratio, degenerate: frame.a_zx == 0.0 }
}

/// Transverse resolution for S=1/2 decoupling: 4/τ_k, with bound 8/T2.
pub fn sensitivity_dd_s_half(t2: f64, tau_k: f64) -> Sensitivity {
    Sensitivity { value: 4.0 / tau_k, bound: 8.0 / t2, degenerate: false }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub register_digest: String,
    pub protocol: Protocol,
    pub grid: Vec<f64>,
    pub fd_step: FdStep,
    pub reps: u64,
    pub include_decay: bool,
    pub clamped_fraction: f64,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

/// Serializable bundle; matrices row-major, unbounded entries as null.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FisherResult {
    pub labels: Vec<String>,
    pub fim: Vec<Vec<f64>>,
    pub crb: Vec<Vec<f64>>,
    pub bounds: Vec<Option<f64>>,
    pub detectable: Vec<bool>,
    pub ellipses: Vec<Ellipse>,
    pub null_space: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

/// FIM → CRB → detectability → ellipses in one call.
pub fn analyze(
    register: &Register,
    protocol: &Protocol,
    grid: &[f64],
    opts: &FisherOptions,
    reps: u64,
    metric: DistanceMetric,
) -> Result<FisherResult> {
    let report = fisher_matrix(register, protocol, grid, opts)?;
    let crb = cramer_rao(&report.fim, reps)?;
    let params = ParamVector::from_register(register);
    let detectable = classify_detectability(&params, &crb.bounds, metric);
    let ellipses = covariance_ellipses(&crb.crb, &params);
    Ok(FisherResult {
        labels: (0..params.values.len()).map(|i| ParamVector::label(register, i)).collect(),
        fim: rows(&report.fim),
        crb: rows(&crb.crb),
        bounds: crb.bounds.iter().map(|&b| b.is_finite().then_some(b)).collect(),
        detectable,
        ellipses,
        null_space: crb.null_space,
        provenance: Provenance {
            register_digest: register.digest(),
            protocol: *protocol,
            grid: grid.to_vec(),
            fd_step: opts.fd_step,
            reps,
            include_decay: opts.include_decay,
            clamped_fraction: report.clamped_fraction,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::register::{ElectronSpin, Environment, NuclearSpin};
    use crate::signals::resonance_times;

    fn reg(e: ElectronSpin, spins: &[(f64, f64)]) -> Register {
        let spins = spins
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| NuclearSpin::carbon13(format!("c{i}"), a, b))
            .collect();
        Register::new(e, Environment::default(), spins).unwrap()
    }

    fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn param_layout() {
        let r = reg(ElectronSpin::nv_like(), &[(1.0, 2.0), (3.0, 4.0)]);
        let p = ParamVector::from_register(&r);
        assert_eq!(p.values, vec![1.0, 3.0, 2.0, 4.0]);
        assert_eq!(ParamVector::label(&r, 3), "A_zx[c1]");
        assert_eq!(p.apply(&r), r);
    }

    #[test]
    fn diagonal_crb() {
        let f = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 9.0, 0.25]));
        let c = cramer_rao(&f, 100).unwrap();
        for (i, fi) in [4.0, 9.0, 0.25].iter().enumerate() {
            assert!((c.crb[(i, i)] - 1.0 / (100.0 * fi)).abs() <= 1e-15 * c.crb[(i, i)]);
        }
        assert_eq!(c.rank, 3);
        assert!(c.null_space.is_empty());
    }

    #[test]
    fn twin_spins_have_null_direction() {
        let r = reg(ElectronSpin::nv_like(), &[(20e3, 10e3), (20e3, 10e3)]);
        let grid = linspace(0.2e-6, 5e-6, 300);
        let f = fisher_matrix(&r, &Protocol::Dd { pulses: 16 }, &grid, &FisherOptions::default()).unwrap();
        let c = cramer_rao(&f.fim, 10_000).unwrap();
        assert_eq!(c.rank, 2);
        // The difference directions of the twins lie in the null space.
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for dir in [[s, -s, 0.0, 0.0], [0.0, 0.0, s, -s]] {
            let proj: f64 = c
                .null_space
                .iter()
                .map(|v| v.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>().powi(2))
                .sum();
            assert!((proj - 1.0).abs() < 1e-6, "{proj}");
        }
        assert!(c.bounds.iter().all(|b| b.is_infinite()));

        let ell = covariance_ellipses(&c.crb, &ParamVector::from_register(&r));
        assert_eq!(ell[0].partner_spin, 1);
        assert_eq!(ell[1].partner_spin, 0);
    }

    #[test]
    fn diagonal_crb_gives_lines() {
        let crb = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]));
        let p = ParamVector { values: vec![1.0, 2.0, 3.0, 4.0] };
        let e = covariance_ellipses(&crb, &p);
        assert!(e.iter().all(|e| e.is_line));
        assert_eq!(e[0].minor_axis, 1.0);
    }

    #[test]
    fn detectability_rule() {
        let p = ParamVector { values: vec![20e3, 5e3] };
        assert_eq!(classify_detectability(&p, &[1.0, 1.0], DistanceMetric::PerType), vec![true]);
        assert_eq!(classify_detectability(&p, &[30e3, 6e3], DistanceMetric::PerType), vec![false]);
        // Two spins 100 Hz apart in A_zz, far apart in A_zx.
        let p = ParamVector { values: vec![20e3, 20.1e3, 5e3, 15e3] };
        let b = [500.0, 500.0, 1e6, 1e6];
        assert_eq!(classify_detectability(&p, &b, DistanceMetric::PerType), vec![false, false]);
        assert_eq!(classify_detectability(&p, &b, DistanceMetric::Euclidean), vec![true, true]);
    }

    #[test]
    fn symmetric_zero_row_for_s_half() {
        let r = reg(ElectronSpin::group_iv(), &[(0.0, 30e3), (12e3, 20e3)]);
        let grid = linspace(0.1e-6, 5e-6, 400);
        let f = fisher_matrix(&r, &Protocol::Dd { pulses: 16 }, &grid, &FisherOptions::default()).unwrap().fim;
        let scale = f.amax();
        for j in 0..4 {
            assert!(f[(0, j)].abs() <= 1e-10 * scale);
            assert!(f[(j, 0)].abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn single_spin_information_sits_at_the_dip() {
        let e = ElectronSpin::nv_like();
        let r = reg(e, &[(15e3, 8e3)]);
        let f = r.frames().unwrap()[0];
        let tp = resonance_times(&f, &e, 2).tau;
        let opts = FisherOptions::default();
        let proto = Protocol::Dd { pulses: 32 };
        let near = fisher_matrix(&r, &proto, &[tp], &opts).unwrap().fim;
        let far = fisher_matrix(&r, &proto, &[tp * 1.1], &opts).unwrap().fim;
        assert!(near[(0, 0)] > 0.0);
        assert!(far[(0, 0)] < 1e-3 * near[(0, 0)]);
        // Step halving leaves the dense-grid FIM unchanged to 1 %.
        let grid = linspace(tp * 0.98, tp * 1.02, 200);
        assert!(fd_consistency(&r, &proto, &grid, &opts).unwrap() < 0.01);
    }

    #[test]
    fn bound_scale_for_s_half() {
        // One shot per point over a τ sweep spanning ~T2: the A_zx bound is
        // within 4× of the 8/T2 resolution scale.
        let e = ElectronSpin::group_iv();
        let r = reg(e, &[(0.0, 60e3)]);
        let grid = linspace(0.5e-6, 50e-6, 1000);
        let fim = fisher_matrix(&r, &Protocol::Dd { pulses: 2 }, &grid, &FisherOptions::default()).unwrap();
        let c = cramer_rao(&fim.fim, 1).unwrap();
        let scale = sensitivity_dd_s_half(r.environment.t2, 1.0).bound;
        let b = c.bounds[1];
        assert!(b > scale / 4.0 && b < scale * 4.0, "{b} vs {scale}");
    }

    #[test]
    fn sensitivity_scalings() {
        let e = ElectronSpin::nv_like();
        let env = Environment { b_field: 0.5, ..Default::default() };
        let spin = NuclearSpin { label: "c".into(), a_zz: 0.0, a_zx: 5e3, gamma_n: 1e6, species: "x".into() };
        let f = crate::register::derive_frame(&spin, &e, env.b_field).unwrap();
        let s = sensitivity_dd_s1(&f, 100e-6, 50e-6);
        assert!((s.bound - 400.0).abs() < 1e-9);
        assert!((s.value - 400.0).abs() < 1e-9);
        let f2 = crate::register::derive_frame(&spin, &e, 1.0).unwrap();
        assert!((sensitivity_dd_s1(&f2, 100e-6, 50e-6).bound - 200.0).abs() < 1e-9);
        let zero = crate::register::derive_frame(&NuclearSpin { a_zx: 0.0, ..spin }, &e, 0.5).unwrap();
        let z = sensitivity_dd_s1(&zero, 100e-6, 50e-6);
        assert!(z.degenerate && z.bound == 0.0);
        assert!((sensitivity_dd_s_half(100e-6, 50e-6).bound - 80e3).abs() < 1e-9);
        assert!((sensitivity_dd_s_half(200e-6, 50e-6).bound - 40e3).abs() < 1e-9);
    }
}
