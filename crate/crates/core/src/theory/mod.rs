//! Synthetic pairwise-Q landscapes for checking the bi-level mean-field
//! approximation against brute-force sums.
//!
//! The local Q of agent `j` in group `m` is modelled as
//!
//! ```text
//! Q_j = 1/|N_m(j)| sum_{k in N_m(j)} Q~(a_j, a_k)
//!     + 1/W_m sum_{n != m} w_mn 1/|G_n| sum_{k in G_n} Q~(a_j, a_k)
//! ```
//!
//! and approximated by `Q~(a_j, ã_j) + Q~(a_j, ã_m)`. Terms whose
//! neighbourhood is empty (singleton group, single group) are dropped on
//! both sides.

mod eigen;

pub use eigen::{recompose, spectral_norm, symmetric_eigen};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;

use crate::error::{BmfError, Result};
use crate::grouping::GroupState;
use crate::meanfield::{group_mean_action, inter_mean_action, intra_mean_action, MeanAction};
use crate::par::{map_indexed, Execution};
use crate::rng::{substream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// No curvature: the approximation is exact.
    Linear,
    /// `H = K * H0` for a fixed unit-norm symmetric `H0`.
    Quadratic,
    /// Random symmetric `H` with its spectrum clipped to `[-K, K]`.
    RandomSmooth,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Linear => "linear",
            Family::Quadratic => "quadratic",
            Family::RandomSmooth => "random_smooth",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = BmfError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Family::Linear),
            "quadratic" => Ok(Family::Quadratic),
            "random_smooth" | "smooth" => Ok(Family::RandomSmooth),
            o => Err(BmfError::config(format!("unknown Q family '{o}'"))),
        }
    }
}

/// `Q~(a_j, a_k) = c0 + cj.a_j + (g + G a_j).a_k + 1/2 a_k^T H a_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseQ {
    pub family: Family,
    pub k_smooth: f64,
    pub dim: usize,
    pub c0: f64,
    pub cj: Vec<f64>,
    pub g: Vec<f64>,
    /// `dim x dim`, row-major.
    pub gj: Vec<f64>,
    /// Symmetric `dim x dim`, row-major.
    pub h: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl PairwiseQ {
    pub fn random<R: rand::Rng + ?Sized>(family: Family, k_smooth: f64, dim: usize, rng: &mut R) -> Self {
        let mut u = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let c0 = u(1)[0];
        let cj = u(dim);
        let g = u(dim);
        let gj = u(dim * dim);
        let raw = u(dim * dim);
        let mut sym = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                sym[i * dim + j] = 0.5 * (raw[i * dim + j] + raw[j * dim + i]);
            }
        }
        let h = match family {
            Family::Linear => vec![0.0; dim * dim],
            Family::Quadratic => {
                let norm = spectral_norm(&sym, dim).max(f64::MIN_POSITIVE);
                sym.iter().map(|v| k_smooth * v / norm).collect()
            }
            Family::RandomSmooth => {
                // Spread the spectrum past K, then clip it back.
                let (vals, vecs) = symmetric_eigen(&sym, dim);
                let norm = vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
                let clipped: Vec<f64> = vals.iter().map(|v| (2.0 * k_smooth * v / norm).clamp(-k_smooth, k_smooth)).collect();
                recompose(&clipped, &vecs, dim)
            }
        };
        PairwiseQ {
            family,
            k_smooth: if family == Family::Linear { 0.0 } else { k_smooth },
            dim,
            c0,
            cj,
            g,
            gj,
            h,
        }
    }

    pub fn eval(&self, aj: &[f64], ak: &[f64]) -> f64 {
        let d = self.dim;
        let mut lin = self.c0 + dot(&self.cj, aj);
        for r in 0..d {
            let gr = self.g[r] + dot(&self.gj[r * d..(r + 1) * d], aj);
            lin += gr * ak[r];
        }
        let mut quad = 0.0;
        for r in 0..d {
            quad += ak[r] * dot(&self.h[r * d..(r + 1) * d], ak);
        }
        lin + 0.5 * quad
    }

    /// Spectral norm of the curvature; never exceeds `k_smooth`.
    pub fn certified_k(&self) -> f64 {
        spectral_norm(&self.h, self.dim)
    }
}

/// n agents, a fixed partition, continuous actions and inter-group weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub assignment: Vec<usize>,
    pub k: usize,
    pub actions: Vec<Vec<f64>>,
    /// `k x k`, nonnegative, zero diagonal (not necessarily normalized).
    pub weights: Vec<Vec<f64>>,
    pub q: PairwiseQ,
}

impl Scenario {
    /// Random scenario. Every group is non-empty; weights are positive off
    /// the diagonal.
    pub fn random<R: rand::Rng + ?Sized>(n: usize, k: usize, q: PairwiseQ, rng: &mut R) -> Result<Self> {
        if k == 0 || k > n {
            return Err(BmfError::config(format!("need 1 <= k <= n, got k={k}, n={n}")));
        }
        let mut assignment: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            assignment.swap(i, j);
        }
        let actions = (0..n).map(|_| (0..q.dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let weights = (0..k)
            .map(|m| (0..k).map(|n| if n == m { 0.0 } else { rng.random_range(0.05..2.0) }).collect())
            .collect();
        Ok(Scenario {
            assignment,
            k,
            actions,
            weights,
            q,
        })
    }

    pub fn n(&self) -> usize {
        self.actions.len()
    }

    pub fn members(&self, m: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignment[i] == m).collect()
    }

    fn group_state(&self) -> GroupState {
        let mut g = GroupState::from_assignment(self.assignment.iter().map(|&m| Some(m)).collect(), vec![0; self.k], 1);
        for m in 0..self.k {
            let total: f64 = self.weights[m].iter().sum();
            g.weights[m] = self.weights[m].iter().map(|w| if total > 0.0 { w / total } else { 0.0 }).collect();
            g.normalizers[m] = if total > 0.0 { 1.0 } else { 0.0 };
        }
        g
    }

    fn action_table(&self) -> Vec<Option<Vec<f64>>> {
        self.actions.iter().map(|a| Some(a.clone())).collect()
    }

    /// Per-group mean actions.
    pub fn group_means(&self) -> Vec<MeanAction> {
        (0..self.k)
            .map(|m| group_mean_action(self.members(m).iter().map(|&i| self.actions[i].as_slice()), self.q.dim))
            .collect()
    }

    /// `(ã_j, ã_m)` from the mean-field module.
    pub fn mean_actions(&self, j: usize) -> (MeanAction, MeanAction) {
        let g = self.group_state();
        let intra = intra_mean_action(j, &g, &self.action_table(), self.q.dim).expect("valid agent");
        let m = self.assignment[j];
        let gm = self.group_means();
        let inter = inter_mean_action(m, &self.weights[m], &gm, |n| n != m, self.q.dim);
        (intra, inter)
    }

    /// Largest Euclidean norm over every intra fluctuation `a_k - ã_j` and
    /// every inter fluctuation `a_k - ã_m`.
    pub fn max_fluctuation(&self) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..self.n() {
            let (intra, inter) = self.mean_actions(j);
            let m = self.assignment[j];
            for k in 0..self.n() {
                let (centre, active) = if self.assignment[k] == m {
                    (&intra, k != j && !intra.degenerate)
                } else {
                    (&inter, !inter.degenerate)
                };
                if active {
                    let d: f64 = self.actions[k].iter().zip(&centre.value).map(|(a, c)| (a - c).powi(2)).sum();
                    worst = worst.max(d.sqrt());
                }
            }
        }
        worst
    }

    /// Multiplies every action by `factor`; fluctuations scale with it.
    pub fn scale_actions(&mut self, factor: f64) {
        self.actions.iter_mut().flatten().for_each(|v| *v *= factor);
    }

    /// Rescales so that the largest fluctuation norm equals `sigma`.
    pub fn normalize_fluctuations(&mut self, sigma: f64) {
        let m = self.max_fluctuation();
        if m > 0.0 {
            self.scale_actions(sigma / m);
        }
    }
}

/// Brute-force local Q of agent `j`.
pub fn oracle_local_q(sc: &Scenario, j: usize) -> f64 {
    let m = sc.assignment[j];
    let aj = &sc.actions[j];
    let mut q = 0.0;
    let peers: Vec<usize> = sc.members(m).into_iter().filter(|&k| k != j).collect();
    if !peers.is_empty() {
        q += peers.iter().map(|&k| sc.q.eval(aj, &sc.actions[k])).sum::<f64>() / peers.len() as f64;
    }
    let wm: f64 = (0..sc.k).filter(|&n| n != m).map(|n| sc.weights[m][n]).sum();
    if wm > 0.0 {
        let mut acc = 0.0;
        for n in (0..sc.k).filter(|&n| n != m) {
            let g = sc.members(n);
            let inner: f64 = g.iter().map(|&k| sc.q.eval(aj, &sc.actions[k])).sum::<f64>() / g.len() as f64;
            acc += sc.weights[m][n] * inner;
        }
        q += acc / wm;
    }
    q
}

/// Sum of all local Qs written as one pass over ordered pairs with
/// explicit coefficients; independent of [`oracle_local_q`].
pub fn global_pair_sum(sc: &Scenario) -> f64 {
    let n = sc.n();
    let mut sizes = vec![0usize; sc.k];
    sc.assignment.iter().for_each(|&m| sizes[m] += 1);
    let row: Vec<f64> = sc.weights.iter().enumerate().map(|(m, r)| r.iter().enumerate().filter(|&(x, _)| x != m).map(|(_, w)| w).sum()).collect();
    let mut total = 0.0;
    for j in 0..n {
        for k in 0..n {
            if k == j {
                continue;
            }
            let (mj, mk) = (sc.assignment[j], sc.assignment[k]);
            let coef = if mj == mk {
                1.0 / (sizes[mj] - 1) as f64
            } else if row[mj] > 0.0 {
                sc.weights[mj][mk] / (row[mj] * sizes[mk] as f64)
            } else {
                0.0
            };
            total += coef * sc.q.eval(&sc.actions[j], &sc.actions[k]);
        }
    }
    total
}

/// `Q~(a_j, ã_j) + Q~(a_j, ã_m)` with means from the mean-field module.
pub fn bmf_surrogate_q(sc: &Scenario, j: usize) -> f64 {
    let (intra, inter) = sc.mean_actions(j);
    let aj = &sc.actions[j];
    let mut q = 0.0;
    if !intra.degenerate {
        q += sc.q.eval(aj, &intra.value);
    }
    if !inter.degenerate {
        q += sc.q.eval(aj, &inter.value);
    }
    q
}

/// Oracle minus surrogate.
pub fn residual(sc: &Scenario, j: usize) -> f64 {
    oracle_local_q(sc, j) - bmf_surrogate_q(sc, j)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluctuationReport {
    /// Largest `|1/|N| sum_k (a_k - ã_j)|` component over agents.
    pub intra_max: f64,
    /// Largest `|1/W_m sum_n w_mn (ã_n - ã_m)|` component over groups.
    pub inter_max: f64,
    /// Agents whose intra identity is vacuous (singleton group).
    pub singletons: Vec<usize>,
}

impl FluctuationReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.intra_max <= tol && self.inter_max <= tol
    }
}

pub fn fluctuation_identities(sc: &Scenario) -> FluctuationReport {
    let mut intra_max = 0.0f64;
    let mut singletons = Vec::new();
    for j in 0..sc.n() {
        let (intra, _) = sc.mean_actions(j);
        if intra.degenerate {
            singletons.push(j);
            continue;
        }
        let peers: Vec<usize> = sc.members(sc.assignment[j]).into_iter().filter(|&k| k != j).collect();
        for d in 0..sc.q.dim {
            let s: f64 = peers.iter().map(|&k| sc.actions[k][d] - intra.value[d]).sum::<f64>() / peers.len() as f64;
            intra_max = intra_max.max(s.abs());
        }
    }
    let gm = sc.group_means();
    let mut inter_max = 0.0f64;
    for m in 0..sc.k {
        let inter = inter_mean_action(m, &sc.weights[m], &gm, |n| n != m, sc.q.dim);
        if inter.degenerate {
            continue;
        }
        let wm: f64 = (0..sc.k).filter(|&n| n != m).map(|n| sc.weights[m][n]).sum();
        for d in 0..sc.q.dim {
            let s: f64 = (0..sc.k).filter(|&n| n != m).map(|n| sc.weights[m][n] * (gm[n].value[d] - inter.value[d])).sum::<f64>() / wm;
            inter_max = inter_max.max(s.abs());
        }
    }
    FluctuationReport {
        intra_max,
        inter_max,
        singletons,
    }
}

/// Settings for a residual sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub family: Family,
    pub k_values: Vec<f64>,
    pub n_values: Vec<usize>,
    pub groups: usize,
    pub dim: usize,
    pub trials: usize,
    /// Largest fluctuation norm after normalization.
    pub sigma: f64,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            family: Family::RandomSmooth,
            k_values: vec![0.1, 1.0, 10.0],
            n_values: vec![16, 64],
            groups: 4,
            dim: 3,
            trials: 1000,
            sigma: 1.0,
            seed: 0,
            execution: Execution::best(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRow {
    pub family: Family,
    pub k_smooth: f64,
    pub n: usize,
    pub trials: usize,
    pub min_residual: f64,
    pub max_residual: f64,
    pub max_abs: f64,
    pub mean_abs: f64,
    pub bound: f64,
    pub within_bound: bool,
    /// Debug dump of the scenario that produced the largest `|residual|`
    /// when the bound is violated.
    pub witness: Option<String>,
}

/// One trial: a fresh landscape and scenario, normalized, with the
/// residual of a random agent.
pub fn trial(family: Family, k_smooth: f64, n: usize, groups: usize, dim: usize, sigma: f64, seed: u64, index: u64) -> Result<(f64, Scenario)> {
    let mut rng = substream(seed, Stream::Theory, index);
    let q = PairwiseQ::random(family, k_smooth, dim, &mut rng);
    let k = groups.clamp(1, n);
    let mut sc = Scenario::random(n, k, q, &mut rng)?;
    sc.normalize_fluctuations(sigma);
    let j = rng.random_range(0..n);
    Ok((residual(&sc, j), sc))
}

pub fn residual_sweep(cfg: &SweepConfig) -> Result<Vec<ResidualRow>> {
    if cfg.trials == 0 {
        return Err(BmfError::config("trials must be at least 1"));
    }
    let mut rows = Vec::new();
    for (ki, &k_smooth) in cfg.k_values.iter().enumerate() {
        for (ni, &n) in cfg.n_values.iter().enumerate() {
            let base = ((ki * cfg.n_values.len() + ni) * cfg.trials) as u64;
            let res: Vec<Result<f64>> = map_indexed(cfg.execution, cfg.trials, |t| {
                trial(cfg.family, k_smooth, n, cfg.groups, cfg.dim, cfg.sigma, cfg.seed, base + t as u64).map(|r| r.0)
            });
            let res: Vec<f64> = res.into_iter().collect::<Result<_>>()?;
            let bound = 2.0 * k_smooth * cfg.sigma * cfg.sigma;
            let (mut lo, mut hi, mut worst, mut worst_i, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, 0, 0.0);
            for (i, &r) in res.iter().enumerate() {
                lo = lo.min(r);
                hi = hi.max(r);
                sum += r.abs();
                if r.abs() > worst {
                    worst = r.abs();
                    worst_i = i;
                }
            }
            let eff_bound = if cfg.family == Family::Linear { 1e-9 } else { bound };
            let within = worst <= eff_bound;
            let witness = (!within).then(|| {
                let (_, sc) = trial(cfg.family, k_smooth, n, cfg.groups, cfg.dim, cfg.sigma, cfg.seed, base + worst_i as u64).unwrap();
                format!("{sc:?}")
            });
            rows.push(ResidualRow {
                family: cfg.family,
                k_smooth,
                n,
                trials: cfg.trials,
                min_residual: lo,
                max_residual: hi,
                max_abs: worst,
                mean_abs: sum / cfg.trials as f64,
                bound,
                within_bound: within,
                witness,
            });
        }
    }
    Ok(rows)
}

/// Mean `|residual|` at each fluctuation scale over the same scenarios,
/// and the least-squares slope of `log residual` against `log scale`.
pub fn fluctuation_scaling(family: Family, k_smooth: f64, scales: &[f64], trials: usize, seed: u64, exec: Execution) -> Result<(Vec<(f64, f64)>, f64)> {
    let per_trial: Vec<Result<Vec<f64>>> = map_indexed(exec, trials, |t| {
        let (_, base) = trial(family, k_smooth, 24, 4, 3, 1.0, seed, t as u64)?;
        let j = t % base.n();
        Ok(scales
            .iter()
            .map(|&s| {
                let mut sc = base.clone();
                sc.scale_actions(s);
                residual(&sc, j).abs()
            })
            .collect())
    });
    let per_trial: Vec<Vec<f64>> = per_trial.into_iter().collect::<Result<_>>()?;
    let points: Vec<(f64, f64)> = scales
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, per_trial.iter().map(|r| r[i]).sum::<f64>() / trials as f64))
        .collect();
    Ok((points.clone(), loglog_slope(&points)))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

pub const RESIDUAL_HEADER: [&str; 10] =
    ["family", "k_smooth", "n", "trials", "min_residual", "max_residual", "max_abs", "mean_abs", "bound", "within_bound"];

pub fn write_residual_csv(path: &Path, rows: &[ResidualRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RESIDUAL_HEADER)?;
    for r in rows {
        w.write_record([
            r.family.name().to_string(),
            r.k_smooth.to_string(),
            r.n.to_string(),
            r.trials.to_string(),
            format!("{:e}", r.min_residual),
            format!("{:e}", r.max_residual),
            format!("{:e}", r.max_abs),
            format!("{:e}", r.mean_abs),
            r.bound.to_string(),
            r.within_bound.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
