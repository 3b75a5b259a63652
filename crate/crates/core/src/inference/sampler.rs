//! Hamiltonian Monte Carlo with adapted step size and metric.
//!
//! Warmup follows the usual windowed scheme: a fast initial buffer for the
//! step size, a series of doubling slow windows that estimate the metric from
//! the window's draws, and a terminal fast buffer. The metric is applied as a
//! linear whitening `theta = mu + L z`, where `L` is either the diagonal of
//! standard deviations or the Cholesky factor of the regularized covariance.

use log::debug;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::diagnostics::{ess_bulk, split_rhat};
use super::WeightedModel;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{substream, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Diagonal,
    #[default]
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    /// Set programmatically from a master seed; not part of configuration files.
    #[serde(skip)]
    pub seed: u64,
    pub target_accept: f64,
    pub metric: MetricKind,
    /// Mean trajectory length in whitened units; the number of leapfrog
    /// steps per iteration is drawn around `integration_time / step_size`.
    pub integration_time: f64,
    pub max_leapfrog: usize,
    /// Initial values are drawn uniformly on `(-init_radius, init_radius)`.
    pub init_radius: f64,
    pub max_rhat: f64,
    pub max_divergence_rate: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 4,
            warmup: 1000,
            draws: 1000,
            seed: 1,
            target_accept: 0.8,
            metric: MetricKind::Dense,
            integration_time: 2.0,
            max_leapfrog: 256,
            init_radius: 2.0,
            max_rhat: 1.01,
            max_divergence_rate: 0.01,
        }
    }
}

impl SamplerConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Lighter settings for repeated fits inside simulations.
    pub fn quick() -> Self {
        SamplerConfig {
            chains: 2,
            warmup: 500,
            draws: 1000,
            max_rhat: 1.05,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.draws < 4 {
            return Err(Error::InvalidArgument("need at least one chain and four draws".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidArgument("target_accept must lie in (0, 1)".into()));
        }
        if !(self.integration_time > 0.0) || self.max_leapfrog == 0 || !(self.init_radius >= 0.0) {
            return Err(Error::InvalidArgument("invalid trajectory settings".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub rhat: Vec<f64>,
    pub ess_bulk: Vec<f64>,
    pub acceptance_rate: f64,
    pub divergences: usize,
    pub step_sizes: Vec<f64>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

/// Post-warmup draws, stacked chain by chain (`chains * draws` rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    pub p: usize,
    pub q: usize,
    pub draws: Matrix,
    pub chains: usize,
    pub diagnostics: Diagnostics,
    /// Settings and seed that reproduce these draws exactly.
    pub config: SamplerConfig,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.p + self.q
    }

    pub fn beta(&self, r: usize) -> &[f64] {
        &self.draws.row(r)[..self.p]
    }

    pub fn psi(&self, r: usize) -> &[f64] {
        &self.draws.row(r)[self.p..]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.column(j)
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.dim()).map(|j| crate::stats::mean(&self.column(j))).collect()
    }

    pub fn sd(&self) -> Vec<f64> {
        (0..self.dim()).map(|j| crate::stats::sd(&self.column(j))).collect()
    }

    /// Column `j` split by chain.
    pub fn chain_columns(&self, j: usize) -> Vec<Vec<f64>> {
        let per = self.len() / self.chains.max(1);
        let col = self.column(j);
        col.chunks(per.max(1)).map(|c| c.to_vec()).collect()
    }

    pub fn converged(&self) -> bool {
        self.diagnostics.converged
    }
}

struct Metric {
    mu: Vec<f64>,
    /// Lower-triangular factor, row-major `d x d`.
    l: Vec<f64>,
    d: usize,
}

impl Metric {
    fn identity(d: usize, mu: Vec<f64>) -> Self {
        let mut l = vec![0.0; d * d];
        (0..d).for_each(|i| l[i * d + i] = 1.0);
        Metric { mu, l, d }
    }

    fn to_theta(&self, z: &[f64], theta: &mut [f64]) {
        let d = self.d;
        for i in 0..d {
            let row = &self.l[i * d..i * d + i + 1];
            theta[i] = self.mu[i] + row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Gradient in whitened coordinates: `L' g`.
    fn pull_back(&self, g: &[f64], gz: &mut [f64]) {
        let d = self.d;
        gz.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..d {
            for (j, out) in gz.iter_mut().enumerate().take(i + 1) {
                *out += self.l[i * d + j] * g[i];
            }
        }
    }

    /// Express `theta` in whitened coordinates of this metric.
    fn to_z(&self, theta: &[f64], z: &mut [f64]) {
        let d = self.d;
        for i in 0..d {
            let mut s = theta[i] - self.mu[i];
            for j in 0..i {
                s -= self.l[i * d + j] * z[j];
            }
            z[i] = s / self.l[i * d + i];
        }
    }

    fn estimate(samples: &[Vec<f64>], kind: MetricKind) -> Option<Self> {
        let n = samples.len();
        let d = samples.first()?.len();
        if n < 3 {
            return None;
        }
        let nf = n as f64;
        let mu: Vec<f64> = (0..d).map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / nf).collect();
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for s in samples {
            for i in 0..d {
                for j in 0..=i {
                    cov[(i, j)] += (s[i] - mu[i]) * (s[j] - mu[j]);
                }
            }
        }
        let shrink = nf / (nf + 5.0);
        let jitter = 1e-3 * 5.0 / (nf + 5.0);
        for i in 0..d {
            for j in 0..=i {
                let mut v = cov[(i, j)] / (nf - 1.0) * shrink;
                if i == j {
                    v += jitter;
                }
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        let mut l = vec![0.0; d * d];
        match kind {
            MetricKind::Diagonal => (0..d).for_each(|i| l[i * d + i] = cov[(i, i)].sqrt()),
            MetricKind::Dense => {
                let chol = cov.cholesky()?;
                let lm = chol.l();
                for i in 0..d {
                    for j in 0..=i {
                        l[i * d + j] = lm[(i, j)];
                    }
                }
            }
        }
        if l.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some(Metric { mu, l, d })
    }
}

struct DualAveraging {
    mu: f64,
    h_bar: f64,
    log_eps_bar: f64,
    t: f64,
    target: f64,
}

impl DualAveraging {
    fn new(eps: f64, target: f64) -> Self {
        DualAveraging {
            mu: (10.0 * eps).ln(),
            h_bar: 0.0,
            log_eps_bar: 0.0,
            t: 0.0,
            target,
        }
    }

    fn update(&mut self, accept: f64) -> f64 {
        const GAMMA: f64 = 0.05;
        const T0: f64 = 10.0;
        const KAPPA: f64 = 0.75;
        self.t += 1.0;
        let eta = 1.0 / (self.t + T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept);
        let log_eps = self.mu - self.t.sqrt() / GAMMA * self.h_bar;
        let w = self.t.powf(-KAPPA);
        self.log_eps_bar = w * log_eps + (1.0 - w) * self.log_eps_bar;
        log_eps.exp()
    }

    fn final_step(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Position, momentum and cached gradient in whitened coordinates.
struct State {
    z: Vec<f64>,
    theta: Vec<f64>,
    grad: Vec<f64>,
    gz: Vec<f64>,
    logp: f64,
}

struct Chain<'a> {
    model: &'a WeightedModel,
    metric: Metric,
    state: State,
    rng: StreamRng,
    // Scratch buffers.
    z: Vec<f64>,
    r: Vec<f64>,
    theta: Vec<f64>,
    grad: Vec<f64>,
    gz: Vec<f64>,
}

struct Transition {
    accept: f64,
    divergent: bool,
}

impl<'a> Chain<'a> {
    fn new(model: &'a WeightedModel, cfg: &SamplerConfig, chain: usize) -> Result<Self> {
        let d = model.dim();
        let mut rng = substream(cfg.seed, "chain", chain as u64);
        let mut grad = vec![0.0; d];
        let mut init = None;
        for _ in 0..100 {
            let theta: Vec<f64> = (0..d)
                .map(|_| rng.random_range(-1.0..=1.0) * cfg.init_radius)
                .collect();
            let logp = model.log_density_grad(&theta, &mut grad);
            if logp.is_finite() && grad.iter().all(|g| g.is_finite()) {
                init = Some((theta, logp));
                break;
            }
        }
        let (theta, logp) = init.ok_or(Error::NonFinite)?;
        let metric = Metric::identity(d, vec![0.0; d]);
        let mut gz = vec![0.0; d];
        metric.pull_back(&grad, &mut gz);
        Ok(Chain {
            model,
            state: State {
                z: theta.clone(),
                theta,
                grad,
                gz,
                logp,
            },
            metric,
            rng,
            z: vec![0.0; d],
            r: vec![0.0; d],
            theta: vec![0.0; d],
            grad: vec![0.0; d],
            gz: vec![0.0; d],
        })
    }

    fn set_metric(&mut self, metric: Metric) {
        let mut z = vec![0.0; metric.d];
        metric.to_z(&self.state.theta, &mut z);
        self.state.z = z;
        metric.pull_back(&self.state.grad, &mut self.state.gz);
        self.metric = metric;
    }

    fn eval(&mut self) -> f64 {
        self.metric.to_theta(&self.z, &mut self.theta);
        let lp = self.model.log_density_grad(&self.theta, &mut self.grad);
        self.metric.pull_back(&self.grad, &mut self.gz);
        lp
    }

    /// One HMC transition with `steps` leapfrog steps of size `eps`.
    fn transition(&mut self, eps: f64, steps: usize) -> Transition {
        let d = self.z.len();
        for i in 0..d {
            self.r[i] = self.rng.sample(StandardNormal);
        }
        let h0 = -self.state.logp + 0.5 * self.r.iter().map(|v| v * v).sum::<f64>();
        self.z.copy_from_slice(&self.state.z);
        self.gz.copy_from_slice(&self.state.gz);
        let mut logp = self.state.logp;
        for _ in 0..steps {
            for i in 0..d {
                self.r[i] += 0.5 * eps * self.gz[i];
                self.z[i] += eps * self.r[i];
            }
            logp = self.eval();
            if !logp.is_finite() {
                break;
            }
            for i in 0..d {
                self.r[i] += 0.5 * eps * self.gz[i];
            }
        }
        let h1 = -logp + 0.5 * self.r.iter().map(|v| v * v).sum::<f64>();
        let delta = h1 - h0;
        if !delta.is_finite() || delta > 1000.0 {
            return Transition {
                accept: 0.0,
                divergent: true,
            };
        }
        let accept = (-delta).exp().min(1.0);
        if self.rng.random::<f64>() < accept {
            self.state.z.copy_from_slice(&self.z);
            self.state.theta.copy_from_slice(&self.theta);
            self.state.grad.copy_from_slice(&self.grad);
            self.state.gz.copy_from_slice(&self.gz);
            self.state.logp = logp;
        }
        Transition {
            accept,
            divergent: false,
        }
    }

    fn steps_for(&mut self, eps: f64, cfg: &SamplerConfig) -> (f64, usize) {
        let eps = eps * self.rng.random_range(0.9..1.1);
        let length = cfg.integration_time * self.rng.random_range(0.5..1.5);
        let steps = ((length / eps).ceil() as usize).clamp(1, cfg.max_leapfrog);
        (eps, steps)
    }

    /// Doubling search for a step size with acceptance near one half.
    fn initial_step_size(&mut self) -> f64 {
        let mut eps: f64 = 1.0;
        let first = self.transition_probe(eps);
        let dir = if first > 0.5 { 1.0 } else { -1.0 };
        for _ in 0..50 {
            let a = self.transition_probe(eps);
            if (dir > 0.0 && a <= 0.5) || (dir < 0.0 && a >= 0.5) {
                break;
            }
            eps *= 2f64.powf(dir);
        }
        eps.clamp(1e-6, 10.0)
    }

    /// Acceptance probability of a single leapfrog step, without moving.
    fn transition_probe(&mut self, eps: f64) -> f64 {
        let d = self.z.len();
        for i in 0..d {
            self.r[i] = self.rng.sample(StandardNormal);
        }
        let h0 = -self.state.logp + 0.5 * self.r.iter().map(|v| v * v).sum::<f64>();
        self.z.copy_from_slice(&self.state.z);
        self.gz.copy_from_slice(&self.state.gz);
        for i in 0..d {
            self.r[i] += 0.5 * eps * self.gz[i];
            self.z[i] += eps * self.r[i];
        }
        let logp = self.eval();
        for i in 0..d {
            self.r[i] += 0.5 * eps * self.gz[i];
        }
        let h1 = -logp + 0.5 * self.r.iter().map(|v| v * v).sum::<f64>();
        let a = (h0 - h1).exp();
        if a.is_finite() {
            a.min(1.0)
        } else {
            0.0
        }
    }
}

/// Ends (exclusive) of the slow adaptation windows within warmup.
fn adaptation_windows(warmup: usize) -> (usize, Vec<usize>) {
    let (mut init, mut term, base) = (75usize, 50usize, 25usize);
    if warmup < 20 {
        return (warmup, Vec::new());
    }
    let short = init + term + base > warmup;
    if short {
        init = (0.15 * warmup as f64) as usize;
        term = (0.1 * warmup as f64) as usize;
    }
    let slow_end = warmup - term;
    let mut ends = Vec::new();
    let mut start = init;
    let mut size = if short { slow_end - init } else { base };
    while start < slow_end {
        let mut end = start + size;
        if end + 2 * size > slow_end {
            end = slow_end;
        }
        ends.push(end);
        start = end;
        size *= 2;
    }
    (init, ends)
}

struct ChainOutput {
    draws: Vec<Vec<f64>>,
    accept_sum: f64,
    divergences: usize,
    step_size: f64,
}

fn run_chain(model: &WeightedModel, cfg: &SamplerConfig, chain: usize) -> Result<ChainOutput> {
    let mut ch = Chain::new(model, cfg, chain)?;
    let mut eps = ch.initial_step_size();
    let mut da = DualAveraging::new(eps, cfg.target_accept);
    let (init_buffer, windows) = adaptation_windows(cfg.warmup);
    let mut window_draws: Vec<Vec<f64>> = Vec::new();
    let mut next_window = 0;
    for it in 0..cfg.warmup {
        let (e, steps) = ch.steps_for(eps, cfg);
        let t = ch.transition(e, steps);
        eps = da.update(t.accept);
        if it >= init_buffer && next_window < windows.len() {
            window_draws.push(ch.state.theta.clone());
            if it + 1 == windows[next_window] {
                if let Some(m) = Metric::estimate(&window_draws, cfg.metric) {
                    ch.set_metric(m);
                }
                window_draws.clear();
                next_window += 1;
                eps = ch.initial_step_size();
                da = DualAveraging::new(eps, cfg.target_accept);
            }
        }
    }
    if cfg.warmup > 0 {
        eps = da.final_step();
    }
    debug!("chain {chain}: adapted step size {eps:.4}");
    let mut out = ChainOutput {
        draws: Vec::with_capacity(cfg.draws),
        accept_sum: 0.0,
        divergences: 0,
        step_size: eps,
    };
    for _ in 0..cfg.draws {
        let (e, steps) = ch.steps_for(eps, cfg);
        let t = ch.transition(e, steps);
        out.accept_sum += t.accept;
        out.divergences += usize::from(t.divergent);
        out.draws.push(ch.state.theta.clone());
    }
    Ok(out)
}

/// Draw from the weighted posterior. Chains run in parallel, each on its own
/// random stream, so results do not depend on the thread count.
pub fn sample_posterior(model: &WeightedModel, cfg: &SamplerConfig) -> Result<PosteriorDraws> {
    cfg.validate()?;
    let d = model.dim();
    let outputs: Vec<ChainOutput> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(model, cfg, c))
        .collect::<Result<_>>()?;
    let mut draws = Matrix::zeros(0, d);
    for o in &outputs {
        for row in &o.draws {
            draws.push_row(row);
        }
    }
    let mut rhat = Vec::with_capacity(d);
    let mut ess = Vec::with_capacity(d);
    for j in 0..d {
        let cols: Vec<Vec<f64>> = outputs
            .iter()
            .map(|o| o.draws.iter().map(|r| r[j]).collect())
            .collect();
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        rhat.push(split_rhat(&refs));
        ess.push(ess_bulk(&refs));
    }
    let total = (cfg.chains * cfg.draws) as f64;
    let divergences: usize = outputs.iter().map(|o| o.divergences).sum();
    let acceptance_rate = outputs.iter().map(|o| o.accept_sum).sum::<f64>() / total;
    let mut warnings = Vec::new();
    let worst = rhat.iter().copied().fold(1.0, |a: f64, b| if b.is_nan() { a } else { a.max(b) });
    if worst > cfg.max_rhat {
        warnings.push(format!("max R-hat {worst:.3} exceeds {}", cfg.max_rhat));
    }
    if divergences as f64 > cfg.max_divergence_rate * total {
        warnings.push(format!("{divergences} divergent transitions"));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let names = (0..model.p())
        .map(|j| format!("beta[{j}]"))
        .chain((0..model.q()).map(|j| format!("psi[{j}]")))
        .collect();
    Ok(PosteriorDraws {
        names,
        p: model.p(),
        q: model.q(),
        draws,
        chains: cfg.chains,
        diagnostics: Diagnostics {
            rhat,
            ess_bulk: ess,
            acceptance_rate,
            divergences,
            step_sizes: outputs.iter().map(|o| o.step_size).collect(),
            converged: warnings.is_empty(),
            warnings,
        },
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_cover_slow_phase() {
        let (init, ends) = adaptation_windows(1000);
        assert_eq!(init, 75);
        assert_eq!(*ends.last().unwrap(), 950);
        assert_eq!(ends[0], 100);
        let (init, ends) = adaptation_windows(100);
        assert_eq!(init, 15);
        assert_eq!(ends, vec![90]);
        assert_eq!(adaptation_windows(10), (10, vec![]));
    }

    #[test]
    fn metric_round_trip() {
        let samples: Vec<Vec<f64>> = (0..50)
            .map(|i| {
                let t = i as f64;
                vec![t.sin() * 3.0, t.cos() + 0.5 * t.sin()]
            })
            .collect();
        let m = Metric::estimate(&samples, MetricKind::Dense).unwrap();
        let theta = [0.7, -1.2];
        let mut z = [0.0; 2];
        let mut back = [0.0; 2];
        m.to_z(&theta, &mut z);
        m.to_theta(&z, &mut back);
        assert!((back[0] - theta[0]).abs() < 1e-12 && (back[1] - theta[1]).abs() < 1e-12);
    }
}
