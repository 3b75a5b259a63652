//! The individually weighted logistic posterior.
//!
//! For internal patients `n` and external patients `m` with weights `w_m`:
//!
//! ```text
//! log p(theta | D) = log prior(theta) + sum_n l_n(theta) + sum_m w_m l_m(theta)
//! l(theta) = y log F(eta) + (1 - y) log F(-eta),  eta = x'beta + (s'psi) a
//! ```
//!
//! with `F` the logistic function. Rows that share the same design vector
//! are merged by summing their (weighted) success and failure counts; the
//! likelihood is additive in the exponents, so this is exact.

mod diagnostics;
mod quadrature;
mod sampler;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dataset::DesignMatrixBundle;
use crate::error::{Error, Result};
use crate::matrix::dot;
use crate::similarity::WeightVector;

pub use diagnostics::{ess_bulk, mcse_mean, mcse_sd, split_rhat};
pub use quadrature::{quadrature_posterior, GridAxis, QuadratureResult};
pub use sampler::{sample_posterior, Diagnostics, MetricKind, PosteriorDraws, SamplerConfig};

/// Coefficients `theta = (beta, psi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub beta: Vec<f64>,
    pub psi: Vec<f64>,
}

impl ParameterVector {
    pub fn from_flat(theta: &[f64], p: usize) -> Self {
        ParameterVector {
            beta: theta[..p].to_vec(),
            psi: theta[p..].to_vec(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.beta.iter().chain(&self.psi).copied().collect()
    }
}

/// Independent Gaussian prior per coefficient. An infinite scale means a
/// flat (improper) component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub location: Vec<f64>,
    pub scale: Vec<f64>,
}

pub const DEFAULT_PRIOR_SCALE: f64 = 2.5;

impl PriorSpec {
    pub fn normal(dim: usize, location: f64, scale: f64) -> Result<Self> {
        Self::new(vec![location; dim], vec![scale; dim])
    }

    /// `N(0, 2.5^2)` on every coefficient.
    pub fn weakly_informative(dim: usize) -> Self {
        Self::normal(dim, 0.0, DEFAULT_PRIOR_SCALE).expect("valid default prior")
    }

    pub fn flat(dim: usize) -> Self {
        PriorSpec {
            location: vec![0.0; dim],
            scale: vec![f64::INFINITY; dim],
        }
    }

    pub fn new(location: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if location.len() != scale.len() {
            return Err(Error::Dimension {
                expected: location.len(),
                got: scale.len(),
            });
        }
        if scale.iter().any(|s| !(*s > 0.0)) || location.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument("prior scales must be positive and locations finite".into()));
        }
        Ok(PriorSpec { location, scale })
    }

    pub fn dim(&self) -> usize {
        self.location.len()
    }

    pub fn is_proper(&self) -> bool {
        self.scale.iter().all(|s| s.is_finite())
    }

    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let mut lp = 0.0;
        for j in 0..theta.len() {
            let s = self.scale[j];
            if s.is_finite() {
                let z = (theta[j] - self.location[j]) / s;
                lp -= 0.5 * z * z + s.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln();
                grad[j] -= z / s;
            }
        }
        lp
    }
}

/// Weighted logistic likelihood plus prior, in merged-row form.
#[derive(Debug, Clone)]
pub struct WeightedModel {
    p: usize,
    q: usize,
    /// Unique full design rows `[x, s * a]`, row-major.
    rows: Vec<f64>,
    successes: Vec<f64>,
    failures: Vec<f64>,
    prior: PriorSpec,
    n_internal: usize,
    n_external: usize,
}

fn full_row(b: &DesignMatrixBundle, i: usize, out: &mut [f64]) {
    let p = b.p();
    out[..p].copy_from_slice(b.prognostic.row(i));
    let a = f64::from(b.arm[i]);
    for (o, s) in out[p..].iter_mut().zip(b.modifier.row(i)) {
        // `+ 0.0` folds -0.0 into 0.0 so merging sees equal keys.
        *o = s * a + 0.0;
    }
}

impl WeightedModel {
    /// Internal rows enter with weight one, external rows with their
    /// effective weight; zero-weight rows are dropped.
    pub fn new(
        internal: &DesignMatrixBundle,
        external: Option<(&DesignMatrixBundle, &WeightVector)>,
        prior: PriorSpec,
    ) -> Result<Self> {
        let (p, q) = (internal.p(), internal.q());
        let d = p + q;
        if prior.dim() != d {
            return Err(Error::Dimension {
                expected: d,
                got: prior.dim(),
            });
        }
        let mut model = WeightedModel {
            p,
            q,
            rows: Vec::new(),
            successes: Vec::new(),
            failures: Vec::new(),
            prior,
            n_internal: internal.nrows(),
            n_external: 0,
        };
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut buf = vec![0.0; d];
        let mut add = |b: &DesignMatrixBundle, i: usize, w: f64, m: &mut WeightedModel| {
            full_row(b, i, &mut buf);
            let key: Vec<u64> = buf.iter().map(|v| v.to_bits()).collect();
            let r = *index.entry(key).or_insert_with(|| {
                m.rows.extend_from_slice(&buf);
                m.successes.push(0.0);
                m.failures.push(0.0);
                m.successes.len() - 1
            });
            if b.outcome[i] == 1 {
                m.successes[r] += w;
            } else {
                m.failures[r] += w;
            }
        };
        for i in 0..internal.nrows() {
            add(internal, i, 1.0, &mut model);
        }
        if let Some((ext, weights)) = external {
            if (ext.p(), ext.q()) != (p, q) {
                return Err(Error::Dimension { expected: d, got: ext.p() + ext.q() });
            }
            if weights.len() != ext.nrows() {
                return Err(Error::Dimension {
                    expected: ext.nrows(),
                    got: weights.len(),
                });
            }
            model.n_external = ext.nrows();
            for i in 0..ext.nrows() {
                let w = weights.effective(i);
                if w > 0.0 {
                    add(ext, i, w, &mut model);
                }
            }
        }
        Ok(model)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn dim(&self) -> usize {
        self.p + self.q
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    /// Number of distinct design rows after merging.
    pub fn unique_rows(&self) -> usize {
        self.successes.len()
    }

    pub fn n_internal(&self) -> usize {
        self.n_internal
    }

    pub fn n_external(&self) -> usize {
        self.n_external
    }

    /// Log density and gradient (accumulated into `grad`, which is zeroed
    /// first). No finiteness check on `theta`.
    pub fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.dim();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut ll = 0.0;
        for ((row, &wp), &wn) in self.rows.chunks_exact(d).zip(&self.successes).zip(&self.failures) {
            let eta = dot(row, theta);
            let e = (-eta.abs()).exp();
            let l1p = e.ln_1p();
            // log F(eta) and log F(-eta).
            let (lpos, lneg, prob) = if eta >= 0.0 {
                (-l1p, -l1p - eta, 1.0 / (1.0 + e))
            } else {
                (-l1p + eta, -l1p, e / (1.0 + e))
            };
            ll += wp * lpos + wn * lneg;
            let resid = wp - (wp + wn) * prob;
            for (g, x) in grad.iter_mut().zip(row) {
                *g += resid * x;
            }
        }
        ll + self.prior.log_density_grad(theta, grad)
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        let d = self.dim();
        let mut ll = 0.0;
        for ((row, &wp), &wn) in self.rows.chunks_exact(d).zip(&self.successes).zip(&self.failures) {
            let eta = dot(row, theta);
            ll += wp * crate::stats::log_inv_logit(eta) + wn * crate::stats::log_inv_logit(-eta);
        }
        let mut scratch = vec![0.0; d];
        ll + self.prior.log_density_grad(theta, &mut scratch)
    }

    fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }
}

/// Unnormalized log posterior at `theta`.
pub fn log_posterior(theta: &ParameterVector, model: &WeightedModel) -> Result<f64> {
    let flat = theta.to_flat();
    if theta.beta.len() != model.p() {
        return Err(Error::Dimension {
            expected: model.p(),
            got: theta.beta.len(),
        });
    }
    model.check(&flat)?;
    Ok(model.log_density(&flat))
}

/// Exact gradient of [`log_posterior`].
pub fn grad_log_posterior(theta: &ParameterVector, model: &WeightedModel) -> Result<Vec<f64>> {
    let flat = theta.to_flat();
    if theta.beta.len() != model.p() {
        return Err(Error::Dimension {
            expected: model.p(),
            got: theta.beta.len(),
        });
    }
    model.check(&flat)?;
    let mut g = vec![0.0; flat.len()];
    model.log_density_grad(&flat, &mut g);
    Ok(g)
}
