//! Deterministic grid integration of the posterior for models with one or
//! two parameters. Used to check the sampler.

use serde::{Deserialize, Serialize};

use super::WeightedModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl GridAxis {
    pub fn new(lo: f64, hi: f64, points: usize) -> Self {
        GridAxis { lo, hi, points }
    }

    fn node(&self, i: usize) -> f64 {
        self.lo + (self.hi - self.lo) * i as f64 / (self.points - 1) as f64
    }

    fn weight(&self, i: usize) -> f64 {
        let h = (self.hi - self.lo) / (self.points - 1) as f64;
        if i == 0 || i + 1 == self.points {
            0.5 * h
        } else {
            h
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureResult {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Log of the normalizing constant of the unnormalized density.
    pub log_normalizer: f64,
    /// Fraction of mass on the outermost grid nodes.
    pub boundary_mass: f64,
}

const BOUNDARY_TOLERANCE: f64 = 1e-8;

/// Posterior means and standard deviations by the trapezoid rule.
///
/// Fails with [`Error::CoarseGrid`] when the density has not decayed at the
/// edges of the grid.
pub fn quadrature_posterior(model: &WeightedModel, axes: &[GridAxis]) -> Result<QuadratureResult> {
    let d = model.dim();
    if !(1..=2).contains(&d) {
        return Err(Error::InvalidArgument(format!(
            "grid integration supports one or two parameters, model has {d}"
        )));
    }
    if axes.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: axes.len(),
        });
    }
    if axes.iter().any(|a| a.points < 3 || !(a.hi > a.lo)) {
        return Err(Error::InvalidArgument("each axis needs hi > lo and at least 3 points".into()));
    }
    let ny = if d == 2 { axes[1].points } else { 1 };
    let mut nodes = Vec::with_capacity(axes[0].points * ny);
    for i in 0..axes[0].points {
        for j in 0..ny {
            let mut theta = vec![axes[0].node(i)];
            let mut w = axes[0].weight(i);
            let mut edge = i == 0 || i + 1 == axes[0].points;
            if d == 2 {
                theta.push(axes[1].node(j));
                w *= axes[1].weight(j);
                edge |= j == 0 || j + 1 == ny;
            }
            let lp = model.log_density(&theta);
            nodes.push((theta, w, lp, edge));
        }
    }
    let max = nodes.iter().map(|n| n.2).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite);
    }
    let mut z = 0.0;
    let mut edge_mass = 0.0;
    let mut m1 = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    for (theta, w, lp, edge) in &nodes {
        let dens = (lp - max).exp();
        let mass = w * dens;
        z += mass;
        if *edge {
            edge_mass += dens;
        }
        for k in 0..d {
            m1[k] += mass * theta[k];
            m2[k] += mass * theta[k] * theta[k];
        }
    }
    // Compare edge densities against the total count-normalized mass so the
    // check does not depend on grid spacing.
    let mean_density: f64 = nodes.iter().map(|n| (n.2 - max).exp()).sum();
    let boundary_mass = edge_mass / mean_density;
    if boundary_mass > BOUNDARY_TOLERANCE {
        return Err(Error::CoarseGrid(boundary_mass));
    }
    let mean: Vec<f64> = m1.iter().map(|m| m / z).collect();
    let sd = m2
        .iter()
        .zip(&mean)
        .map(|(m, mu)| (m / z - mu * mu).max(0.0).sqrt())
        .collect();
    Ok(QuadratureResult {
        mean,
        sd,
        log_normalizer: z.ln() + max,
        boundary_mass,
    })
}
