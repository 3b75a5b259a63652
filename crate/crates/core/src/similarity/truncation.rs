//! Discarding the low-weight tail of the external data.

use crate::error::{Error, Result};

use super::{Truncation, WeightVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TruncationRule {
    /// Keep patients in decreasing weight order while the running weight sum
    /// stays at or below the internal sample size.
    EssCap(f64),
    /// Drop the lowest `fraction` of patients by weight.
    Quantile(f64),
}

fn descending_order(w: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..w.len()).collect();
    // Stable sort: ties keep input order.
    idx.sort_by(|&a, &b| w[b].total_cmp(&w[a]));
    idx
}

pub fn truncate(weights: &WeightVector, rule: TruncationRule) -> Result<WeightVector> {
    if weights.truncation != Truncation::None {
        return Err(Error::InvalidArgument("weights are already truncated".into()));
    }
    let w = &weights.weights;
    let mut out = weights.clone();
    match rule {
        TruncationRule::EssCap(cap) => {
            if !(cap > 0.0) {
                return Err(Error::InvalidArgument(format!("internal sample size must be positive, got {cap}")));
            }
            out.truncation = Truncation::EssCap { cap };
            let mut sum = 0.0;
            let mut cutoff = None;
            for i in descending_order(w) {
                if cutoff.is_none() && sum + w[i] <= cap {
                    sum += w[i];
                } else {
                    cutoff.get_or_insert(w[i]);
                    out.retained[i] = false;
                }
            }
            out.cutoff = cutoff;
        }
        TruncationRule::Quantile(fraction) => {
            if !(0.0..1.0).contains(&fraction) {
                return Err(Error::InvalidArgument(format!("quantile fraction {fraction} outside [0, 1)")));
            }
            out.truncation = Truncation::Quantile { fraction };
            let k = (fraction * w.len() as f64 + 1e-9).floor() as usize;
            let mut asc: Vec<usize> = (0..w.len()).collect();
            asc.sort_by(|&a, &b| w[a].total_cmp(&w[b]));
            for &i in &asc[..k] {
                out.retained[i] = false;
            }
            out.cutoff = asc[..k].last().map(|&i| w[i]);
        }
    }
    Ok(out)
}

/// Sum of the retained weights.
pub fn effective_sample_size(weights: &WeightVector) -> f64 {
    (0..weights.len()).map(|i| weights.effective(i)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ess_cap_example() {
        let w = WeightVector::from_weights(vec![0.9, 0.8, 0.5, 0.2, 0.1]).unwrap();
        let t = truncate(&w, TruncationRule::EssCap(2.0)).unwrap();
        assert_eq!(t.retained, vec![true, true, false, false, false]);
        assert_eq!(t.cutoff, Some(0.5));
        assert!((effective_sample_size(&t) - 1.7).abs() < 1e-12);
    }

    #[test]
    fn under_cap_is_unchanged() {
        let w = WeightVector::from_weights(vec![0.3, 0.3]).unwrap();
        let t = truncate(&w, TruncationRule::EssCap(5.0)).unwrap();
        assert!(t.retained.iter().all(|&r| r));
        assert_eq!(t.cutoff, None);
    }

    #[test]
    fn quantile_drops_smallest() {
        let w = WeightVector::from_weights((0..10).map(|i| f64::from(9 - i) / 10.0).collect()).unwrap();
        let t = truncate(&w, TruncationRule::Quantile(0.2)).unwrap();
        let dropped: Vec<usize> = (0..10).filter(|&i| !t.retained[i]).collect();
        assert_eq!(dropped, vec![8, 9]);
        assert_eq!(t.cutoff, Some(0.1));
    }

    #[test]
    fn bad_arguments() {
        let w = WeightVector::from_weights(vec![0.5]).unwrap();
        assert!(truncate(&w, TruncationRule::Quantile(1.0)).is_err());
        assert!(truncate(&w, TruncationRule::Quantile(-0.1)).is_err());
        assert!(truncate(&w, TruncationRule::EssCap(0.0)).is_err());
        let t = truncate(&w, TruncationRule::EssCap(1.0)).unwrap();
        assert!(truncate(&t, TruncationRule::EssCap(1.0)).is_err());
    }

    #[test]
    fn ess_sums() {
        assert_eq!(effective_sample_size(&WeightVector::from_weights(vec![0.5, 0.25, 0.25]).unwrap()), 1.0);
        assert_eq!(effective_sample_size(&WeightVector::from_weights(vec![0.0; 4]).unwrap()), 0.0);
    }
}
