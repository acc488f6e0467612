//! Per-layer scaling of the consistency terms.

use super::GammaScheme;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GammaFactors {
    /// One positive factor per ReLU layer.
    pub factors: Vec<f64>,
    /// 1-based ascending rank of each layer's width.
    pub ranks: Vec<usize>,
}

impl GammaFactors {
    /// Upper bound of the score, reached when every layer agrees perfectly.
    pub fn max_score(&self) -> f64 {
        self.factors.iter().map(|g| 1.0 / g).sum()
    }
}

/// Ranks widths ascending with ties broken by layer index.
fn ranks(sizes: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by_key(|&i| (sizes[i], i));
    let mut r = vec![0; sizes.len()];
    for (pos, &i) in order.iter().enumerate() {
        r[i] = pos + 1;
    }
    r
}

pub fn gamma_factors(hidden_sizes: &[usize], scheme: GammaScheme) -> Result<GammaFactors> {
    if hidden_sizes.is_empty() || hidden_sizes.contains(&0) {
        return Err(Error::Config(format!("hidden sizes must be non-empty and positive, got {hidden_sizes:?}")));
    }
    let ranks = ranks(hidden_sizes);
    let factors = match scheme {
        GammaScheme::Unit => vec![1.0; ranks.len()],
        GammaScheme::ExpRank => ranks.iter().map(|&r| 2f64.powi(r as i32)).collect(),
        GammaScheme::RankTimesSize => ranks.iter().zip(hidden_sizes).map(|(&r, &m)| (r * m) as f64).collect(),
    };
    Ok(GammaFactors { factors, ranks })
}
