use ndarray::ArrayView2;

use super::ops;
use crate::cost::OpCounter;
use crate::error::{Error, Result};

/// Importance of each token: the Euclidean norm of its value vector
/// (all heads concatenated).
pub fn token_importance(values: ArrayView2<f64>) -> Vec<f64> {
    ops::row_norms(values, &mut OpCounter::default())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenSelection {
    pub importance: Vec<f64>,
    /// Selected token indices (0-based), ascending.
    pub selected: Vec<usize>,
}

/// `max(1, ⌊p·N⌋)`. A 1e-9 slack absorbs the representation error of `p`
/// (`0.29 · 100` is `28.999…` in binary floating point).
pub fn selection_size(tokens: usize, ratio: f64) -> usize {
    ((ratio * tokens as f64 + 1e-9).floor() as usize).clamp(1, tokens)
}

/// Top-`max(1, ⌊p·N⌋)` tokens by importance; ties go to the lower index.
pub fn select_tokens(importance: &[f64], ratio: f64) -> Result<TokenSelection> {
    if importance.is_empty() {
        return Err(Error::argument("cannot select from zero tokens"));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::argument(format!("token ratio {ratio} outside (0, 1]")));
    }
    let k = selection_size(importance.len(), ratio);
    let mut order: Vec<usize> = (0..importance.len()).collect();
    order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    let mut selected = order[..k].to_vec();
    selected.sort_unstable();
    Ok(TokenSelection {
        importance: importance.to_vec(),
        selected,
    })
}
