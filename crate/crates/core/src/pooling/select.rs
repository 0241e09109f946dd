use crate::error::{Error, Result};

/// `max(1, ⌈ratio·n⌉)`, capped at `n`.
pub fn topk_count(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).ceil() as usize).clamp(1, n.max(1))
}

/// Indices of the `k = max(1, ⌈ratio·n⌉)` largest scores, ties broken
/// towards the lower index, returned in ascending index order.
pub fn select_topk(scores: &[f64], ratio: f64) -> Result<Vec<usize>> {
    if scores.is_empty() {
        return Err(Error::Empty("select_topk on empty scores"));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "ratio {ratio} outside (0, 1]"
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite pooling score".into()));
    }
    let k = topk_count(scores.len(), ratio);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut idx = order[..k].to_vec();
    idx.sort_unstable();
    Ok(idx)
}
