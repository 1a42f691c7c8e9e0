/// 1 if `target` is among the first `k` entries of `list`.
pub fn recall_at_k(list: &[usize], target: usize, k: usize) -> f64 {
    if list.iter().take(k).any(|&i| i == target) {
        1.0
    } else {
        0.0
    }
}

/// Single-target NDCG: `1 / log2(rank + 1)` for a 1-based rank within the top `k`.
pub fn ndcg_at_k(list: &[usize], target: usize, k: usize) -> f64 {
    match list.iter().take(k).position(|&i| i == target) {
        Some(pos) => 1.0 / ((pos + 2) as f64).log2(),
        None => 0.0,
    }
}
