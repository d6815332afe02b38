/// Euclidean projection onto the probability simplex via the sort-and-threshold
/// rule: find the largest `ρ` with `u_ρ − (Σ_{i≤ρ} u_i − 1)/ρ > 0` over the
/// descending sort `u`, then clip `v − θ` at zero.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    assert!(!v.is_empty(), "cannot project an empty vector");
    debug_assert!(v.iter().all(|x| x.is_finite()));
    let mut sorted = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (i + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|&x| (x - theta).max(0.0)).collect();
    // absorb rounding so the output sums to one to machine precision
    let total: f64 = out.iter().sum();
    if total > 0.0 && total != 1.0 {
        let largest = out
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        out[largest] += 1.0 - total;
        out[largest] = out[largest].max(0.0);
    }
    out
}
