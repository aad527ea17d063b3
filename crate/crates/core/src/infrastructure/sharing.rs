/// Max-min fair (water-filling) division of `capacity` among `demands`.
///
/// Demands are visited in ascending order; each gets the smaller of its
/// demand and an equal split of what is left among the unserved demands.
/// The result sums to `min(capacity, Σ demands)` and never exceeds a demand.
pub fn share_mips_max_min(demands: &[f64], capacity: f64) -> Vec<f64> {
    let mut alloc = vec![0.0; demands.len()];
    if demands.is_empty() || capacity.is_nan() || capacity <= 0.0 {
        return alloc;
    }
    let mut order: Vec<usize> = (0..demands.len()).collect();
    order.sort_by(|&a, &b| demands[a].total_cmp(&demands[b]).then(a.cmp(&b)));
    let mut left = capacity;
    for (k, &i) in order.iter().enumerate() {
        let unserved = (order.len() - k) as f64;
        let fair = left / unserved;
        let grant = demands[i].max(0.0).min(fair);
        alloc[i] = grant;
        left -= grant;
    }
    alloc
}
