//! Mating, variation and survivor selection.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::archive::{constrained_dominates_values, crowding_distance};

/// Non-domination rank (0 = first front) of every point.
pub fn nondominated_ranks(values: &[[f64; 3]], violations: &[f64]) -> Vec<usize> {
    let n = values.len();
    let mut dominated_by = vec![0usize; n];
    let mut dominates: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i != j && constrained_dominates_values(&values[i], violations[i], &values[j], violations[j]) {
                dominates[i].push(j);
                dominated_by[j] += 1;
            }
        }
    }
    let mut rank = vec![usize::MAX; n];
    let mut front: Vec<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    let mut r = 0;
    while !front.is_empty() {
        let mut next = Vec::new();
        for &i in &front {
            rank[i] = r;
            for &j in &dominates[i] {
                dominated_by[j] -= 1;
                if dominated_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        front = next;
        r += 1;
    }
    rank
}

/// Rank and crowding distance within the rank's front.
pub fn rank_and_crowding(values: &[[f64; 3]], violations: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let rank = nondominated_ranks(values, violations);
    let mut crowd = vec![0.0; values.len()];
    let max_rank = rank.iter().copied().max().unwrap_or(0);
    for r in 0..=max_rank {
        let idx: Vec<usize> = (0..values.len()).filter(|&i| rank[i] == r).collect();
        let sub: Vec<[f64; 3]> = idx.iter().map(|&i| values[i]).collect();
        for (k, d) in idx.iter().zip(crowding_distance(&sub)) {
            crowd[*k] = d;
        }
    }
    (rank, crowd)
}

/// Indices of the `mu` survivors: by rank, then crowding (larger first), then index.
pub fn select_survivors(values: &[[f64; 3]], violations: &[f64], mu: usize) -> Vec<usize> {
    let (rank, crowd) = rank_and_crowding(values, violations);
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        rank[a]
            .cmp(&rank[b])
            .then(crowd[b].total_cmp(&crowd[a]))
            .then(a.cmp(&b))
    });
    order.truncate(mu);
    order
}

/// k-means on points scaled to the unit cube; returns a cluster per point.
pub fn kmeans<R: Rng + ?Sized>(values: &[[f64; 3]], k: usize, rng: &mut R) -> Vec<usize> {
    let n = values.len();
    if n == 0 {
        return Vec::new();
    }
    let k = k.clamp(1, n);
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for v in values {
        for d in 0..3 {
            lo[d] = lo[d].min(v[d]);
            hi[d] = hi[d].max(v[d]);
        }
    }
    let pts: Vec<[f64; 3]> = values
        .iter()
        .map(|v| std::array::from_fn(|d| if hi[d] > lo[d] { (v[d] - lo[d]) / (hi[d] - lo[d]) } else { 0.0 }))
        .collect();
    let dist2 = |a: &[f64; 3], b: &[f64; 3]| (0..3).map(|d| (a[d] - b[d]).powi(2)).sum::<f64>();

    // k-means++ seeding.
    let mut centers = vec![pts[rng.random_range(0..n)]];
    while centers.len() < k {
        let w: Vec<f64> = pts
            .iter()
            .map(|p| centers.iter().map(|c| dist2(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, wi) in w.iter().enumerate() {
            if u < *wi {
                pick = i;
                break;
            }
            u -= wi;
        }
        centers.push(pts[pick]);
    }

    let mut assign = vec![0usize; n];
    for _ in 0..20 {
        let mut changed = false;
        for (i, p) in pts.iter().enumerate() {
            let best = (0..centers.len())
                .min_by(|&a, &b| dist2(p, &centers[a]).total_cmp(&dist2(p, &centers[b])))
                .unwrap();
            if best != assign[i] {
                assign[i] = best;
                changed = true;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&[f64; 3]> = (0..n).filter(|&i| assign[i] == c).map(|i| &pts[i]).collect();
            if !members.is_empty() {
                *center = std::array::from_fn(|d| members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64);
            }
        }
        if !changed {
            break;
        }
    }
    assign
}

/// Gene-wise uniform crossover of values and step sizes.
pub fn uniform_crossover<R: Rng + ?Sized>(
    a: (&[f64], &[f64]),
    b: (&[f64], &[f64]),
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let n = a.0.len();
    let mut x = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    for g in 0..n {
        let from_a = rng.random::<bool>();
        let (src_x, src_s) = if from_a { a } else { b };
        x.push(src_x[g]);
        s.push(src_s[g]);
    }
    (x, s)
}

/// Self-adaptive Gaussian mutation with log-normal step-size update.
pub fn mutate<R: Rng + ?Sized>(x: &mut [f64], sigma: &mut [f64], bounds: (f64, f64), rng: &mut R) {
    let n = x.len().max(1) as f64;
    let tau = 1.0 / (2.0 * n).sqrt();
    let tau_global = 1.0 / (2.0 * n.sqrt()).sqrt();
    let global: f64 = StandardNormal.sample(rng);
    for (xi, si) in x.iter_mut().zip(sigma.iter_mut()) {
        let local: f64 = StandardNormal.sample(rng);
        *si = (*si * (tau_global * global + tau * local).exp()).clamp(bounds.0, bounds.1);
        let step: f64 = StandardNormal.sample(rng);
        *xi += *si * step;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ranks_of_a_small_set() {
        let v = [[3.0, 3.0, 0.0], [1.0, 1.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let r = nondominated_ranks(&v, &[0.0; 4]);
        assert_eq!(r, vec![0, 1, 1, 2]);
        let r = nondominated_ranks(&v, &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(r[0], 2);
    }

    #[test]
    fn survivors_prefer_rank_then_spread() {
        let v = [[0.0, 4.0, 0.0], [1.0, 3.0, 0.0], [1.1, 2.9, 0.0], [4.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let s = select_survivors(&v, &[0.0; 5], 3);
        assert_eq!(s.len(), 3);
        assert!(s.contains(&0) && s.contains(&3));
        assert!(!s.contains(&4));
    }

    #[test]
    fn kmeans_separates_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut v = Vec::new();
        for i in 0..10 {
            v.push([i as f64 * 0.01, 0.0, 0.0]);
            v.push([10.0 + i as f64 * 0.01, 10.0, 0.0]);
        }
        let a = kmeans(&v, 2, &mut rng);
        for i in 0..10 {
            assert_eq!(a[2 * i], a[0]);
            assert_eq!(a[2 * i + 1], a[1]);
        }
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn mutation_keeps_sigma_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = vec![10.0; 20];
        let mut s = vec![1.0; 20];
        for _ in 0..100 {
            mutate(&mut x, &mut s, (0.01, 5.0), &mut rng);
        }
        assert!(s.iter().all(|&v| (0.01..=5.0).contains(&v)));
    }
}
