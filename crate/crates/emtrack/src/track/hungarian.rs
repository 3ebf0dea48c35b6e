use crate::geom::{iou_bev, Box3D};

/// Minimum-cost assignment (Kuhn-Munkres with potentials / shortest
/// augmenting paths). Returns, for each row, the assigned column. Rectangular
/// inputs are handled by implicit padding; rows beyond the column count stay
/// unassigned.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    if m == 0 {
        return vec![None; n];
    }
    let size = n.max(m);
    const PAD: f64 = 1e9;
    let at = |i: usize, j: usize| -> f64 {
        if i < n && j < m {
            cost[i][j]
        } else {
            PAD
        }
    };

    // 1-indexed potentials, standard formulation.
    let mut u = vec![0.0f64; size + 1];
    let mut v = vec![0.0f64; size + 1];
    let mut p = vec![0usize; size + 1]; // column -> row
    let mut way = vec![0usize; size + 1];
    for i in 1..=size {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; size + 1];
        let mut used = vec![false; size + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=size {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=size {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assign = vec![None; n];
    for j in 1..=size {
        let i = p[j];
        if i >= 1 && i <= n && j <= m {
            assign[i - 1] = Some(j - 1);
        }
    }
    assign
}

/// Hungarian association of two detection sets by BEV IoU, minimizing the
/// total (1 − IoU). Pairs at or below the gate stay unmatched.
pub fn associate_iou(dets_a: &[Box3D], dets_b: &[Box3D], gate: f64) -> Vec<(usize, usize)> {
    if dets_a.is_empty() || dets_b.is_empty() {
        return Vec::new();
    }
    let cost: Vec<Vec<f64>> = dets_a
        .iter()
        .map(|a| dets_b.iter().map(|b| 1.0 - iou_bev(a, b)).collect())
        .collect();
    hungarian(&cost)
        .into_iter()
        .enumerate()
        .filter_map(|(i, j)| {
            let j = j?;
            (iou_bev(&dets_a[i], &dets_b[j]) > gate).then_some((i, j))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn brute_force_min(cost: &[Vec<f64>]) -> f64 {
        let m = cost[0].len();
        let mut cols: Vec<usize> = (0..m).collect();
        let mut best = f64::INFINITY;
        // All injective assignments of min(n,m) rows to columns via
        // permutations of the longer side.
        fn perms(cols: &mut Vec<usize>, k: usize, cost: &[Vec<f64>], best: &mut f64) {
            let n = cost.len();
            if k == cols.len() || k == n {
                let total: f64 = (0..n.min(cols.len())).map(|i| cost[i][cols[i]]).sum();
                *best = best.min(total);
                return;
            }
            for i in k..cols.len() {
                cols.swap(k, i);
                perms(cols, k + 1, cost, best);
                cols.swap(k, i);
            }
        }
        perms(&mut cols, 0, cost, &mut best);
        best
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.gen_range(1..=6);
            let m = rng.gen_range(n..=6); // columns >= rows keeps all rows assigned
            let cost: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..m).map(|_| rng.gen_range(0.0..1.0)).collect())
                .collect();
            let assign = hungarian(&cost);
            let total: f64 = assign
                .iter()
                .enumerate()
                .map(|(i, j)| cost[i][j.unwrap()])
                .sum();
            let expect = brute_force_min(&cost);
            assert!((total - expect).abs() < 1e-9, "{total} vs {expect}");
            // Injectivity.
            let mut seen = std::collections::HashSet::new();
            for j in assign.iter().flatten() {
                assert!(seen.insert(*j));
            }
        }
    }

    fn boxed(x: f64, z: f64) -> Box3D {
        Box3D::new([x, 0.0, z], [1.0, 1.0, 1.0], 0.0, 1.0)
    }

    #[test]
    fn identity_matching_for_identical_lists() {
        let dets = vec![boxed(0.0, 0.0), boxed(3.0, 0.0), boxed(0.0, 3.0)];
        let matches = associate_iou(&dets, &dets, 0.1);
        assert_eq!(matches, vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn disjoint_sets_make_no_matches() {
        let a = vec![boxed(0.0, 0.0)];
        let b = vec![boxed(10.0, 10.0)];
        assert!(associate_iou(&a, &b, 0.1).is_empty());
    }

    #[test]
    fn hungarian_escapes_greedy_trap() {
        // Greedy would give row0 its best column and starve row1; the
        // optimal assignment swaps them.
        let a = vec![boxed(0.0, 0.0), boxed(0.6, 0.0)];
        let b = vec![boxed(0.45, 0.0), boxed(-0.25, 0.0)];
        let matches = associate_iou(&a, &b, 0.05);
        assert_eq!(matches.len(), 2);
        let total: f64 = matches
            .iter()
            .map(|&(i, j)| iou_bev(&a[i], &b[j]))
            .sum();
        // Compare against all 2x2 assignments.
        let alt = iou_bev(&a[0], &b[0]) + iou_bev(&a[1], &b[1]);
        let swap = iou_bev(&a[0], &b[1]) + iou_bev(&a[1], &b[0]);
        assert!((total - alt.max(swap)).abs() < 1e-9);
    }
}
