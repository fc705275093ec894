//! Shortest-augmenting-path Hungarian method with row/column potentials.

/// Minimum-cost assignment of every row to a distinct column.
///
/// `cost` is row-major with `n` rows and `m >= n` columns. Returns the
/// column of each row and the total cost. O(n² m).
pub fn solve(cost: &[f64], n: usize, m: usize) -> (Vec<usize>, f64) {
    assert!(n <= m, "need at least as many columns as rows");
    assert_eq!(cost.len(), n * m);
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let c = |i: usize, j: usize| cost[(i - 1) * m + (j - 1)];
    // 1-based, index 0 is the virtual source column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![0.0; m + 1];
    let mut used = vec![false; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|x| *x = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = c(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=m {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    let total = assignment.iter().enumerate().map(|(i, &j)| cost[i * m + j]).sum();
    (assignment, total)
}
