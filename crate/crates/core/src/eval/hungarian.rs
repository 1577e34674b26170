use crate::error::{Error, Result};

/// `Σ_i counts[i][σ(i)]` for a row-major square matrix.
pub fn assignment_value(counts: &[u64], n: usize, perm: &[usize]) -> u64 {
    perm.iter().enumerate().map(|(i, &j)| counts[i * n + j]).sum()
}

/// Kuhn–Munkres in `O(n³)`: the permutation `σ` (row `i` → column `σ(i)`)
/// maximizing `Σ_i counts[i][σ(i)]`. Among optimal permutations the one with
/// the most fixed points is returned, so ties resolve toward the identity.
pub fn hungarian_match(counts: &[u64], n: usize) -> Result<Vec<usize>> {
    if counts.len() != n * n {
        return Err(Error::InvalidArgument(format!(
            "Hungarian matching needs a square matrix: {} entries for n = {n}",
            counts.len()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let top = *counts.iter().max().unwrap() as i128;
    // minimize (top - c)·(n + 1) + [i ≠ j]; the off-diagonal penalty sums to
    // at most n, below one unit of the scaled count
    let scale = n as i128 + 1;
    let cost = |i: usize, j: usize| (top - counts[i * n + j] as i128) * scale + i128::from(i != j);

    // potentials u (rows), v (cols), 1-based with a virtual column 0
    let inf = i128::MAX / 4;
    let mut u = vec![0i128; n + 1];
    let mut v = vec![0i128; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
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
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[owner[j] - 1] = j - 1;
    }
    Ok(perm)
}
