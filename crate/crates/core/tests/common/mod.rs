//! Independent reference oracles for the integration tests. Everything here
//! deliberately avoids the library's own code paths: elimination instead of
//! Cholesky, cofactor expansion instead of log-space products, full Jacobi
//! instead of block iteration, exhaustive enumeration instead of greedy
//! selection.

#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Gaussian elimination with partial pivoting
// ---------------------------------------------------------------------------

/// Solves `A x = b` by elimination; `None` when a pivot vanishes.
pub fn gauss_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().cloned().collect();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let pivot_row = (col..n).max_by(|&r1, &r2| m[r1][col].abs().total_cmp(&m[r2][col].abs()))?;
        if m[pivot_row][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot_row);
        rhs.swap(col, pivot_row);
        for r in (col + 1)..n {
            let f = m[r][col] / m[col][col];
            for c in col..n {
                m[r][c] -= f * m[col][c];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut s = rhs[r];
        for c in (r + 1)..n {
            s -= m[r][c] * x[c];
        }
        x[r] = s / m[r][r];
    }
    Some(x)
}

/// `ln det(A)` via LU with partial pivoting; `None` when singular or the
/// determinant is not positive.
pub fn gauss_log_det(a: &[Vec<f64>]) -> Option<f64> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut sign = 1.0f64;
    let mut log_abs = 0.0f64;
    for col in 0..n {
        let pivot_row = (col..n).max_by(|&r1, &r2| m[r1][col].abs().total_cmp(&m[r2][col].abs()))?;
        if m[pivot_row][col].abs() < 1e-300 {
            return None;
        }
        if pivot_row != col {
            m.swap(col, pivot_row);
            sign = -sign;
        }
        let p = m[col][col];
        sign *= p.signum();
        log_abs += p.abs().ln();
        for r in (col + 1)..n {
            let f = m[r][col] / p;
            for c in col..n {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    if sign > 0.0 {
        Some(log_abs)
    } else {
        None
    }
}

/// Determinant by cofactor expansion, practical for n <= 6.
pub fn cofactor_det(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    if n == 1 {
        return a[0][0];
    }
    let mut det = 0.0;
    for (j, &a0j) in a[0].iter().enumerate() {
        let minor: Vec<Vec<f64>> = (1..n)
            .map(|r| {
                (0..n)
                    .filter(|&c| c != j)
                    .map(|c| a[r][c])
                    .collect()
            })
            .collect();
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        det += sign * a0j * cofactor_det(&minor);
    }
    det
}

/// Random symmetric positive-definite matrix `lambda I + sum of unit rank-1
/// terms`, returned as plain rows for the oracles.
pub fn random_pd_rows(dim: usize, lambda: f64, terms: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; dim]; dim];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = lambda;
    }
    for _ in 0..terms {
        let x = random_unit_vector(dim, rng);
        for i in 0..dim {
            for j in 0..dim {
                a[i][j] += x[i] * x[j];
            }
        }
    }
    a
}

pub fn random_unit_vector(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

// ---------------------------------------------------------------------------
// Exhaustive cascade-reward maximization
// ---------------------------------------------------------------------------

fn cascade_reward(weights: &[f64], subset: &[usize]) -> f64 {
    1.0 - subset.iter().map(|&i| 1.0 - weights[i]).product::<f64>()
}

/// Enumerates every K-subset in lexicographic order and returns the first
/// subset attaining the maximum expected cascade reward, with that value.
pub fn best_subset_by_enumeration(weights: &[f64], k: usize) -> (Vec<usize>, f64) {
    let n = weights.len();
    assert!(k >= 1 && k <= n);
    let mut subset: Vec<usize> = (0..k).collect();
    let mut best = subset.clone();
    let mut best_val = cascade_reward(weights, &subset);
    loop {
        // advance to the next combination in lexicographic order
        let mut i = k;
        loop {
            if i == 0 {
                return (best, best_val);
            }
            i -= 1;
            if subset[i] != i + n - k {
                break;
            }
            if i == 0 {
                return (best, best_val);
            }
        }
        subset[i] += 1;
        for j in (i + 1)..k {
            subset[j] = subset[j - 1] + 1;
        }
        let v = cascade_reward(weights, &subset);
        if v > best_val {
            best_val = v;
            best = subset.clone();
        }
    }
}

/// Number of K-subsets attaining exactly `target` expected cascade reward.
pub fn count_argmax_subsets(weights: &[f64], k: usize, target: f64) -> usize {
    let n = weights.len();
    let mut subset: Vec<usize> = (0..k).collect();
    let mut count = 0usize;
    loop {
        if cascade_reward(weights, &subset) == target {
            count += 1;
        }
        let mut i = k;
        loop {
            if i == 0 {
                return count;
            }
            i -= 1;
            if subset[i] != i + n - k {
                break;
            }
            if i == 0 {
                return count;
            }
        }
        subset[i] += 1;
        for j in (i + 1)..k {
            subset[j] = subset[j - 1] + 1;
        }
    }
}

// ---------------------------------------------------------------------------
// Full Jacobi eigendecomposition (reference for the SVD)
// ---------------------------------------------------------------------------

/// Eigenvalues (descending) of a symmetric matrix by cyclic Jacobi sweeps.
pub fn jacobi_eigenvalues(a: &[Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let scale = m
        .iter()
        .flat_map(|r| r.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    for _sweep in 0..300 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i][j] * m[i][j];
            }
        }
        if off.sqrt() <= 1e-13 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p][q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let tau = (m[q][q] - m[p][p]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut diag: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    diag.sort_by(|x, y| y.total_cmp(x));
    diag
}

/// Singular values (descending) of a rectangular matrix via the Gram matrix.
pub fn reference_singular_values(rows: &[Vec<f64>]) -> Vec<f64> {
    let r = rows.len();
    let c = rows[0].len();
    let (n, gram): (usize, Vec<Vec<f64>>) = if c <= r {
        let mut g = vec![vec![0.0; c]; c];
        for row in rows {
            for i in 0..c {
                for j in 0..c {
                    g[i][j] += row[i] * row[j];
                }
            }
        }
        (c, g)
    } else {
        let mut g = vec![vec![0.0; r]; r];
        for i in 0..r {
            for j in 0..r {
                g[i][j] = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            }
        }
        (r, g)
    };
    let _ = n;
    jacobi_eigenvalues(&gram).into_iter().map(|l| l.max(0.0).sqrt()).collect()
}

// ---------------------------------------------------------------------------
// Brute-force k-means
// ---------------------------------------------------------------------------

/// Minimum inertia over every labeling of the points into at most k groups
/// (centers at group means). Exponential; for tiny instances only.
pub fn kmeans_brute_force(points: &[Vec<f64>], k: usize) -> (Vec<usize>, f64) {
    let n = points.len();
    let dim = points[0].len();
    let mut best_labels = vec![0; n];
    let mut best = f64::INFINITY;
    let mut labels = vec![0usize; n];
    let total = (k as u64).pow(n as u32);
    for code in 0..total {
        let mut c = code;
        for l in labels.iter_mut() {
            *l = (c % k as u64) as usize;
            c /= k as u64;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[labels[i]] += 1;
            for (s, v) in sums[labels[i]].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut inertia = 0.0;
        for (i, p) in points.iter().enumerate() {
            let l = labels[i];
            let cnt = counts[l] as f64;
            inertia += p
                .iter()
                .enumerate()
                .map(|(d, v)| {
                    let mean = sums[l][d] / cnt;
                    (v - mean) * (v - mean)
                })
                .sum::<f64>();
        }
        if inertia < best {
            best = inertia;
            best_labels = labels.clone();
        }
    }
    (best_labels, best)
}

/// True when two labelings induce the same partition of indices.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let canonical = |labels: &[usize]| -> Vec<usize> {
        let mut map = std::collections::HashMap::new();
        let mut next = 0usize;
        labels
            .iter()
            .map(|l| {
                *map.entry(*l).or_insert_with(|| {
                    let v = next;
                    next += 1;
                    v
                })
            })
            .collect()
    };
    canonical(a) == canonical(b)
}
