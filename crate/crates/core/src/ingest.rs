//! Ratings-matrix preprocessing: top-N filtering, truncated SVD user/item
//! embeddings via block orthogonal iteration, k-means user clustering, and a
//! versioned binary embedding bundle consumed by the ratings-mode
//! environment.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::numerics::{dot, l2_distance, l2_norm};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub const BUNDLE_MAGIC: &[u8; 5] = b"CFEB1";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    MalformedRow { line: usize, message: String },
    #[error("ratings table is empty")]
    EmptyTable,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("svd did not converge within {iterations} iterations (achieved tolerance {achieved:e}, wanted {wanted:e})")]
    SvdNoConvergence { iterations: usize, achieved: f64, wanted: f64 },
    #[error("item {index} has a degenerate (near-zero) embedding")]
    DegenerateItem { index: usize },
    #[error("bad magic string {found:?} (expected {expected:?}); not a bundle or wrong version")]
    BadMagic { found: Vec<u8>, expected: Vec<u8> },
    #[error("corrupt bundle: {0}")]
    Corrupt(String),
    #[error("invalid bundle: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatingRow {
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
}

/// A deduplicated (user, item, rating) table; on duplicate (user, item)
/// pairs the last rating wins.
#[derive(Debug, Clone, Default)]
pub struct RatingsTable {
    pub rows: Vec<RatingRow>,
}

impl RatingsTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Parses a `user_id,item_id,rating` CSV with a mandatory header, keeping
/// the last rating for duplicate (user, item) pairs.
pub fn load_ratings(path: impl AsRef<Path>) -> Result<RatingsTable, IngestError> {
    let text = std::fs::read_to_string(path)?;
    parse_ratings(&text)
}

pub fn parse_ratings(text: &str) -> Result<RatingsTable, IngestError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end_matches('\r') == "user_id,item_id,rating" => {}
        Some((_, header)) => {
            return Err(IngestError::MalformedRow {
                line: 1,
                message: format!("expected header 'user_id,item_id,rating', got '{header}'"),
            })
        }
        None => return Err(IngestError::EmptyTable),
    }
    let mut rows: Vec<RatingRow> = Vec::new();
    let mut index: HashMap<(String, String), usize> = HashMap::new();
    for (i, raw) in lines {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(IngestError::MalformedRow {
                line: line_no,
                message: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let rating: f64 = fields[2].trim().parse().map_err(|_| IngestError::MalformedRow {
            line: line_no,
            message: format!("non-numeric rating '{}'", fields[2]),
        })?;
        let key = (fields[0].to_string(), fields[1].to_string());
        match index.get(&key) {
            Some(&pos) => rows[pos].rating = rating,
            None => {
                index.insert(key.clone(), rows.len());
                rows.push(RatingRow { user_id: key.0, item_id: key.1, rating });
            }
        }
    }
    Ok(RatingsTable { rows })
}

#[derive(Debug)]
pub struct TopFilterOutcome {
    pub table: RatingsTable,
    pub warnings: Vec<String>,
}

/// Keeps the `n_items` most-rated items, then the `n_users` most-active
/// users within those items. Count ties break toward the lexicographically
/// smaller id. Asking for more than exist keeps everything and warns.
pub fn top_filter(
    table: &RatingsTable,
    n_items: usize,
    n_users: usize,
) -> Result<TopFilterOutcome, IngestError> {
    if table.is_empty() {
        return Err(IngestError::EmptyTable);
    }
    let mut warnings = Vec::new();

    let mut item_counts: HashMap<&str, usize> = HashMap::new();
    for r in &table.rows {
        *item_counts.entry(r.item_id.as_str()).or_insert(0) += 1;
    }
    let kept_items = top_by_count(item_counts, n_items, "items", &mut warnings);

    let item_rows: Vec<&RatingRow> =
        table.rows.iter().filter(|r| kept_items.contains_key(r.item_id.as_str())).collect();

    let mut user_counts: HashMap<&str, usize> = HashMap::new();
    for r in &item_rows {
        *user_counts.entry(r.user_id.as_str()).or_insert(0) += 1;
    }
    let kept_users = top_by_count(user_counts, n_users, "users", &mut warnings);

    let rows = item_rows
        .into_iter()
        .filter(|r| kept_users.contains_key(r.user_id.as_str()))
        .cloned()
        .collect();
    Ok(TopFilterOutcome { table: RatingsTable { rows }, warnings })
}

fn top_by_count<'a>(
    counts: HashMap<&'a str, usize>,
    n: usize,
    what: &str,
    warnings: &mut Vec<String>,
) -> HashMap<String, usize> {
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    if ranked.len() < n {
        warnings.push(format!("requested {n} {what} but only {} are present; keeping all", ranked.len()));
    }
    ranked.truncate(n);
    ranked.into_iter().map(|(id, c)| (id.to_string(), c)).collect()
}

// ---------------------------------------------------------------------------
// Dense matrices and the truncated SVD
// ---------------------------------------------------------------------------

/// Row-major dense matrix used by the embedding pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c);
            data.extend(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Maps row indices to row vectors, in parallel when the feature is enabled.
/// Each row is produced independently, so the result is bit-identical to the
/// sequential path.
fn build_rows<F>(n: usize, f: F) -> Vec<Vec<f64>>
where
    F: Fn(usize) -> Vec<f64> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// `A^T A` via the pre-transposed matrix, exploiting symmetry.
fn gram_of_transpose(mt: &Matrix) -> Matrix {
    let n = mt.rows;
    let rows = build_rows(n, |i| {
        let mut row = vec![0.0; n];
        for j in i..n {
            row[j] = dot(mt.row(i), mt.row(j));
        }
        row
    });
    let mut g = Matrix::from_rows(rows);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = g.get(i, j);
            g.set(j, i, v);
        }
    }
    g
}

/// `A * Q` for symmetric `A` (n x n) and block `Q` (n x d).
fn sym_times_block(a: &Matrix, q: &Matrix) -> Matrix {
    let d = q.cols;
    let rows = build_rows(a.rows, |i| {
        let arow = a.row(i);
        let mut out = vec![0.0; d];
        for (k, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let qrow = q.row(k);
                for (o, &qv) in out.iter_mut().zip(qrow) {
                    *o += av * qv;
                }
            }
        }
        out
    });
    Matrix::from_rows(rows)
}

/// Modified Gram-Schmidt over block columns; columns that collapse below
/// `1e-12` of the block scale are refilled from the deterministic stream and
/// re-orthogonalized, which keeps the iteration alive on rank-deficient
/// inputs.
fn orthonormalize_columns(z: &mut Matrix, rng: &mut ChaCha12Rng) {
    let n = z.rows;
    let d = z.cols;
    let scale = z.frobenius_norm().max(1.0);
    for j in 0..d {
        for attempt in 0..64 {
            if attempt > 0 {
                for r in 0..n {
                    z.set(r, j, rng.sample::<f64, _>(StandardNormal));
                }
            }
            // project out earlier columns twice for stability
            for _ in 0..2 {
                for k in 0..j {
                    let mut p = 0.0;
                    for r in 0..n {
                        p += z.get(r, k) * z.get(r, j);
                    }
                    for r in 0..n {
                        let v = z.get(r, j) - p * z.get(r, k);
                        z.set(r, j, v);
                    }
                }
            }
            let norm = (0..n).map(|r| z.get(r, j) * z.get(r, j)).sum::<f64>().sqrt();
            if norm > 1e-12 * scale {
                for r in 0..n {
                    let v = z.get(r, j) / norm;
                    z.set(r, j, v);
                }
                break;
            }
        }
    }
}

/// Cyclic Jacobi eigendecomposition of a small symmetric matrix. Returns
/// eigenvalues (descending) and eigenvectors as columns.
fn jacobi_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
    let n = a.rows;
    let mut m = a.clone();
    let mut v = Matrix::zeros(n, n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }
    let scale = m.frobenius_norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..200 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m.get(i, j) * m.get(i, j);
            }
        }
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
    order.sort_unstable_by(|&x, &y| diag[y].total_cmp(&diag[x]).then(x.cmp(&y)));
    let eigvals: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut vecs = Matrix::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        for r in 0..n {
            vecs.set(r, new_col, v.get(r, old_col));
        }
    }
    (eigvals, vecs)
}

/// Rank-`d` truncated SVD `M ~ U S V^T`.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    /// Singular values, descending.
    pub singular_values: Vec<f64>,
    /// Left singular vectors, one row per matrix row (rows x d).
    pub left: Vec<Vec<f64>>,
    /// Right singular vectors, one row per matrix column (cols x d).
    pub right: Vec<Vec<f64>>,
}

const SVD_TOLERANCE: f64 = 1e-8;
const SVD_MAX_ITERATIONS: usize = 1000;

/// Truncated SVD by block orthogonal iteration on the smaller Gram matrix.
/// Deterministic: the iteration starts from a fixed internal stream.
pub fn truncated_svd(m: &Matrix, d: usize) -> Result<TruncatedSvd, IngestError> {
    if d == 0 || d > m.rows.min(m.cols) {
        return Err(IngestError::InvalidParameter(format!(
            "rank d={} must be in [1, min(rows={}, cols={})]",
            d, m.rows, m.cols
        )));
    }
    let tall = m.cols <= m.rows; // iterate on M^T M when columns are fewer
    let mt = m.transpose();
    let gram = if tall { gram_of_transpose(&mt) } else { gram_of_transpose(m) };
    let n = gram.rows;

    let mut rng = ChaCha12Rng::seed_from_u64(0x5eed_0c0f_fee0_0001);
    let mut q = Matrix::from_rows(build_rows(n, |_| vec![0.0; d]));
    for r in 0..n {
        for c in 0..d {
            q.set(r, c, rng.sample::<f64, _>(StandardNormal));
        }
    }
    orthonormalize_columns(&mut q, &mut rng);

    let mut achieved = f64::INFINITY;
    let mut converged = false;
    for _ in 0..SVD_MAX_ITERATIONS {
        let z = sym_times_block(&gram, &q);
        let z_norm = z.frobenius_norm();
        if z_norm < 1e-300 {
            converged = true; // the matrix is (numerically) zero
            break;
        }
        // Ritz block B = Q^T Z and residual Z - Q B measure how invariant
        // the current subspace is.
        let mut b = Matrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                let mut s = 0.0;
                for r in 0..n {
                    s += q.get(r, i) * z.get(r, j);
                }
                b.set(i, j, s);
            }
        }
        let mut resid = 0.0;
        for r in 0..n {
            for j in 0..d {
                let mut v = z.get(r, j);
                for k in 0..d {
                    v -= q.get(r, k) * b.get(k, j);
                }
                resid += v * v;
            }
        }
        achieved = resid.sqrt() / z_norm;
        if achieved <= SVD_TOLERANCE {
            converged = true;
            break;
        }
        let mut next = z;
        orthonormalize_columns(&mut next, &mut rng);
        q = next;
    }
    if !converged {
        return Err(IngestError::SvdNoConvergence {
            iterations: SVD_MAX_ITERATIONS,
            achieved,
            wanted: SVD_TOLERANCE,
        });
    }

    // Ritz projection: eigen-decompose Q^T A Q to align the block with the
    // eigenvectors of the Gram matrix.
    let z = sym_times_block(&gram, &q);
    let mut b = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for r in 0..n {
                s += q.get(r, i) * z.get(r, j);
            }
            b.set(i, j, 0.5 * (s + s)); // symmetric up to roundoff
        }
    }
    // symmetrize explicitly
    for i in 0..d {
        for j in (i + 1)..d {
            let v = 0.5 * (b.get(i, j) + b.get(j, i));
            b.set(i, j, v);
            b.set(j, i, v);
        }
    }
    let (eigvals, w) = jacobi_eigen(&b);
    let singular_values: Vec<f64> = eigvals.iter().map(|&l| l.max(0.0).sqrt()).collect();

    // primary factor: eigenvectors of the Gram side (n x d)
    let primary = build_rows(n, |r| {
        (0..d)
            .map(|c| {
                let mut s = 0.0;
                for k in 0..d {
                    s += q.get(r, k) * w.get(k, c);
                }
                s
            })
            .collect()
    });

    let sigma_max = singular_values.first().copied().unwrap_or(0.0);
    let derive_other = |source: &Matrix| -> Vec<Vec<f64>> {
        // other[r][k] = (source row r) . primary_col_k / sigma_k
        build_rows(source.rows, |r| {
            let srow = source.row(r);
            (0..d)
                .map(|k| {
                    if singular_values[k] <= 1e-12 * sigma_max.max(1e-300) {
                        return 0.0;
                    }
                    let mut s = 0.0;
                    for (c, &sv) in srow.iter().enumerate() {
                        s += sv * primary[c][k];
                    }
                    s / singular_values[k]
                })
                .collect()
        })
    };

    let (left, right) = if tall {
        // primary = V (cols x d); U = M V / sigma
        let left = derive_other(m);
        (left, primary)
    } else {
        // primary = U (rows x d); V = M^T U / sigma
        let right = derive_other(&mt);
        (primary, right)
    };
    Ok(TruncatedSvd { singular_values, left, right })
}

/// User/item embeddings from a ratings table: missing entries are zeros,
/// user rows come from `U sqrt(S)` and item rows from `V sqrt(S)`; item rows
/// are then l2-normalized and user rows jointly scaled into the unit ball.
#[derive(Debug, Clone)]
pub struct SvdEmbedding {
    pub singular_values: Vec<f64>,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub user_vectors: Vec<Vec<f64>>,
    pub item_vectors: Vec<Vec<f64>>,
}

pub fn svd_embed(table: &RatingsTable, d: usize) -> Result<SvdEmbedding, IngestError> {
    if table.is_empty() {
        return Err(IngestError::EmptyTable);
    }
    let mut user_ids: Vec<String> = table.rows.iter().map(|r| r.user_id.clone()).collect();
    user_ids.sort_unstable();
    user_ids.dedup();
    let mut item_ids: Vec<String> = table.rows.iter().map(|r| r.item_id.clone()).collect();
    item_ids.sort_unstable();
    item_ids.dedup();
    if d > user_ids.len().min(item_ids.len()) {
        return Err(IngestError::InvalidParameter(format!(
            "embedding dim d={} exceeds min(users={}, items={})",
            d,
            user_ids.len(),
            item_ids.len()
        )));
    }
    let user_index: HashMap<&str, usize> =
        user_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let item_index: HashMap<&str, usize> =
        item_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut m = Matrix::zeros(user_ids.len(), item_ids.len());
    for r in &table.rows {
        m.set(user_index[r.user_id.as_str()], item_index[r.item_id.as_str()], r.rating);
    }

    let svd = truncated_svd(&m, d)?;
    let sqrt_s: Vec<f64> = svd.singular_values.iter().map(|s| s.sqrt()).collect();

    let mut item_vectors: Vec<Vec<f64>> = svd
        .right
        .iter()
        .map(|row| row.iter().zip(&sqrt_s).map(|(v, s)| v * s).collect())
        .collect();
    for (i, v) in item_vectors.iter_mut().enumerate() {
        let n = l2_norm(v);
        if n < 1e-12 {
            return Err(IngestError::DegenerateItem { index: i });
        }
        for e in v.iter_mut() {
            *e /= n;
        }
    }

    let mut user_vectors: Vec<Vec<f64>> = svd
        .left
        .iter()
        .map(|row| row.iter().zip(&sqrt_s).map(|(v, s)| v * s).collect())
        .collect();
    let max_norm = user_vectors.iter().map(|v| l2_norm(v)).fold(0.0f64, f64::max);
    if max_norm > 1.0 {
        for v in &mut user_vectors {
            for e in v.iter_mut() {
                *e /= max_norm;
            }
        }
    }

    Ok(SvdEmbedding {
        singular_values: svd.singular_values,
        user_ids,
        item_ids,
        user_vectors,
        item_vectors,
    })
}

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centers: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
}

fn nearest_center(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, center) in centers.iter().enumerate() {
        let d: f64 = point.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

/// Lloyd's algorithm with k-means++ seeding. Empty clusters are re-seeded
/// from the point farthest from its current center. Stops when no center
/// moves more than 1e-8, or after 300 iterations.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    rng: &mut impl Rng,
) -> Result<KMeansResult, IngestError> {
    if k == 0 || points.len() < k {
        return Err(IngestError::InvalidParameter(format!(
            "k-means needs 1 <= k ({k}) <= #points ({})",
            points.len()
        )));
    }
    let dim = points[0].len();

    // k-means++ seeding
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..points.len())].clone());
    while centers.len() < k {
        let d2: Vec<f64> = points.iter().map(|p| nearest_center(p, &centers).1).collect();
        let total: f64 = d2.iter().sum();
        let chosen = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            pick
        } else {
            rng.gen_range(0..points.len())
        };
        centers.push(points[chosen].clone());
    }

    let mut assignment = vec![0usize; points.len()];
    let mut prev_inertia = f64::INFINITY;
    for _iter in 0..300 {
        let mut inertia = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest_center(p, &centers);
            assignment[i] = c;
            inertia += d;
        }
        // Lloyd steps never increase inertia; reseeding below may, so the
        // check happens before any reseed is applied.
        debug_assert!(inertia <= prev_inertia + 1e-9 * prev_inertia.max(1.0) || prev_inertia.is_infinite());
        prev_inertia = inertia;

        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; dim]; k];
        for (i, p) in points.iter().enumerate() {
            counts[assignment[i]] += 1;
            for (s, v) in sums[assignment[i]].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut reseeded = false;
        for c in 0..k {
            if counts[c] == 0 {
                // farthest point from its assigned center becomes the seed
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        let da: f64 = points[a]
                            .iter()
                            .zip(&centers[assignment[a]])
                            .map(|(x, y)| (x - y) * (x - y))
                            .sum();
                        let db: f64 = points[b]
                            .iter()
                            .zip(&centers[assignment[b]])
                            .map(|(x, y)| (x - y) * (x - y))
                            .sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                counts[assignment[far]] -= 1;
                for (s, v) in sums[assignment[far]].iter_mut().zip(&points[far]) {
                    *s -= v;
                }
                assignment[far] = c;
                counts[c] = 1;
                sums[c] = points[far].clone();
                reseeded = true;
            }
        }
        let mut movement = 0.0f64;
        for c in 0..k {
            let new_center: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            movement = movement.max(l2_distance(&new_center, &centers[c]));
            centers[c] = new_center;
        }
        if reseeded {
            prev_inertia = f64::INFINITY;
        }
        if movement < 1e-8 {
            break;
        }
    }
    let mut inertia = 0.0;
    for (i, p) in points.iter().enumerate() {
        let (c, d) = nearest_center(p, &centers);
        assignment[i] = c;
        inertia += d;
    }
    Ok(KMeansResult { centers, assignment, inertia })
}

// ---------------------------------------------------------------------------
// Embedding bundle
// ---------------------------------------------------------------------------

/// The file handed from the ingest pipeline to the ratings-mode environment:
/// normalized item features, one preference vector per user (that user's
/// k-means center), and the cluster map.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBundle {
    pub dim: usize,
    pub num_clusters: usize,
    pub item_features: Vec<Vec<f64>>,
    pub user_thetas: Vec<Vec<f64>>,
    pub cluster_of: Vec<usize>,
    /// Minimum pairwise distance between cluster centers (reported, not
    /// enforced; +inf for a single cluster).
    pub min_center_distance: f64,
    /// Whether any center had to be scaled down to unit norm.
    pub centers_scaled: bool,
}

impl EmbeddingBundle {
    pub fn num_users(&self) -> usize {
        self.cluster_of.len()
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.item_features.is_empty() {
            return Err(IngestError::Validation("bundle has no items".into()));
        }
        if self.user_thetas.len() != self.cluster_of.len() {
            return Err(IngestError::Validation("user_thetas/cluster_of length mismatch".into()));
        }
        if self.user_thetas.is_empty() {
            return Err(IngestError::Validation("bundle has no users".into()));
        }
        for (i, x) in self.item_features.iter().enumerate() {
            if x.len() != self.dim {
                return Err(IngestError::Validation(format!("item {i} has wrong dimension")));
            }
            if (l2_norm(x) - 1.0).abs() > 1e-9 {
                return Err(IngestError::Validation(format!("item {i} is not unit norm")));
            }
        }
        let mut seen = vec![false; self.num_clusters];
        for (u, &c) in self.cluster_of.iter().enumerate() {
            if c >= self.num_clusters {
                return Err(IngestError::Validation(format!("user {u} has cluster {c} out of range")));
            }
            seen[c] = true;
            if self.user_thetas[u].len() != self.dim {
                return Err(IngestError::Validation(format!("user {u} has wrong dimension")));
            }
            if l2_norm(&self.user_thetas[u]) > 1.0 + 1e-9 {
                return Err(IngestError::Validation(format!("user {u} preference exceeds unit norm")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(IngestError::Validation("some cluster has no users".into()));
        }
        Ok(())
    }
}

fn write_f64s(out: &mut impl Write, vals: &[f64]) -> std::io::Result<()> {
    for v in vals {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_bundle(bundle: &EmbeddingBundle, path: impl AsRef<Path>) -> Result<(), IngestError> {
    bundle.validate()?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(BUNDLE_MAGIC)?;
    for v in [
        bundle.dim as u64,
        bundle.num_clusters as u64,
        bundle.item_features.len() as u64,
        bundle.num_users() as u64,
    ] {
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&bundle.min_center_distance.to_le_bytes())?;
    out.write_all(&[bundle.centers_scaled as u8])?;
    for x in &bundle.item_features {
        write_f64s(&mut out, x)?;
    }
    for t in &bundle.user_thetas {
        write_f64s(&mut out, t)?;
    }
    for &c in &bundle.cluster_of {
        out.write_all(&(c as u64).to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

struct ByteReader<R: Read> {
    inner: R,
}

impl<R: Read> ByteReader<R> {
    fn exactly(&mut self, n: usize) -> Result<Vec<u8>, IngestError> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| IngestError::Corrupt("unexpected end of file".into()))?;
        Ok(buf)
    }

    fn u64(&mut self) -> Result<u64, IngestError> {
        Ok(u64::from_le_bytes(self.exactly(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, IngestError> {
        Ok(f64::from_le_bytes(self.exactly(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, IngestError> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn read_bundle(path: impl AsRef<Path>) -> Result<EmbeddingBundle, IngestError> {
    let mut r = ByteReader { inner: std::io::BufReader::new(std::fs::File::open(path)?) };
    let magic = r.exactly(BUNDLE_MAGIC.len())?;
    if magic != BUNDLE_MAGIC {
        return Err(IngestError::BadMagic { found: magic, expected: BUNDLE_MAGIC.to_vec() });
    }
    let dim = r.u64()? as usize;
    let num_clusters = r.u64()? as usize;
    let num_items = r.u64()? as usize;
    let num_users = r.u64()? as usize;
    if dim == 0 || dim > 1_000_000 || num_items > 100_000_000 || num_users > 100_000_000 {
        return Err(IngestError::Corrupt("implausible header sizes".into()));
    }
    let min_center_distance = r.f64()?;
    let centers_scaled = match r.exactly(1)?[0] {
        0 => false,
        1 => true,
        other => return Err(IngestError::Corrupt(format!("bad flag byte {other}"))),
    };
    let item_features = (0..num_items).map(|_| r.f64s(dim)).collect::<Result<Vec<_>, _>>()?;
    let user_thetas = (0..num_users).map(|_| r.f64s(dim)).collect::<Result<Vec<_>, _>>()?;
    let cluster_of = (0..num_users)
        .map(|_| r.u64().map(|v| v as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let bundle = EmbeddingBundle {
        dim,
        num_clusters,
        item_features,
        user_thetas,
        cluster_of,
        min_center_distance,
        centers_scaled,
    };
    bundle.validate()?;
    Ok(bundle)
}

// ---------------------------------------------------------------------------
// End-to-end pipeline
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct PipelineOutput {
    pub bundle: EmbeddingBundle,
    pub singular_values: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Full preprocessing pipeline: filter, embed, cluster, bundle.
pub fn run_pipeline(
    ratings_path: impl AsRef<Path>,
    dim: usize,
    num_clusters: usize,
    n_items: usize,
    n_users: usize,
    seed: u64,
) -> Result<PipelineOutput, IngestError> {
    let table = load_ratings(ratings_path)?;
    let filtered = top_filter(&table, n_items, n_users)?;
    let embedding = svd_embed(&filtered.table, dim)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let km = kmeans(&embedding.user_vectors, num_clusters, &mut rng)?;

    let mut centers = km.centers.clone();
    let mut centers_scaled = false;
    for c in &mut centers {
        let n = l2_norm(c);
        if n > 1.0 {
            for e in c.iter_mut() {
                *e /= n;
            }
            centers_scaled = true;
        }
    }
    let mut min_center_distance = f64::INFINITY;
    for i in 0..centers.len() {
        for j in (i + 1)..centers.len() {
            min_center_distance = min_center_distance.min(l2_distance(&centers[i], &centers[j]));
        }
    }
    let user_thetas: Vec<Vec<f64>> =
        km.assignment.iter().map(|&c| centers[c].clone()).collect();
    let bundle = EmbeddingBundle {
        dim,
        num_clusters,
        item_features: embedding.item_vectors.clone(),
        user_thetas,
        cluster_of: km.assignment.clone(),
        min_center_distance,
        centers_scaled,
    };
    bundle.validate()?;
    Ok(PipelineOutput {
        bundle,
        singular_values: embedding.singular_values,
        warnings: filtered.warnings,
    })
}
