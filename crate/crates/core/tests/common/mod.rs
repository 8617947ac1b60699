//! Oracles and fixtures shared by the integration tests and the acceptance
//! harness.
#![allow(dead_code)]

use nalgebra::DMatrix;

pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_f64() * n as f64) as usize).min(n - 1)
    }

    pub fn matrix(&mut self, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| self.next_f64() * 2.0 - 1.0)
    }

    /// Integers in `lo..=hi`; keeps every dot product exact.
    pub fn int_matrix(&mut self, rows: usize, cols: usize, lo: i64, hi: i64) -> DMatrix<f64> {
        let span = (hi - lo + 1) as usize;
        DMatrix::from_fn(rows, cols, |_, _| (lo + self.below(span) as i64) as f64)
    }
}

fn centre(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = m.clone();
    for j in 0..c.ncols() {
        let mean = c.column(j).mean();
        c.column_mut(j).add_scalar_mut(-mean);
    }
    c
}

/// Training MSE of the best rank-`k` affine map from `x` to `y`: OLS on
/// centred data, then the fitted values truncated to their top `k`
/// singular directions.
pub fn rrr_optimum_mse(x: &DMatrix<f64>, y: &DMatrix<f64>, k: usize) -> f64 {
    let (xc, yc) = (centre(x), centre(y));
    let gram = xc.transpose() * &xc;
    let b = gram.lu().solve(&(xc.transpose() * &yc)).expect("full-rank design");
    let fitted = &xc * b;
    let svd = fitted.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut projector = DMatrix::zeros(y.ncols(), y.ncols());
    for &i in order.iter().take(k) {
        let v = v_t.row(i).transpose();
        projector += &v * v.transpose();
    }
    let truncated = fitted * projector;
    (yc - truncated).norm_squared() / (y.nrows() * y.ncols()) as f64
}

/// Top `n` by pairwise counting: `i` is in when fewer than `n` entries beat
/// it, where larger values beat smaller and ties go to the lower index.
pub fn brute_top_n(row: &[f64], n: usize) -> Vec<usize> {
    (0..row.len())
        .filter(|&i| {
            let better = (0..row.len())
                .filter(|&j| row[j] > row[i] || (row[j] == row[i] && j < i))
                .count();
            better < n
        })
        .collect()
}

/// (precision, recall, f1) at `n` against the nonzero entries of `gold`.
pub fn brute_prf(pred: &[f64], gold: &[f64], n: usize) -> (f64, f64, f64) {
    let top = brute_top_n(pred, n);
    let positives = gold.iter().filter(|&&g| g != 0.0).count();
    let hits = top.iter().filter(|&&j| gold[j] != 0.0).count();
    let p = hits as f64 / n as f64;
    let r = hits as f64 / positives as f64;
    let f = if hits == 0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

fn brute_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let below = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Spearman via counted ranks and the textbook Pearson formula; 0 for a
/// constant side.
pub fn brute_spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (brute_ranks(a), brute_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na * nb == 0.0 {
        -1.0
    } else {
        dot / (na * nb)
    }
}

fn brute_neighbours(query: &[f64], pool: &[Vec<f64>], exclude: usize, n: usize) -> Vec<usize> {
    let sims: Vec<f64> = pool.iter().map(|p| cosine(query, p)).collect();
    let mut masked = sims.clone();
    masked[exclude] = f64::NEG_INFINITY;
    let candidates: Vec<usize> = (0..pool.len()).filter(|&j| j != exclude).collect();
    candidates
        .iter()
        .copied()
        .filter(|&i| {
            let better = candidates
                .iter()
                .filter(|&&j| masked[j] > masked[i] || (masked[j] == masked[i] && j < i))
                .count();
            better < n
        })
        .collect()
}

/// Mean overlap between each predicted row's `n` nearest gold rows and the
/// gold row's own `n` nearest gold rows, self excluded on both sides.
pub fn brute_na(pred: &DMatrix<f64>, gold: &DMatrix<f64>, n: usize) -> f64 {
    let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> { m.row_iter().map(|r| r.iter().copied().collect()).collect() };
    let (p, g) = (rows(pred), rows(gold));
    let total: f64 = (0..g.len())
        .map(|i| {
            let want = brute_neighbours(&g[i], &g, i, n);
            let got = brute_neighbours(&p[i], &g, i, n);
            got.iter().filter(|j| want.contains(j)).count() as f64 / n as f64
        })
        .sum();
    total / g.len() as f64
}

/// Writes `norm.tsv` (sparse counts) and `emb.txt` (word2vec text) for
/// `concepts` concepts sharing a 3-dimensional latent factor.
pub fn write_synthetic(dir: &std::path::Path, concepts: usize, features: usize, dim: usize) {
    use std::fmt::Write as _;
    let mut rng = Lcg(7);
    let z = rng.matrix(concepts, 3);
    let a = rng.matrix(3, features);
    let b = rng.matrix(3, dim);
    let scores = &z * a;
    let mut norm = String::new();
    for i in 0..concepts {
        let best = (0..features).max_by(|&p, &q| scores[(i, p)].total_cmp(&scores[(i, q)])).unwrap();
        for j in 0..features {
            let v = (scores[(i, j)] * 12.0).round() - 4.0;
            if v > 0.0 || j == best {
                let _ = writeln!(norm, "concept{i}\tfeature{j}\t{}", v.max(1.0));
            }
        }
    }
    std::fs::write(dir.join("norm.tsv"), norm).unwrap();
    let x = &z * b;
    let mut emb = format!("{concepts} {dim}\n");
    for i in 0..concepts {
        let cells: Vec<String> = (0..dim).map(|d| format!("{:.6}", x[(i, d)] + 0.05 * (rng.next_f64() - 0.5))).collect();
        let _ = writeln!(emb, "concept{i} {}", cells.join(" "));
    }
    std::fs::write(dir.join("emb.txt"), emb).unwrap();
}
