//! Placing class centers so that their pairwise distances match a target
//! matrix: classical (Torgerson) scaling followed by SMACOF refinement.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::DistanceMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StressMode {
    /// Match the target distances themselves.
    #[default]
    Metric,
    /// Match an isotonic transform of the target distances, rescaled to the
    /// target's sum of squares.
    Nonmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdsOptions {
    pub mode: StressMode,
    pub max_iter: usize,
    /// Stop when the relative stress change drops below this.
    pub tolerance: f64,
}

impl Default for MdsOptions {
    fn default() -> Self {
        Self { mode: StressMode::Metric, max_iter: 1000, tolerance: 1e-9 }
    }
}

/// Class centers in `n - 1` dimensions.
#[derive(Debug, Clone)]
pub struct CenterConfiguration {
    pub points: Vec<DVector<f64>>,
    /// `Σ (d_ij - δ_ij)² / Σ δ_ij²` against the target distances.
    pub stress: f64,
    pub iterations: usize,
}

impl CenterConfiguration {
    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.len())
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        (&self.points[i] - &self.points[j]).norm()
    }
}

fn validate(sq: &DMatrix<f64>) -> Result<()> {
    let n = sq.nrows();
    if n != sq.ncols() {
        return Err(Error::InvalidDistanceMatrix("not square".into()));
    }
    if n < 2 {
        return Err(Error::InvalidDistanceMatrix("need at least two points".into()));
    }
    let scale = sq.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    for i in 0..n {
        if sq[(i, i)].abs() > 1e-12 * scale {
            return Err(Error::InvalidDistanceMatrix("nonzero diagonal".into()));
        }
        for j in 0..n {
            let v = sq[(i, j)];
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidDistanceMatrix(format!("entry ({i},{j}) = {v}")));
            }
            if (v - sq[(j, i)]).abs() > 1e-9 * scale {
                return Err(Error::InvalidDistanceMatrix("not symmetric".into()));
            }
        }
    }
    Ok(())
}

/// Torgerson scaling of squared distances into `dim` coordinates; negative
/// eigenvalues of the doubly-centered matrix are zeroed.
pub fn classical_mds(squared: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    let n = squared.nrows();
    let row_means: Vec<f64> = (0..n).map(|i| squared.row(i).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (squared[(i, j)] - row_means[i] - row_means[j] + grand));
    let eig = b.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&c)));
    let mut x = DMatrix::zeros(n, dim);
    for (col, &idx) in order.iter().take(dim).enumerate() {
        let scale = eig.eigenvalues[idx].max(0.0).sqrt();
        // fix the eigenvector sign so the embedding is reproducible
        let v = eig.eigenvectors.column(idx);
        let pivot = v.iter().cloned().fold(0.0f64, |a, e| if e.abs() > a.abs() { e } else { a });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            x[(i, col)] = sign * v[i] * scale;
        }
    }
    x
}

fn pairwise(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = (x.row(i) - x.row(j)).norm();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

fn raw_stress(d: &DMatrix<f64>, target: &DMatrix<f64>) -> f64 {
    let n = d.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let e = d[(i, j)] - target[(i, j)];
            s += e * e;
        }
    }
    s
}

fn upper_sum_sq(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| m[(i, j)] * m[(i, j)]).sum()
}

/// Guttman transform with unit weights.
fn guttman(x: &DMatrix<f64>, d: &DMatrix<f64>, target: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut b = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j && d[(i, j)] > 0.0 {
                b[(i, j)] = -target[(i, j)] / d[(i, j)];
            }
        }
    }
    for i in 0..n {
        let s: f64 = (0..n).filter(|&j| j != i).map(|j| b[(i, j)]).sum();
        b[(i, i)] = -s;
    }
    b * x / n as f64
}

/// Pool-adjacent-violators fit of `values` under the order of `keys`.
fn isotonic(keys: &[f64], values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(values[a].total_cmp(&values[b])));
    // blocks of (sum, count)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(order.len());
    for &i in &order {
        blocks.push((values[i], 1));
        while blocks.len() > 1 {
            let (s1, c1) = blocks[blocks.len() - 2];
            let (s2, c2) = blocks[blocks.len() - 1];
            if s1 / c1 as f64 <= s2 / c2 as f64 {
                break;
            }
            blocks.pop();
            *blocks.last_mut().unwrap() = (s1 + s2, c1 + c2);
        }
    }
    let mut fitted = vec![0.0; keys.len()];
    let mut pos = 0;
    for (s, c) in blocks {
        for _ in 0..c {
            fitted[order[pos]] = s / c as f64;
            pos += 1;
        }
    }
    fitted
}

fn disparities(d: &DMatrix<f64>, target: &DMatrix<f64>, target_ss: f64) -> DMatrix<f64> {
    let n = d.nrows();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let keys: Vec<f64> = pairs.iter().map(|&(i, j)| target[(i, j)]).collect();
    let vals: Vec<f64> = pairs.iter().map(|&(i, j)| d[(i, j)]).collect();
    let fit = isotonic(&keys, &vals);
    let ss: f64 = fit.iter().map(|v| v * v).sum();
    let scale = if ss > 0.0 { (target_ss / ss).sqrt() } else { 0.0 };
    let mut out = DMatrix::zeros(n, n);
    for (&(i, j), v) in pairs.iter().zip(fit) {
        out[(i, j)] = v * scale;
        out[(j, i)] = v * scale;
    }
    out
}

/// Embeds `n` centers in `n - 1` dimensions reproducing the (square roots
/// of the) squared distances in `target`.
pub fn embed_centers(target: &DistanceMatrix, opts: &MdsOptions) -> Result<CenterConfiguration> {
    embed_squared(&target.squared, opts)
}

pub fn embed_squared(squared: &DMatrix<f64>, opts: &MdsOptions) -> Result<CenterConfiguration> {
    validate(squared)?;
    let n = squared.nrows();
    let delta = squared.map(|v| v.max(0.0).sqrt());
    let target_ss = upper_sum_sq(&delta);
    let mut x = classical_mds(squared, n - 1);
    let to_points = |x: &DMatrix<f64>| (0..n).map(|i| x.row(i).transpose()).collect::<Vec<_>>();

    if target_ss == 0.0 {
        return Ok(CenterConfiguration { points: to_points(&DMatrix::zeros(n, n - 1)), stress: 0.0, iterations: 0 });
    }

    let mut d = pairwise(&x);
    let mut disp = match opts.mode {
        StressMode::Metric => delta.clone(),
        StressMode::Nonmetric => disparities(&d, &delta, target_ss),
    };
    let mut stress = raw_stress(&d, &disp) / target_ss;
    let mut iterations = 0;
    while iterations < opts.max_iter && stress > 1e-20 {
        let next = guttman(&x, &d, &disp);
        let next_d = pairwise(&next);
        let next_disp = match opts.mode {
            StressMode::Metric => disp.clone(),
            StressMode::Nonmetric => disparities(&next_d, &delta, target_ss),
        };
        let next_stress = raw_stress(&next_d, &next_disp) / target_ss;
        iterations += 1;
        let improved = next_stress <= stress;
        let rel_change = (stress - next_stress).abs() / stress.max(1e-300);
        if improved {
            x = next;
            d = next_d;
            disp = next_disp;
            stress = next_stress;
        }
        if !improved || rel_change < opts.tolerance {
            break;
        }
    }

    Ok(CenterConfiguration { points: to_points(&x), stress: raw_stress(&d, &delta) / target_ss, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dm(rows: &[f64], n: usize) -> DistanceMatrix {
        DistanceMatrix { squared: DMatrix::from_row_slice(n, n, rows), corrected: true, floor_applied: false }
    }

    #[test]
    fn two_points() {
        let c = embed_centers(&dm(&[0.0, 4.0, 4.0, 0.0], 2), &MdsOptions::default()).unwrap();
        assert_eq!(c.dim(), 1);
        assert!((c.distance(0, 1) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn equilateral_triangle_both_modes() {
        let t = dm(&[0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0], 3);
        for mode in [StressMode::Metric, StressMode::Nonmetric] {
            let c = embed_centers(&t, &MdsOptions { mode, ..Default::default() }).unwrap();
            for (i, j) in [(0, 1), (0, 2), (1, 2)] {
                assert!((c.distance(i, j) - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn non_euclidean_target_is_refined() {
        // violates the triangle inequality; SMACOF must not do worse than Torgerson
        let t = dm(&[0.0, 1.0, 16.0, 1.0, 0.0, 1.0, 16.0, 1.0, 0.0], 3);
        let c = embed_centers(&t, &MdsOptions::default()).unwrap();
        let init = classical_mds(&t.squared, 2);
        let init_d = pairwise(&init);
        let delta = t.distances();
        assert!(c.stress <= raw_stress(&init_d, &delta) / upper_sum_sq(&delta) + 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let opts = MdsOptions::default();
        assert!(embed_centers(&dm(&[0.0, 1.0, 2.0, 0.0], 2), &opts).is_err());
        assert!(embed_centers(&dm(&[0.0, -1.0, -1.0, 0.0], 2), &opts).is_err());
        assert!(embed_centers(&dm(&[1.0, 1.0, 1.0, 0.0], 2), &opts).is_err());
    }

    #[test]
    fn all_zero_target_collapses() {
        let c = embed_centers(&dm(&[0.0; 9], 3), &MdsOptions::default()).unwrap();
        assert_eq!(c.stress, 0.0);
        assert_eq!(c.distance(0, 2), 0.0);
    }

    #[test]
    fn isotonic_pools_violators() {
        let fit = isotonic(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(fit, vec![1.0, 2.5, 2.5, 4.0]);
    }
}
