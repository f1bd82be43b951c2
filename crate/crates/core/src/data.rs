//! Synthetic datasets, feature standardization, and PCA.
//!
//! Instance labels live here but are hidden from the training path: only bag
//! construction and test evaluation ever read them.

use crate::error::{Error, Result};
use crate::rng::{self, rng_from, standard_normal};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// A feature matrix with per-instance labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    /// `N x D` feature matrix.
    pub features: Tensor,
    /// Class ids in `0..n_classes`, one per row.
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Tensor, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if n_classes == 0 {
            return Err(Error::InvalidArgument("need at least one class".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// CSV with header `f0,...,f{D-1},label`, one row per instance.
    pub fn to_csv(&self) -> String {
        let d = self.dim();
        let mut out = String::new();
        for j in 0..d {
            out.push_str(&format!("f{j},"));
        }
        out.push_str("label\n");
        for (row, &label) in self.features.iter_rows().zip(&self.labels) {
            for v in row {
                out.push_str(&format!("{v},"));
            }
            out.push_str(&format!("{label}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::CsvParse("empty file".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.last() != Some(&"label") || cols.len() < 2 {
            return Err(Error::CsvParse(
                "expected header `f0,...,f{D-1},label`".into(),
            ));
        }
        let d = cols.len() - 1;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != d + 1 {
                return Err(Error::CsvParse(format!(
                    "row {} has {} fields, expected {}",
                    i + 1,
                    fields.len(),
                    d + 1
                )));
            }
            let mut row = Vec::with_capacity(d);
            for f in &fields[..d] {
                row.push(
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::CsvParse(format!("row {}: {e}", i + 1)))?,
                );
            }
            rows.push(row);
            labels.push(
                fields[d]
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| Error::CsvParse(format!("row {} label: {e}", i + 1)))?,
            );
        }
        let n_classes = labels.iter().copied().max().map_or(1, |m| m + 1);
        Self::new(Tensor::from_rows(&rows)?, labels, n_classes)
    }
}

/// Two interleaved half-circles of unit radius; the second moon is the first
/// reflected vertically and offset by `(1, -0.5)`. Angles are sampled
/// uniformly on `[0, pi]` and isotropic Gaussian noise is added.
pub fn two_moons(n_per_class: usize, noise_std: f64, seed: u64) -> Result<LabeledDataset> {
    if n_per_class == 0 {
        return Err(Error::InvalidArgument("n_per_class must be >= 1".into()));
    }
    if noise_std < 0.0 {
        return Err(Error::InvalidArgument("noise_std must be >= 0".into()));
    }
    let mut rng = rng_from(&[seed, rng::tag::DATASET]);
    let mut rows = Vec::with_capacity(2 * n_per_class);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for class in 0..2usize {
        for _ in 0..n_per_class {
            let t = rng.random::<f64>() * std::f64::consts::PI;
            let (mut x, mut y) = if class == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 + t.cos(), -0.5 - t.sin())
            };
            x += noise_std * standard_normal(&mut rng);
            y += noise_std * standard_normal(&mut rng);
            rows.push(vec![x, y]);
            labels.push(class);
        }
    }
    LabeledDataset::new(Tensor::from_rows(&rows)?, labels, 2)
}

/// Labeled isotropic Gaussian clusters, one class per center.
pub fn gaussian_blobs(
    centers: &[Vec<f64>],
    n_per_center: usize,
    std: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if centers.len() < 2 {
        return Err(Error::InvalidArgument("need at least two centers".into()));
    }
    if std < 0.0 {
        return Err(Error::InvalidArgument("std must be >= 0".into()));
    }
    if n_per_center == 0 {
        return Err(Error::InvalidArgument("n_per_center must be >= 1".into()));
    }
    let d = centers[0].len();
    if centers.iter().any(|c| c.len() != d) {
        return Err(Error::Shape("centers have mixed dimensionality".into()));
    }
    let mut rng = rng_from(&[seed, rng::tag::DATASET]);
    let mut rows = Vec::with_capacity(centers.len() * n_per_center);
    let mut labels = Vec::with_capacity(centers.len() * n_per_center);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..n_per_center {
            let row: Vec<f64> = center
                .iter()
                .map(|&c| c + std * standard_normal(&mut rng))
                .collect();
            rows.push(row);
            labels.push(class);
        }
    }
    LabeledDataset::new(Tensor::from_rows(&rows)?, labels, centers.len())
}

/// Per-feature zero mean and unit variance; constant columns map to zero.
pub fn standardize(x: &Tensor) -> Result<Tensor> {
    let (n, d) = (x.rows(), x.cols());
    if n < 2 {
        return Err(Error::InvalidArgument(
            "standardize needs at least two rows".into(),
        ));
    }
    let means = x.column_means();
    let mut vars = vec![0.0; d];
    for row in x.iter_rows() {
        for ((v, &xv), &m) in vars.iter_mut().zip(row).zip(&means) {
            let c = xv - m;
            *v += c * c;
        }
    }
    for v in &mut vars {
        *v /= n as f64;
    }
    let mut out = Tensor::zeros(n, d);
    for r in 0..n {
        for c in 0..d {
            let v = if vars[c] > 1e-24 {
                (x.at(r, c) - means[c]) / vars[c].sqrt()
            } else {
                0.0
            };
            out.set(r, c, v);
        }
    }
    Ok(out)
}

/// A fitted principal-component basis.
#[derive(Debug, Clone)]
pub struct PcaModel {
    /// Column means removed before projecting.
    pub mean: Vec<f64>,
    /// `D x d` matrix whose columns are components, ordered by descending
    /// eigenvalue; the largest-magnitude entry of each column is positive.
    pub components: Tensor,
    /// Eigenvalues of the covariance matrix for the kept components.
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn fit(x: &Tensor, d: usize) -> Result<Self> {
        let (n, dim) = (x.rows(), x.cols());
        if d == 0 || d > dim.min(n) {
            return Err(Error::InvalidArgument(format!(
                "target dimension {d} out of range 1..={}",
                dim.min(n)
            )));
        }
        let mean = x.column_means();
        // Covariance of centered data with the n-1 denominator.
        let mut cov = vec![vec![0.0; dim]; dim];
        for row in x.iter_rows() {
            let c: Vec<f64> = row.iter().zip(&mean).map(|(v, m)| v - m).collect();
            for i in 0..dim {
                for j in i..dim {
                    cov[i][j] += c[i] * c[j];
                }
            }
        }
        let denom = (n - 1).max(1) as f64;
        for i in 0..dim {
            for j in i..dim {
                cov[i][j] /= denom;
                cov[j][i] = cov[i][j];
            }
        }
        let (eigenvalues, eigenvectors) = jacobi_eigen(&cov);
        let mut components = Tensor::zeros(dim, d);
        for k in 0..d {
            let col: Vec<f64> = (0..dim).map(|i| eigenvectors[i][k]).collect();
            // Sign convention: the largest-magnitude entry is positive.
            let lead = col
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            let flip = if col[lead] < 0.0 { -1.0 } else { 1.0 };
            for i in 0..dim {
                components.set(i, k, flip * col[i]);
            }
        }
        Ok(Self {
            mean,
            components,
            explained_variance: eigenvalues[..d].to_vec(),
        })
    }

    pub fn project(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.mean.len() {
            return Err(Error::Shape(format!(
                "data has {} columns, PCA was fitted on {}",
                x.cols(),
                self.mean.len()
            )));
        }
        let centered_rows: Vec<Vec<f64>> = x
            .iter_rows()
            .map(|row| row.iter().zip(&self.mean).map(|(v, m)| v - m).collect())
            .collect();
        Tensor::from_rows(&centered_rows)?.matmul(&self.components)
    }
}

/// Projection onto the top-`d` principal components of `x`.
pub fn pca_project(x: &Tensor, d: usize) -> Result<Tensor> {
    let model = PcaModel::fit(x, d)?;
    model.project(x)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues in descending order with matching eigenvector columns.
fn jacobi_eigen(matrix: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i][j] * a[i][j];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].partial_cmp(&a[i][i]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[i][i]).collect();
    let eigenvectors: Vec<Vec<f64>> = (0..n)
        .map(|row| order.iter().map(|&col| v[row][col]).collect())
        .collect();
    (eigenvalues, eigenvectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn noiseless_moons_lie_on_their_circles() {
        let ds = two_moons(50, 0.0, 3).unwrap();
        for (row, &label) in ds.features.iter_rows().zip(&ds.labels) {
            if label == 0 {
                assert_abs_diff_eq!(row[0] * row[0] + row[1] * row[1], 1.0, epsilon = 1e-9);
            } else {
                let dx = row[0] - 1.0;
                let dy = row[1] + 0.5;
                assert_abs_diff_eq!(dx * dx + dy * dy, 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn moons_have_balanced_labels_and_determinism() {
        let ds = two_moons(50, 0.1, 9).unwrap();
        assert_eq!(ds.len(), 100);
        assert_eq!(ds.labels.iter().filter(|&&l| l == 0).count(), 50);
        assert_eq!(ds.labels.iter().filter(|&&l| l == 1).count(), 50);
        assert_eq!(ds, two_moons(50, 0.1, 9).unwrap());
        assert_ne!(ds, two_moons(50, 0.1, 10).unwrap());
    }

    #[test]
    fn blobs_with_zero_std_sit_on_centers() {
        let centers = vec![vec![1.0, 2.0], vec![-3.0, 0.5], vec![0.0, 9.0]];
        let ds = gaussian_blobs(&centers, 10, 0.0, 4).unwrap();
        assert_eq!(ds.len(), 30);
        assert_eq!(ds.n_classes, 3);
        for (row, &label) in ds.features.iter_rows().zip(&ds.labels) {
            assert_eq!(row, centers[label].as_slice());
        }
    }

    #[test]
    fn blob_cluster_means_land_near_centers() {
        // Standard-error bound: |mean - center| < 4 * std / sqrt(n) per axis,
        // checked over several seeds.
        let centers = vec![vec![0.0, 0.0], vec![5.0, -1.0]];
        let n = 400;
        let std = 0.7;
        for seed in 0..5 {
            let ds = gaussian_blobs(&centers, n, std, seed).unwrap();
            for (class, center) in centers.iter().enumerate() {
                let mut mean = vec![0.0; 2];
                for (row, &label) in ds.features.iter_rows().zip(&ds.labels) {
                    if label == class {
                        mean[0] += row[0];
                        mean[1] += row[1];
                    }
                }
                for (m, &c) in mean.iter_mut().zip(center) {
                    *m /= n as f64;
                    assert!(
                        (*m - c).abs() < 4.0 * std / (n as f64).sqrt(),
                        "seed {seed}: cluster mean {m} too far from {c}"
                    );
                }
            }
        }
    }

    #[test]
    fn standardize_centers_and_scales() {
        let x = Tensor::from_rows(&[vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]]).unwrap();
        let z = standardize(&x).unwrap();
        let n = z.rows() as f64;
        let mean0: f64 = (0..3).map(|r| z.at(r, 0)).sum::<f64>() / n;
        let var0: f64 = (0..3).map(|r| z.at(r, 0).powi(2)).sum::<f64>() / n;
        assert_abs_diff_eq!(mean0, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(var0, 1.0, epsilon = 1e-9);
        // Constant column maps to zeros rather than NaN.
        for r in 0..3 {
            assert_eq!(z.at(r, 1), 0.0);
        }
    }

    #[test]
    fn standardize_is_idempotent() {
        let ds = two_moons(30, 0.2, 5).unwrap();
        let once = standardize(&ds.features).unwrap();
        let twice = standardize(&once).unwrap();
        for (a, b) in once.values().iter().zip(twice.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn pca_recovers_rank_one_data() {
        // Points on a line in R^3: one component reconstructs them exactly.
        let dir = [1.0, -2.0, 0.5];
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let t = i as f64 * 0.3 - 3.0;
                dir.iter().map(|&d| t * d + 1.0).collect()
            })
            .collect();
        let x = Tensor::from_rows(&rows).unwrap();
        let model = PcaModel::fit(&x, 1).unwrap();
        let proj = model.project(&x).unwrap();
        for (r, row) in rows.iter().enumerate() {
            let recon: Vec<f64> = (0..3)
                .map(|i| model.mean[i] + proj.at(r, 0) * model.components.at(i, 0))
                .collect();
            for (a, b) in recon.iter().zip(row) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn full_rank_projection_preserves_distances() {
        let ds = two_moons(40, 0.2, 8).unwrap();
        let proj = pca_project(&ds.features, 2).unwrap();
        for i in 0..10 {
            for j in (i + 1)..10 {
                let before = crate::tensor::squared_distance(ds.features.row(i), ds.features.row(j));
                let after = crate::tensor::squared_distance(proj.row(i), proj.row(j));
                assert_abs_diff_eq!(before, after, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn projected_columns_are_uncorrelated() {
        let ds = gaussian_blobs(&[vec![0.0, 0.0, 0.0], vec![3.0, 1.0, -2.0]], 50, 1.0, 12).unwrap();
        let proj = pca_project(&ds.features, 3).unwrap();
        let means = proj.column_means();
        let n = proj.rows() as f64;
        for a in 0..3 {
            for b in (a + 1)..3 {
                let cov: f64 = (0..proj.rows())
                    .map(|r| (proj.at(r, a) - means[a]) * (proj.at(r, b) - means[b]))
                    .sum::<f64>()
                    / (n - 1.0);
                assert!(cov.abs() < 1e-8, "columns {a},{b} covary: {cov}");
            }
        }
    }

    #[test]
    fn pca_rejects_out_of_range_dim() {
        let x = Tensor::zeros(5, 3);
        assert!(PcaModel::fit(&x, 0).is_err());
        assert!(PcaModel::fit(&x, 4).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let ds = two_moons(10, 0.1, 2).unwrap();
        let text = ds.to_csv();
        assert!(text.starts_with("f0,f1,label\n"));
        let back = LabeledDataset::from_csv(&text).unwrap();
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.n_classes, 2);
        for (a, b) in back.features.values().iter().zip(ds.features.values()) {
            assert_eq!(a, b);
        }
    }
}
