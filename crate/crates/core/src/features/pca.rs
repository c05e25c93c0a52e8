//! PCA fitting (covariance eigendecomposition) and projection.

use crate::error::{Error, Result};
use crate::linalg;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Linear projection onto the leading principal directions.
#[derive(Debug, Clone)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// D x d, orthonormal columns ordered by decreasing eigenvalue.
    pub basis: Array2<f64>,
    /// All D eigenvalues of the covariance, descending.
    pub eigenvalues: Array1<f64>,
    pub out_dim: usize,
}

impl PcaModel {
    pub fn in_dim(&self) -> usize {
        self.mean.len()
    }

    /// Fraction of total variance captured by the retained directions.
    pub fn explained_variance_ratio(&self) -> f64 {
        let total: f64 = self.eigenvalues.sum();
        if total <= 0.0 {
            return 1.0;
        }
        self.eigenvalues.iter().take(self.out_dim).sum::<f64>() / total
    }
}

/// Fit a PCA model on row-major samples. Degenerate inputs (zero variance)
/// produce a deterministic canonical basis rather than an error.
pub fn fit_pca(data: ArrayView2<f32>, out_dim: usize) -> Result<PcaModel> {
    let (n, d) = data.dim();
    if out_dim == 0 || out_dim > d {
        return Err(Error::InvalidInput(format!(
            "pca output dim {out_dim} not in 1..={d}"
        )));
    }
    if n <= out_dim {
        return Err(Error::InvalidInput(format!(
            "pca needs more than {out_dim} samples, got {n}"
        )));
    }
    let mut mean = Array1::<f64>::zeros(d);
    for row in data.rows() {
        for (m, &v) in mean.iter_mut().zip(row.iter()) {
            *m += v as f64;
        }
    }
    mean /= n as f64;

    // covariance accumulated in chunks to bound memory
    let mut cov = Array2::<f64>::zeros((d, d));
    let chunk = 8192usize.max(1);
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let mut c = Array2::<f64>::zeros((end - start, d));
        for (ci, i) in (start..end).enumerate() {
            for j in 0..d {
                c[[ci, j]] = data[[i, j]] as f64 - mean[j];
            }
        }
        cov = cov + c.t().dot(&c);
        start = end;
    }
    cov /= n as f64;

    let total_var: f64 = (0..d).map(|i| cov[[i, i]]).sum();
    if total_var <= 1e-30 {
        // all-identical input: deterministic canonical basis
        let mut basis = Array2::<f64>::zeros((d, out_dim));
        for j in 0..out_dim {
            basis[[j, j]] = 1.0;
        }
        return Ok(PcaModel {
            mean,
            basis,
            eigenvalues: Array1::zeros(d),
            out_dim,
        });
    }

    let (mut eigenvalues, mut vectors) = linalg::symmetric_eigen_desc(&cov)?;
    for ev in eigenvalues.iter_mut() {
        if *ev < 0.0 {
            *ev = 0.0;
        }
    }
    linalg::fix_column_signs(&mut vectors);
    let basis = vectors.slice(ndarray::s![.., ..out_dim]).to_owned();
    Ok(PcaModel {
        mean,
        basis,
        eigenvalues,
        out_dim,
    })
}

/// Project one vector: `basis^T (v - mean)`.
pub fn apply_pca(v: ArrayView1<f64>, model: &PcaModel) -> Result<Array1<f64>> {
    if v.len() != model.in_dim() {
        return Err(Error::Dimension {
            what: "apply_pca",
            expected: model.in_dim(),
            got: v.len(),
        });
    }
    let centered = &v - &model.mean;
    Ok(model.basis.t().dot(&centered))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_data(n: usize, d: usize, seed: u64) -> Array2<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.random::<f32>() * 2.0 - 1.0)
    }

    /// Independent oracle: power iteration with deflation on an explicitly
    /// computed covariance matrix.
    fn power_iteration_eigenvalues(data: &Array2<f32>, k: usize) -> Vec<f64> {
        let (n, d) = data.dim();
        let mut mean = vec![0.0f64; d];
        for row in data.rows() {
            for (m, &v) in mean.iter_mut().zip(row.iter()) {
                *m += v as f64;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mut cov = vec![0.0f64; d * d];
        for row in data.rows() {
            let c: Vec<f64> = row.iter().zip(&mean).map(|(&v, m)| v as f64 - m).collect();
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += c[i] * c[j];
                }
            }
        }
        for v in cov.iter_mut() {
            *v /= n as f64;
        }
        let mut eigs = Vec::new();
        let mut work = cov.clone();
        for t in 0..k {
            let mut v: Vec<f64> = (0..d).map(|i| ((i + t + 1) as f64).sin()).collect();
            for _ in 0..3000 {
                let mut nv = vec![0.0f64; d];
                for i in 0..d {
                    for j in 0..d {
                        nv[i] += work[i * d + j] * v[j];
                    }
                }
                let norm = nv.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 {
                    break;
                }
                for x in nv.iter_mut() {
                    *x /= norm;
                }
                v = nv;
            }
            let mut av = vec![0.0f64; d];
            for i in 0..d {
                for j in 0..d {
                    av[i] += work[i * d + j] * v[j];
                }
            }
            let lambda = v.iter().zip(&av).map(|(a, b)| a * b).sum::<f64>();
            eigs.push(lambda);
            // deflate
            for i in 0..d {
                for j in 0..d {
                    work[i * d + j] -= lambda * v[i] * v[j];
                }
            }
        }
        eigs
    }

    #[test]
    fn planar_data_is_fully_explained_by_two_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 200;
        let mut data = Array2::<f32>::zeros((n, 5));
        for i in 0..n {
            let a = rng.random::<f32>() * 4.0 - 2.0;
            let b = rng.random::<f32>() * 4.0 - 2.0;
            // embed a 2-d plane in 5-d
            data[[i, 0]] = a + 0.5 * b;
            data[[i, 1]] = 2.0 * a - b;
            data[[i, 2]] = -a;
            data[[i, 3]] = b;
            data[[i, 4]] = a + b;
        }
        let model = fit_pca(data.view(), 2).unwrap();
        assert!((model.explained_variance_ratio() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn full_dimension_projection_is_an_isometry() {
        let data = random_data(100, 6, 2);
        let model = fit_pca(data.view(), 6).unwrap();
        let a = arr1(&[0.3, -0.2, 0.9, 0.0, 1.0, -0.4]);
        let b = arr1(&[-0.1, 0.7, 0.2, 0.5, -0.3, 0.8]);
        let pa = apply_pca(a.view(), &model).unwrap();
        let pb = apply_pca(b.view(), &model).unwrap();
        let dist = (&a - &b).mapv(|x| x * x).sum().sqrt();
        let pdist = (&pa - &pb).mapv(|x| x * x).sum().sqrt();
        assert!((dist - pdist).abs() < 1e-8);
        // basis orthonormality
        let g = model.basis.t().dot(&model.basis);
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn eigenvalues_match_power_iteration_oracle() {
        let data = random_data(400, 8, 3);
        let model = fit_pca(data.view(), 4).unwrap();
        let oracle = power_iteration_eigenvalues(&data, 4);
        for (got, want) in model.eigenvalues.iter().take(4).zip(&oracle) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn projection_examples() {
        let data = random_data(50, 4, 4);
        let model = fit_pca(data.view(), 3).unwrap();
        // v = mean -> zero
        let z = apply_pca(model.mean.view(), &model).unwrap();
        assert!(z.iter().all(|&x| x.abs() < 1e-12));
        // v = mean + basis column j -> e_j
        for j in 0..3 {
            let v = &model.mean + &model.basis.column(j);
            let p = apply_pca(v.view(), &model).unwrap();
            for i in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((p[i] - want).abs() < 1e-10);
            }
        }
        // random v matches explicit matrix-vector product oracle
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = Array1::from_shape_fn(4, |_| rng.random::<f64>());
        let p = apply_pca(v.view(), &model).unwrap();
        for i in 0..3 {
            let mut want = 0.0;
            for j in 0..4 {
                want += model.basis[[j, i]] * (v[j] - model.mean[j]);
            }
            assert!((p[i] - want).abs() < 1e-10);
        }
        // norm non-expansion
        let centered_norm = (&v - &model.mean).mapv(|x| x * x).sum().sqrt();
        let pnorm = p.mapv(|x| x * x).sum().sqrt();
        assert!(pnorm <= centered_norm + 1e-8);
    }

    #[test]
    fn degenerate_input_gets_deterministic_basis() {
        let data = Array2::<f32>::from_elem((20, 3), 0.7);
        let model = fit_pca(data.view(), 2).unwrap();
        assert_eq!(model.basis[[0, 0]], 1.0);
        assert_eq!(model.basis[[1, 1]], 1.0);
        assert_eq!(model.basis[[2, 0]], 0.0);
    }

    #[test]
    fn dimension_errors() {
        let data = random_data(10, 4, 6);
        assert!(fit_pca(data.view(), 5).is_err());
        let model = fit_pca(data.view(), 2).unwrap();
        assert!(apply_pca(arr1(&[1.0, 2.0]).view(), &model).is_err());
    }
}
