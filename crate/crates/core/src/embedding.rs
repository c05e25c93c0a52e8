//! Regularized CCA between block visual features and overlap labels, the
//! projection matrix `U`, and its quadrant rearrangement `Û` used by the
//! fast extractor. The same machinery also backs the unsupervised (PCA)
//! embedding variant and the common subspace of the attributes layer.
//!
//! The generalized eigenproblem
//! `X^T Y (Y^T Y + eta I)^-1 Y^T X u = lambda (X^T X + eta I) u`
//! is solved by Cholesky-whitening both regularized Gram matrices, taking
//! the SVD of the whitened cross-covariance (via the eigendecomposition of
//! its Gram matrix) and mapping back.

use crate::error::{Error, Result};
use crate::linalg;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

/// A linear embedding: projection matrix, optional centering, and the
/// spectrum that produced it (squared canonical correlations for CCA,
/// eigenvalues for PCA embeddings).
#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    /// D x K projection, columns ordered by decreasing eigenvalue.
    pub u: Array2<f64>,
    /// Training mean, stored iff centering is enabled.
    pub x_mean: Option<Array1<f64>>,
    /// K leading eigenvalues, non-increasing.
    pub eigenvalues: Array1<f64>,
    pub eta: f64,
    pub centering: bool,
}

impl EmbeddingModel {
    pub fn in_dim(&self) -> usize {
        self.u.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.u.ncols()
    }
}

/// Streaming second-moment accumulator for paired views. Holds raw sums so
/// both the centered and uncentered problems can be formed afterwards.
#[derive(Debug, Clone)]
pub struct CrossMoments {
    pub sxx: Array2<f64>,
    pub syy: Array2<f64>,
    pub sxy: Array2<f64>,
    pub sx: Array1<f64>,
    pub sy: Array1<f64>,
    pub n: usize,
}

impl CrossMoments {
    pub fn new(dx: usize, dy: usize) -> Self {
        CrossMoments {
            sxx: Array2::zeros((dx, dx)),
            syy: Array2::zeros((dy, dy)),
            sxy: Array2::zeros((dx, dy)),
            sx: Array1::zeros(dx),
            sy: Array1::zeros(dy),
            n: 0,
        }
    }

    pub fn add_batch(&mut self, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<()> {
        if x.nrows() != y.nrows() {
            return Err(Error::Dimension {
                what: "CrossMoments::add_batch rows",
                expected: x.nrows(),
                got: y.nrows(),
            });
        }
        self.sxx = &self.sxx + &x.t().dot(&x);
        self.syy = &self.syy + &y.t().dot(&y);
        self.sxy = &self.sxy + &x.t().dot(&y);
        for row in x.rows() {
            self.sx = &self.sx + &row;
        }
        for row in y.rows() {
            self.sy = &self.sy + &row;
        }
        self.n += x.nrows();
        Ok(())
    }

    pub fn from_views(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<Self> {
        let mut m = CrossMoments::new(x.ncols(), y.ncols());
        m.add_batch(x, y)?;
        Ok(m)
    }
}

fn cholesky_with_jitter(c: &Array2<f64>, eta: f64) -> Result<Array2<f64>> {
    // jitter escalation: eta, 10 eta, 100 eta
    for factor in [1.0, 10.0, 100.0] {
        let mut a = c.clone();
        let jitter = eta * factor;
        for i in 0..a.nrows() {
            a[[i, i]] += jitter;
        }
        if let Ok(l) = linalg::cholesky_lower(&a) {
            return Ok(l);
        }
    }
    Err(Error::Numerical(
        "covariance not positive definite even after jitter escalation".into(),
    ))
}

fn centered_grams(
    m: &CrossMoments,
    centering: bool,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    if !centering || m.n == 0 {
        return (m.sxx.clone(), m.syy.clone(), m.sxy.clone());
    }
    let n = m.n as f64;
    let mx = &m.sx / n;
    let my = &m.sy / n;
    let cxx = &m.sxx - &outer(&m.sx, &mx);
    let cyy = &m.syy - &outer(&m.sy, &my);
    let cxy = &m.sxy - &outer(&m.sx, &my);
    (cxx, cyy, cxy)
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.len(), b.len()));
    for (i, &av) in a.iter().enumerate() {
        if av != 0.0 {
            for (j, &bv) in b.iter().enumerate() {
                out[[i, j]] = av * bv;
            }
        }
    }
    out
}

/// Fit both sides of the CCA from accumulated moments. Returns the X-side
/// and Y-side embedding models with sign-consistent column pairs (positive
/// training correlation per component).
pub fn fit_cca_pair_from_moments(
    moments: &CrossMoments,
    k: usize,
    eta: f64,
    centering: bool,
) -> Result<(EmbeddingModel, EmbeddingModel)> {
    let (x, y, effective) = fit_cca_pair_impl(moments, k, eta, centering, false)?;
    debug_assert_eq!(effective, k);
    Ok((x, y))
}

/// Like [`fit_cca_pair_from_moments`] but clamps `k` down to the effective
/// rank of the whitened cross-covariance instead of failing. Returns the
/// models plus the number of components actually kept.
pub fn fit_cca_pair_capped(
    moments: &CrossMoments,
    k: usize,
    eta: f64,
    centering: bool,
) -> Result<(EmbeddingModel, EmbeddingModel, usize)> {
    fit_cca_pair_impl(moments, k, eta, centering, true)
}

fn fit_cca_pair_impl(
    moments: &CrossMoments,
    k: usize,
    eta: f64,
    centering: bool,
    clamp_rank: bool,
) -> Result<(EmbeddingModel, EmbeddingModel, usize)> {
    let dx = moments.sxx.nrows();
    let dy = moments.syy.nrows();
    if k == 0 {
        return Err(Error::InvalidInput("cca: K must be >= 1".into()));
    }
    if eta <= 0.0 {
        return Err(Error::InvalidInput("cca: eta must be positive".into()));
    }
    let k = if clamp_rank {
        k.min(dx.min(dy))
    } else if k > dx.min(dy) {
        return Err(Error::InvalidInput(format!(
            "cca: K = {k} exceeds min view dimension {}",
            dx.min(dy)
        )));
    } else {
        k
    };
    let (cxx, cyy, cxy) = centered_grams(moments, centering);
    if cxx.iter().any(|v| !v.is_finite())
        || cyy.iter().any(|v| !v.is_finite())
        || cxy.iter().any(|v| !v.is_finite())
    {
        return Err(Error::Numerical("cca: non-finite moments".into()));
    }

    let lx = cholesky_with_jitter(&cxx, eta)?;
    let ly = cholesky_with_jitter(&cyy, eta)?;

    // whitened cross-covariance M = Lx^-1 Cxy Ly^-T
    let w = linalg::solve_lower(&lx, &cxy)?; // Lx^-1 Cxy
    let m = linalg::solve_lower(&ly, &w.t().to_owned())?.t().to_owned(); // (Ly^-1 W^T)^T

    // SVD of M through the eigendecomposition of M^T M (dy is the small side)
    let gram = m.t().dot(&m);
    let (vals, vecs) = linalg::symmetric_eigen_desc(&gram)?;
    let usable = vals.iter().take_while(|&&v| v > 1e-12).count();
    let k = if clamp_rank {
        k.min(usable).max(1)
    } else {
        k
    };
    if k > usable {
        return Err(Error::Numerical(format!(
            "cca: requested K = {k} exceeds the effective rank ({usable} usable components)"
        )));
    }
    let b = vecs.slice(s![.., ..k]).to_owned(); // dy x k, unit columns
    let mut a = m.dot(&b); // dx x k, column norms = singular values
    let mut sigmas = Array1::<f64>::zeros(k);
    for (j, mut col) in a.columns_mut().into_iter().enumerate() {
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        sigmas[j] = norm;
        col.mapv_inplace(|v| v / norm);
    }

    let mut u = linalg::solve_lower_transpose(&lx, &a)?;
    let mut v = linalg::solve_lower_transpose(&ly, &b.to_owned())?;
    // sign convention on U columns, mirrored onto V to keep correlations positive
    for j in 0..k {
        let col = u.column(j);
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for (i, &val) in col.iter().enumerate() {
            if val.abs() > best_abs {
                best_abs = val.abs();
                best = i;
            }
        }
        if u[[best, j]] < 0.0 {
            u.column_mut(j).mapv_inplace(|x| -x);
            v.column_mut(j).mapv_inplace(|x| -x);
        }
    }

    let eigenvalues = sigmas.mapv(|s| (s * s).max(0.0));
    let (x_mean, y_mean) = if centering && moments.n > 0 {
        let n = moments.n as f64;
        (Some(&moments.sx / n), Some(&moments.sy / n))
    } else {
        (None, None)
    };
    let model_x = EmbeddingModel {
        u,
        x_mean,
        eigenvalues: eigenvalues.clone(),
        eta,
        centering,
    };
    let model_y = EmbeddingModel {
        u: v,
        x_mean: y_mean,
        eigenvalues,
        eta,
        centering,
    };
    Ok((model_x, model_y, k))
}

/// Fit the X-side CCA projection from data matrices (centering enabled, the
/// default convention recorded in the model).
pub fn fit_cca(x: ArrayView2<f64>, y: ArrayView2<f64>, k: usize, eta: f64) -> Result<EmbeddingModel> {
    fit_cca_with(x, y, k, eta, true)
}

pub fn fit_cca_with(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    k: usize,
    eta: f64,
    centering: bool,
) -> Result<EmbeddingModel> {
    if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("cca: non-finite inputs".into()));
    }
    let moments = CrossMoments::from_views(x, y)?;
    Ok(fit_cca_pair_from_moments(&moments, k, eta, centering)?.0)
}

/// Unsupervised counterpart: a PCA embedding over the X view only, built
/// from the same moment accumulators (centered covariance eigenvectors).
pub fn fit_pca_embedding(
    sxx: &Array2<f64>,
    sx: &Array1<f64>,
    n: usize,
    k: usize,
) -> Result<EmbeddingModel> {
    let d = sxx.nrows();
    if k == 0 || k > d {
        return Err(Error::InvalidInput(format!("pca embedding: K = {k} not in 1..={d}")));
    }
    if n < 2 {
        return Err(Error::InvalidInput("pca embedding: need at least 2 samples".into()));
    }
    let nf = n as f64;
    let mean = sx / nf;
    let cov = (sxx - &outer(sx, &mean)) / nf;
    let (vals, mut vecs) = linalg::symmetric_eigen_desc(&cov)?;
    linalg::fix_column_signs(&mut vecs);
    let u = vecs.slice(s![.., ..k]).to_owned();
    Ok(EmbeddingModel {
        u,
        x_mean: Some(mean),
        eigenvalues: vals.slice(s![..k]).mapv(|v| v.max(0.0)),
        eta: 0.0,
        centering: true,
    })
}

/// Project and l2-normalize: `out = U^T (v - mean)`, then l2 (zero stays
/// zero). Scale invariance `project(c v) == project(v)` holds exactly when
/// centering is off.
pub fn project(v: ArrayView1<f64>, model: &EmbeddingModel) -> Result<Array1<f64>> {
    if v.len() != model.in_dim() {
        return Err(Error::Dimension {
            what: "embedding project",
            expected: model.in_dim(),
            got: v.len(),
        });
    }
    let mut out = match (&model.x_mean, model.centering) {
        (Some(mean), true) => {
            let centered = &v - mean;
            model.u.t().dot(&centered)
        }
        _ => model.u.t().dot(&v),
    };
    linalg::l2_normalize(out.as_slice_mut().unwrap());
    Ok(out)
}

/// Quadrant rearrangement of `U` for 2x2-pyramid inputs: block-row `q` of
/// `U` becomes column group `q` of `Û` in row-major quadrant order
/// (TL, TR, BL, BR).
#[derive(Debug, Clone)]
pub struct RearrangedU {
    /// (D/4) x 4K.
    pub u_hat: Array2<f64>,
    pub k: usize,
}

pub fn rearrange_u(u: &Array2<f64>) -> Result<RearrangedU> {
    let d = u.nrows();
    let k = u.ncols();
    if d % 4 != 0 {
        return Err(Error::InvalidInput(format!(
            "rearrange_u: input dimension {d} is not divisible by 4"
        )));
    }
    let q = d / 4;
    let mut u_hat = Array2::<f64>::zeros((q, 4 * k));
    for quad in 0..4 {
        u_hat
            .slice_mut(s![.., quad * k..(quad + 1) * k])
            .assign(&u.slice(s![quad * q..(quad + 1) * q, ..]));
    }
    Ok(RearrangedU { u_hat, k })
}
