//! Fisher-vector encoding (gradients w.r.t. GMM means and variances),
//! spatial pyramids and the normalization variants used by the pipeline:
//! raw sums for anything that must stay additive, l2 for block features,
//! power + l2 for global signatures.
//!
//! Layout per cell: all G mean blocks (d dims each) followed by all G
//! variance blocks, i.e. `2 * d * G` values; pyramid cells are concatenated
//! in row-major cell order.

use crate::codebook::{GmmModel, GmmScorer};
use crate::corpus::BBox;
use crate::error::{Error, Result};
use crate::linalg;
use ndarray::{Array1, ArrayView2};

/// Aggregation mode of [`encode_fv`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FvMode {
    /// Plain sum over descriptors; exactly additive over partitions.
    RawSum,
    /// Sum divided by the number of encoded descriptors.
    Averaged,
}

/// Which normalization has been applied to a vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormState {
    RawSum,
    Averaged,
    L2,
    PowerL2,
}

/// Spatial layout of an encoded vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pyramid {
    None,
    Grid { rows: usize, cols: usize },
}

impl Pyramid {
    pub fn cells(&self) -> usize {
        match self {
            Pyramid::None => 1,
            Pyramid::Grid { rows, cols } => rows * cols,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FisherVector {
    pub v: Array1<f64>,
    pub norm_state: NormState,
    pub pyramid: Pyramid,
}

impl FisherVector {
    pub fn dim(&self) -> usize {
        self.v.len()
    }
}

/// Dimensionality of one (pyramid-free) cell encoding.
pub fn cell_dim(gmm: &GmmModel) -> usize {
    2 * gmm.dim() * gmm.components()
}

/// Add the FV contribution of one descriptor to `out` (length `2*d*G`).
/// Mean block k: gamma_k (x - mu_k) / sigma_k / sqrt(w_k);
/// variance block k: gamma_k ((x - mu_k)^2 / sigma_k^2 - 1) / sqrt(2 w_k).
pub(crate) fn accumulate_contribution(
    scorer: &GmmScorer,
    x: &[f64],
    gamma: &mut [f64],
    out: &mut [f64],
) {
    let g = scorer.components();
    let d = scorer.dim();
    scorer.posteriors_into(x, gamma);
    for k in 0..g {
        let gk = gamma[k];
        if gk == 0.0 {
            continue;
        }
        let wk = scorer.gmm.weights[k];
        let am = gk / wk.sqrt();
        let av = gk / (2.0 * wk).sqrt();
        let mu = scorer.gmm.means.row(k);
        let is = scorer.inv_sigma.row(k);
        let mean_off = k * d;
        let var_off = (g + k) * d;
        for j in 0..d {
            let z = (x[j] - mu[j]) * is[j];
            out[mean_off + j] += am * z;
            out[var_off + j] += av * (z * z - 1.0);
        }
    }
}

fn is_zero_row(row: &[f64]) -> bool {
    row.iter().all(|&v| v == 0.0)
}

/// Encode a descriptor set into a (pyramid-free) Fisher vector. Zero-norm
/// descriptors are filtered out before encoding; an empty set yields the
/// zero vector.
pub fn encode_fv(descriptors: ArrayView2<f64>, gmm: &GmmModel, mode: FvMode) -> Result<FisherVector> {
    if descriptors.nrows() > 0 && descriptors.ncols() != gmm.dim() {
        return Err(Error::Dimension {
            what: "encode_fv",
            expected: gmm.dim(),
            got: descriptors.ncols(),
        });
    }
    let scorer = gmm.scorer();
    let mut out = vec![0.0f64; cell_dim(gmm)];
    let mut gamma = vec![0.0f64; gmm.components()];
    let mut count = 0usize;
    for row in descriptors.rows() {
        let x = row.as_slice().unwrap();
        if is_zero_row(x) {
            continue;
        }
        accumulate_contribution(&scorer, x, &mut gamma, &mut out);
        count += 1;
    }
    let norm_state = match mode {
        FvMode::RawSum => NormState::RawSum,
        FvMode::Averaged => {
            if count > 0 {
                let inv = 1.0 / count as f64;
                for v in out.iter_mut() {
                    *v *= inv;
                }
            }
            NormState::Averaged
        }
    };
    Ok(FisherVector {
        v: Array1::from(out),
        norm_state,
        pyramid: Pyramid::None,
    })
}

/// Index of the pyramid cell containing a point, row-major. Points on the
/// right/bottom edge of the region fall into the last cell.
pub fn cell_of(
    cx: f64,
    cy: f64,
    region: &BBox,
    rows: usize,
    cols: usize,
) -> usize {
    let fx = (cx - region.x as f64) / region.w as f64;
    let fy = (cy - region.y as f64) / region.h as f64;
    let col = ((fx * cols as f64).floor() as isize).clamp(0, cols as isize - 1) as usize;
    let row = ((fy * rows as f64).floor() as isize).clamp(0, rows as isize - 1) as usize;
    row * cols + col
}

/// Encode descriptors with a spatial pyramid over `region`: the region is
/// split into equal cells, each cell is encoded independently (raw sum over
/// the descriptors whose centers fall in it) and cells are concatenated in
/// row-major order.
pub fn encode_fv_spm(
    descriptors: ArrayView2<f64>,
    centers: &[(f64, f64)],
    region: &BBox,
    gmm: &GmmModel,
    pyramid: Pyramid,
) -> Result<FisherVector> {
    let (rows, cols) = match pyramid {
        Pyramid::Grid { rows, cols } if rows > 0 && cols > 0 => (rows, cols),
        _ => {
            return Err(Error::InvalidInput(
                "encode_fv_spm requires a non-empty pyramid grid".into(),
            ))
        }
    };
    if descriptors.nrows() != centers.len() {
        return Err(Error::Dimension {
            what: "encode_fv_spm centers",
            expected: descriptors.nrows(),
            got: centers.len(),
        });
    }
    if descriptors.nrows() > 0 && descriptors.ncols() != gmm.dim() {
        return Err(Error::Dimension {
            what: "encode_fv_spm",
            expected: gmm.dim(),
            got: descriptors.ncols(),
        });
    }
    let scorer = gmm.scorer();
    let cd = cell_dim(gmm);
    let ncells = rows * cols;
    let mut out = vec![0.0f64; cd * ncells];
    let mut gamma = vec![0.0f64; gmm.components()];
    for (i, row) in descriptors.rows().into_iter().enumerate() {
        let x = row.as_slice().unwrap();
        if is_zero_row(x) {
            continue;
        }
        let (cx, cy) = centers[i];
        debug_assert!(
            cx >= region.x as f64
                && cx <= region.right() as f64
                && cy >= region.y as f64
                && cy <= region.bottom() as f64,
            "descriptor center outside pyramid region"
        );
        let cell = cell_of(cx, cy, region, rows, cols);
        accumulate_contribution(&scorer, x, &mut gamma, &mut out[cell * cd..(cell + 1) * cd]);
    }
    Ok(FisherVector {
        v: Array1::from(out),
        norm_state: NormState::RawSum,
        pyramid,
    })
}

/// l2-normalize; the zero vector stays zero.
pub fn l2_normalize(mut fv: FisherVector) -> FisherVector {
    linalg::l2_normalize(fv.v.as_slice_mut().unwrap());
    fv.norm_state = NormState::L2;
    fv
}

/// Signed power normalization (`sign(v) |v|^alpha`) followed by l2.
pub fn power_l2_normalize(mut fv: FisherVector, alpha: f64) -> FisherVector {
    for v in fv.v.iter_mut() {
        *v = v.signum() * v.abs().powf(alpha);
    }
    linalg::l2_normalize(fv.v.as_slice_mut().unwrap());
    fv.norm_state = NormState::PowerL2;
    fv
}
