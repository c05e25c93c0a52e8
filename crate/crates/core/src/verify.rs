//! Self-contained verification harness: fast-vs-naive extraction agreement
//! on freshly synthesized images, the three algebraic template properties
//! (additivity, norm absorption, quadrant rearrangement) and the CCA
//! identities. Used by the `verify` CLI subcommand and the acceptance suite.

use crate::codebook::{fit_gmm, GmmModel};
use crate::corpus::{normalize_height, render_word, RenderStyle};
use crate::embedding::{self, fit_cca_pair_from_moments, CrossMoments, EmbeddingModel};
use crate::error::Result;
use crate::features::{extract_dense, fit_pca, reduce_descriptors, PcaModel};
use crate::fisher;
use crate::midlevel::{self, MidlevelParams};
use crate::supervision;
use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Model sizes for the fast-vs-naive check.
#[derive(Debug, Clone)]
pub struct VerifyParams {
    pub pca_dim: usize,
    pub gaussians: usize,
    pub k: usize,
    pub height: usize,
    pub midlevel: MidlevelParams,
    pub blocks_per_image: usize,
}

impl Default for VerifyParams {
    fn default() -> Self {
        VerifyParams {
            pca_dim: 32,
            gaussians: 8,
            k: 62,
            height: 120,
            midlevel: MidlevelParams::default(),
            blocks_per_image: 60,
        }
    }
}

/// Small but real models (PCA, GMM, CCA embedding) trained on a handful of
/// rendered words.
pub struct VerifyModels {
    pub pca: PcaModel,
    pub gmm: GmmModel,
    pub embedding: EmbeddingModel,
}

pub fn build_models(params: &VerifyParams, seed: u64, centering: bool) -> Result<VerifyModels> {
    let style = RenderStyle::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = ["train", "Models", "verify7", "Qbs"];
    let mut items = Vec::new();
    let mut sift_rows: Vec<f32> = Vec::new();
    let mut sift_count = 0usize;
    for w in words {
        let (img, anns) = render_word(w, &style, &mut rng)?;
        let (img, anns) = normalize_height(&img, &anns, params.height)?;
        let dense = extract_dense(&img, &params.midlevel.sift_scales, params.midlevel.sift_step);
        for i in 0..dense.len() {
            if !dense.is_flat(i) && sift_count < 20_000 {
                sift_rows.extend(dense.data.row(i).iter());
                sift_count += 1;
            }
        }
        items.push((dense, anns));
    }
    let sift = Array2::from_shape_vec((sift_count, crate::features::SIFT_DIM), sift_rows)
        .expect("sample layout");
    let pca = fit_pca(sift.view(), params.pca_dim)?;

    let mut reduced_rows: Vec<f64> = Vec::new();
    let mut reduced_count = 0usize;
    let mut reduced_sets = Vec::new();
    for (dense, anns) in &items {
        let red = reduce_descriptors(dense, &pca)?;
        for row in red.data.rows() {
            if reduced_count < 12_000 {
                reduced_rows.extend(row.iter());
                reduced_count += 1;
            }
        }
        reduced_sets.push((red, anns.clone()));
    }
    let reduced = Array2::from_shape_vec((reduced_count, params.pca_dim), reduced_rows)
        .expect("sample layout");
    let gmm = fit_gmm(reduced.view(), params.gaussians, seed, 15)?;

    let dv = 4 * fisher::cell_dim(&gmm);
    let da = 2 * 2 * crate::alphabet::ALPHABET_SIZE;
    let mut moments = CrossMoments::new(dv, da);
    for (red, anns) in &reduced_sets {
        let (x, y) = supervision::image_training_rows(
            red,
            anns,
            params.blocks_per_image,
            &params.midlevel.block_sizes,
            2,
            &gmm,
            &mut rng,
        )?;
        moments.add_batch(x.view(), y.view())?;
    }
    let (embedding, _) = fit_cca_pair_from_moments(&moments, params.k.min(da), 1e-4, centering)?;
    Ok(VerifyModels {
        pca,
        gmm,
        embedding,
    })
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct FastNaiveOutcome {
    pub images: usize,
    pub features: usize,
    pub max_distance: f64,
}

/// Compare fast and naive extraction on `images` seeded synthetic words.
pub fn fast_naive_check(
    params: &VerifyParams,
    images: usize,
    seed: u64,
    centering: bool,
) -> Result<FastNaiveOutcome> {
    let models = build_models(params, seed, centering)?;
    let style = RenderStyle::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let pool = crate::corpus::DEFAULT_WORDLIST;
    let mut max_distance = 0.0f64;
    let mut features = 0usize;
    for i in 0..images {
        let word = pool[i % pool.len()];
        let (img, anns) = render_word(word, &style, &mut rng)?;
        let (img, _) = normalize_height(&img, &anns, params.height)?;
        let naive = midlevel::extract_naive(&img, &models.pca, &models.gmm, &models.embedding, &params.midlevel)?;
        let grid = midlevel::build_integral_grid(&img, &models.pca, &models.gmm, &models.embedding, &params.midlevel)?;
        let fast = midlevel::extract_fast(&grid, &params.midlevel.block_sizes, params.midlevel.block_step)?;
        assert_eq!(naive.len(), fast.len());
        for (a, b) in naive.iter().zip(fast.iter()) {
            debug_assert_eq!(a.block, b.block);
            let d: f64 = a
                .v
                .iter()
                .zip(b.v.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            max_distance = max_distance.max(d);
            features += 1;
        }
    }
    Ok(FastNaiveOutcome {
        images,
        features,
        max_distance,
    })
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct PropertyOutcome {
    pub trials: usize,
    /// Additivity of raw-sum FVs over random partitions (worst abs error).
    pub additivity_max: f64,
    /// Scale invariance of project-then-normalize (worst abs error).
    pub scale_invariance_max: f64,
    /// Quadrant rearrangement identity (worst abs error).
    pub rearrangement_max: f64,
}

/// The three algebraic properties behind the fast path, over random trials.
pub fn property_check(trials: usize, seed: u64) -> Result<PropertyOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 5;
    let g = 3;
    let data = Array2::from_shape_fn((60, d), |_| rng.random::<f64>() * 2.0 - 1.0);
    let gmm = fit_gmm(data.view(), g, seed, 10)?;

    let mut additivity_max = 0.0f64;
    let mut scale_max = 0.0f64;
    let mut rearr_max = 0.0f64;
    for _ in 0..trials {
        // additivity over a random 2..4-way partition
        let n = rng.random_range(2..=16);
        let descs = Array2::from_shape_fn((n, d), |_| rng.random::<f64>() * 2.0 - 1.0);
        let parts = rng.random_range(2..=4usize);
        let assign: Vec<usize> = (0..n).map(|_| rng.random_range(0..parts)).collect();
        let whole = fisher::encode_fv(descs.view(), &gmm, fisher::FvMode::RawSum)?;
        let mut sum = Array1::<f64>::zeros(whole.dim());
        for p in 0..parts {
            let idx: Vec<usize> = (0..n).filter(|&i| assign[i] == p).collect();
            let mut sub = Array2::<f64>::zeros((idx.len(), d));
            for (r, &i) in idx.iter().enumerate() {
                sub.row_mut(r).assign(&descs.row(i));
            }
            sum = sum + fisher::encode_fv(sub.view(), &gmm, fisher::FvMode::RawSum)?.v;
        }
        for (a, b) in whole.v.iter().zip(sum.iter()) {
            additivity_max = additivity_max.max((a - b).abs());
        }

        // norm absorption: project(c v) == project(v) for c > 0, centering off
        let dim = 8;
        let k = 3;
        let u = Array2::from_shape_fn((dim, k), |_| rng.random::<f64>() - 0.5);
        let model = EmbeddingModel {
            u: u.clone(),
            x_mean: None,
            eigenvalues: Array1::zeros(k),
            eta: 1e-4,
            centering: false,
        };
        let v = Array1::from_shape_fn(dim, |_| rng.random::<f64>() * 2.0 - 1.0);
        let c = rng.random::<f64>() * 10.0 + 1e-3;
        let p1 = embedding::project(v.view(), &model)?;
        let p2 = embedding::project((&v * c).view(), &model)?;
        for (a, b) in p1.iter().zip(p2.iter()) {
            scale_max = scale_max.max((a - b).abs());
        }

        // rearrangement: U^T f equals the quadrant-sum through U_hat
        let dq = 4 * rng.random_range(2..=6usize);
        let kk = rng.random_range(1..=4usize);
        let u = Array2::from_shape_fn((dq, kk), |_| rng.random::<f64>() - 0.5);
        let f = Array1::from_shape_fn(dq, |_| rng.random::<f64>() * 2.0 - 1.0);
        let r = embedding::rearrange_u(&u)?;
        let direct = u.t().dot(&f);
        let mut via = Array1::<f64>::zeros(kk);
        let q = dq / 4;
        for quad in 0..4 {
            let part = f.slice(s![quad * q..(quad + 1) * q]);
            let proj = r.u_hat.t().dot(&part);
            for j in 0..kk {
                via[j] += proj[quad * kk + j];
            }
        }
        for (a, b) in direct.iter().zip(via.iter()) {
            rearr_max = rearr_max.max((a - b).abs());
        }
    }
    Ok(PropertyOutcome {
        trials,
        additivity_max,
        scale_invariance_max: scale_max,
        rearrangement_max: rearr_max,
    })
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct CcaOutcome {
    /// Worst deviation of u_i^T (X^T X + eta I) u_j from delta_ij.
    pub orthogonality_max: f64,
    /// Smallest canonical correlation of the Y = X self-test.
    pub self_correlation_min: f64,
}

/// CCA identities on random data.
pub fn cca_check(seed: u64) -> Result<CcaOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2000;
    let dx = 30;
    let dy = 20;
    let eta = 1e-4;
    let x = Array2::from_shape_fn((n, dx), |_| rng.random::<f64>() * 2.0 - 1.0);
    let w = Array2::from_shape_fn((dx, dy), |_| rng.random::<f64>() - 0.5);
    let noise = Array2::from_shape_fn((n, dy), |_| rng.random::<f64>() - 0.5);
    let y = x.dot(&w) + &noise;
    let k = 8;
    let model = embedding::fit_cca_with(x.view(), y.view(), k, eta, true)?;
    let mean = x.mean_axis(ndarray::Axis(0)).unwrap();
    let xc = &x - &mean.broadcast((n, dx)).unwrap();
    let mut gram = xc.t().dot(&xc);
    for i in 0..dx {
        gram[[i, i]] += eta;
    }
    let ortho = model.u.t().dot(&gram.dot(&model.u));
    let mut worst = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            let want = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((ortho[[i, j]] - want).abs());
        }
    }
    let self_model = embedding::fit_cca_with(x.view(), x.view(), k, 1e-8, true)?;
    let self_min = self_model
        .eigenvalues
        .iter()
        .map(|l| l.sqrt())
        .fold(f64::INFINITY, f64::min);
    Ok(CcaOutcome {
        orthogonality_max: worst,
        self_correlation_min: self_min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_property_harness() {
        let p = property_check(50, 3).unwrap();
        assert!(p.additivity_max < 1e-12, "{}", p.additivity_max);
        assert!(p.scale_invariance_max < 1e-12);
        assert!(p.rearrangement_max < 1e-12);
    }

    #[test]
    fn quick_cca_harness() {
        let c = cca_check(5).unwrap();
        assert!(c.orthogonality_max < 1e-6, "{}", c.orthogonality_max);
        assert!(c.self_correlation_min >= 0.99);
    }

    #[test]
    fn quick_fast_naive_harness() {
        let params = VerifyParams {
            pca_dim: 10,
            gaussians: 3,
            k: 8,
            height: 64,
            midlevel: MidlevelParams {
                sift_scales: vec![12, 16],
                sift_step: 2,
                block_sizes: vec![16, 24],
                block_step: 4,
                cell: 4,
            },
            blocks_per_image: 30,
        };
        let out = fast_naive_check(&params, 2, 9, true).unwrap();
        assert!(out.features > 0);
        assert!(out.max_distance <= 1e-6, "{}", out.max_distance);
    }
}
