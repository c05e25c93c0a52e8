//! Global word signatures and the compact attributes + common-subspace
//! layer: word images and text strings end up in the same low-dimensional
//! space where cosine similarity drives retrieval and recognition.

use crate::alphabet::{self, ALPHABET_SIZE};
use crate::codebook::GmmModel;
use crate::corpus::{BBox, WordImage};
use crate::embedding::{self, EmbeddingModel};
use crate::error::{Error, Result};
use crate::features::{extract_dense, reduce_descriptors, PcaModel};
use crate::fisher::{self, Pyramid};
use crate::linalg;
use crate::midlevel::MidLevelFeature;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

/// Where a signature's features came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignatureSource {
    SupervisedMidlevel,
    UnsupervisedMidlevel,
    SiftBaseline,
    Concatenated,
}

impl std::fmt::Display for SignatureSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SignatureSource::SupervisedMidlevel => "supervised-midlevel",
            SignatureSource::UnsupervisedMidlevel => "unsupervised-midlevel",
            SignatureSource::SiftBaseline => "sift-baseline",
            SignatureSource::Concatenated => "concatenated",
        };
        write!(f, "{s}")
    }
}

/// Power- and l2-normalized global Fisher vector of one word image.
#[derive(Debug, Clone)]
pub struct WordSignature {
    pub v: Array1<f64>,
    pub source: SignatureSource,
}

/// Append normalized block-center coordinates to each feature and aggregate
/// with a 2x6 spatial pyramid FV over the image extent, then power+l2
/// normalize. An empty feature list yields the zero signature.
pub fn global_signature(
    features: &[MidLevelFeature],
    global_gmm: &GmmModel,
    image_width: usize,
    image_height: usize,
    source: SignatureSource,
) -> Result<WordSignature> {
    let dim = global_gmm.dim();
    let rows: Vec<(Array1<f64>, (f64, f64))> = features
        .iter()
        .map(|f| {
            let cx = f.block.x as f64 + f.block.w as f64 / 2.0;
            let cy = f.block.y as f64 + f.block.h as f64 / 2.0;
            let mut v = Array1::<f64>::zeros(f.v.len() + 2);
            v.slice_mut(ndarray::s![..f.v.len()]).assign(&f.v);
            v[f.v.len()] = cx / image_width as f64;
            v[f.v.len() + 1] = cy / image_height as f64;
            (v, (cx, cy))
        })
        .collect();
    if let Some((v, _)) = rows.first() {
        if v.len() != dim {
            return Err(Error::Dimension {
                what: "global_signature gmm",
                expected: v.len(),
                got: dim,
            });
        }
    }
    encode_global(&rows, global_gmm, image_width, image_height, source)
}

/// The SIFT-only baseline: dense descriptors reduced to `pca.out_dim`
/// dimensions, xy-augmented and aggregated exactly like the mid-level
/// variant.
pub fn baseline_signature(
    image: &WordImage,
    pca: &PcaModel,
    global_gmm: &GmmModel,
    sift_scales: &[usize],
    sift_step: usize,
) -> Result<WordSignature> {
    let dense = extract_dense(image, sift_scales, sift_step);
    let reduced = reduce_descriptors(&dense, pca)?;
    baseline_signature_from(&reduced, global_gmm)
}

/// Baseline signature from already reduced descriptors.
pub fn baseline_signature_from(
    reduced: &crate::features::ReducedDescriptors,
    global_gmm: &GmmModel,
) -> Result<WordSignature> {
    let rows: Vec<(Array1<f64>, (f64, f64))> = (0..reduced.len())
        .map(|i| {
            let (cx, cy) = reduced.centers[i];
            let (cx, cy) = (cx as f64, cy as f64);
            let d = reduced.data.ncols();
            let mut v = Array1::<f64>::zeros(d + 2);
            v.slice_mut(ndarray::s![..d]).assign(&reduced.data.row(i));
            v[d] = cx / reduced.image_width as f64;
            v[d + 1] = cy / reduced.image_height as f64;
            (v, (cx, cy))
        })
        .collect();
    encode_global(
        &rows,
        global_gmm,
        reduced.image_width,
        reduced.image_height,
        SignatureSource::SiftBaseline,
    )
}

fn encode_global(
    rows: &[(Array1<f64>, (f64, f64))],
    global_gmm: &GmmModel,
    image_width: usize,
    image_height: usize,
    source: SignatureSource,
) -> Result<WordSignature> {
    let dim = global_gmm.dim();
    let out_dim = 2 * dim * global_gmm.components() * 12;
    if rows.is_empty() {
        return Ok(WordSignature {
            v: Array1::zeros(out_dim),
            source,
        });
    }
    let mut data = Array2::<f64>::zeros((rows.len(), dim));
    let mut centers = Vec::with_capacity(rows.len());
    for (i, (v, c)) in rows.iter().enumerate() {
        if v.len() != dim {
            return Err(Error::Dimension {
                what: "encode_global",
                expected: dim,
                got: v.len(),
            });
        }
        data.row_mut(i).assign(v);
        centers.push(*c);
    }
    let region = BBox::new(0, 0, image_width as i64, image_height as i64);
    let fv = fisher::encode_fv_spm(
        data.view(),
        &centers,
        &region,
        global_gmm,
        Pyramid::Grid { rows: 2, cols: 6 },
    )?;
    let fv = fisher::power_l2_normalize(fv, 0.5);
    Ok(WordSignature { v: fv.v, source })
}

/// Concatenate two signatures and re-normalize. Cosine similarities of
/// same-shape concatenations are the average of the per-part cosines, so
/// concatenating a signature with itself preserves the similarity structure.
pub fn concat_signatures(a: &WordSignature, b: &WordSignature) -> WordSignature {
    let mut v = Array1::<f64>::zeros(a.v.len() + b.v.len());
    v.slice_mut(ndarray::s![..a.v.len()]).assign(&a.v);
    v.slice_mut(ndarray::s![a.v.len()..]).assign(&b.v);
    linalg::l2_normalize(v.as_slice_mut().unwrap());
    WordSignature {
        v,
        source: SignatureSource::Concatenated,
    }
}

/// Number of spatial character attributes for a level set.
pub fn attribute_count(levels: &[usize]) -> usize {
    levels.iter().sum::<usize>() * ALPHABET_SIZE
}

/// Binary spatial character-occurrence embedding of a string: attribute
/// `(level L, bin j, char c)` is set iff some occurrence of `c` overlaps bin
/// `j` of the `L`-way split by at least half of the character's own span.
/// Comparisons are exact (integer arithmetic over common denominators).
pub fn string_embedding(text: &str, levels: &[usize], case_insensitive: bool) -> Result<Array1<f64>> {
    alphabet::validate_word(text)?;
    let folded;
    let text = if case_insensitive {
        folded = alphabet::fold_case(text);
        folded.as_str()
    } else {
        text
    };
    let chars: Vec<usize> = text
        .chars()
        .map(alphabet::char_index_checked)
        .collect::<Result<_>>()?;
    let n = chars.len() as i64;
    let mut out = Array1::<f64>::zeros(attribute_count(levels));
    let mut offset = 0usize;
    for &level in levels {
        let l = level as i64;
        for (i, &c) in chars.iter().enumerate() {
            let i = i as i64;
            // char span [i/n, (i+1)/n), bin j spans [j/L, (j+1)/L);
            // overlap >= span/2  <=>  2 L n (overlap) >= L n (1/n), all in
            // units of 1/(L n): overlap_units = min((i+1)L, (j+1)n) - max(iL, jn)
            for j in 0..level as i64 {
                let overlap = ((i + 1) * l).min((j + 1) * n) - (i * l).max(j * n);
                if overlap * 2 >= l {
                    out[offset + j as usize * ALPHABET_SIZE + c] = 1.0;
                }
            }
        }
        offset += level * ALPHABET_SIZE;
    }
    Ok(out)
}

/// One-vs-all ridge regressors over signatures predicting the binary
/// attribute targets; trained in the dual so very long signatures stay
/// cheap.
#[derive(Debug, Clone)]
pub struct AttributeModel {
    /// signature-dim x attribute-count weights.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    /// Attributes whose training targets were constant (all 0 or all 1);
    /// their predictor is the constant bias.
    pub degenerate: Vec<bool>,
    pub levels: Vec<usize>,
    pub case_insensitive: bool,
    pub lambda: f64,
}

impl AttributeModel {
    pub fn signature_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn attribute_dim(&self) -> usize {
        self.weights.ncols()
    }
}

/// Fit per-attribute ridge regression against the {0,1} string-embedding
/// targets of the transcriptions. Uses the dual normal equations
/// `W = Sc^T (Sc Sc^T + lambda I)^-1 Tc` with centered signatures/targets,
/// which is algebraically identical to the primal solution.
pub fn fit_attributes(
    signatures: ArrayView2<f64>,
    transcriptions: &[String],
    levels: &[usize],
    lambda: f64,
    case_insensitive: bool,
) -> Result<AttributeModel> {
    let n = signatures.nrows();
    if n == 0 {
        return Err(Error::InvalidInput("fit_attributes: no training signatures".into()));
    }
    if transcriptions.len() != n {
        return Err(Error::Dimension {
            what: "fit_attributes transcriptions",
            expected: n,
            got: transcriptions.len(),
        });
    }
    if lambda <= 0.0 {
        return Err(Error::InvalidInput("fit_attributes: lambda must be positive".into()));
    }
    let na = attribute_count(levels);
    let mut targets = Array2::<f64>::zeros((n, na));
    for (i, t) in transcriptions.iter().enumerate() {
        targets
            .row_mut(i)
            .assign(&string_embedding(t, levels, case_insensitive)?);
    }
    let degenerate: Vec<bool> = (0..na)
        .map(|j| {
            let col = targets.column(j);
            col.iter().all(|&v| v == 0.0) || col.iter().all(|&v| v == 1.0)
        })
        .collect();

    let s_mean = signatures.mean_axis(Axis(0)).expect("non-empty");
    let t_mean = targets.mean_axis(Axis(0)).expect("non-empty");
    let sc = &signatures - &s_mean.broadcast((n, signatures.ncols())).unwrap();
    let tc = &targets - &t_mean.broadcast((n, na)).unwrap();

    // dual solve on the n x n kernel
    let mut kernel = sc.dot(&sc.t());
    for i in 0..n {
        kernel[[i, i]] += lambda;
    }
    let l = linalg::cholesky_lower(&kernel)?;
    let tmp = linalg::solve_lower(&l, &tc)?;
    let alpha = linalg::solve_lower_transpose(&l, &tmp)?;
    let weights = sc.t().dot(&alpha);
    let bias = &t_mean - &weights.t().dot(&s_mean);
    Ok(AttributeModel {
        weights,
        bias,
        degenerate,
        levels: levels.to_vec(),
        case_insensitive,
        lambda,
    })
}

/// Predicted attribute scores `W^T s + bias` for one signature.
pub fn attribute_scores(signature: ArrayView1<f64>, model: &AttributeModel) -> Result<Array1<f64>> {
    if signature.len() != model.signature_dim() {
        return Err(Error::Dimension {
            what: "attribute_scores",
            expected: model.signature_dim(),
            got: signature.len(),
        });
    }
    Ok(model.weights.t().dot(&signature) + &model.bias)
}

/// Batch attribute scores (one signature per row).
pub fn attribute_scores_batch(signatures: ArrayView2<f64>, model: &AttributeModel) -> Result<Array2<f64>> {
    if signatures.ncols() != model.signature_dim() {
        return Err(Error::Dimension {
            what: "attribute_scores_batch",
            expected: model.signature_dim(),
            got: signatures.ncols(),
        });
    }
    let mut out = signatures.dot(&model.weights);
    for mut row in out.rows_mut() {
        row += &model.bias;
    }
    Ok(out)
}

/// CCA-coupled projections of attribute scores and string embeddings into a
/// shared cosine space.
#[derive(Debug, Clone)]
pub struct CommonSubspace {
    pub img: EmbeddingModel,
    pub txt: EmbeddingModel,
    pub levels: Vec<usize>,
    pub case_insensitive: bool,
}

impl CommonSubspace {
    pub fn out_dim(&self) -> usize {
        self.img.out_dim()
    }
}

/// Fit the common subspace between image attribute scores and string
/// embeddings; both sides of the CCA are kept.
pub fn fit_common_subspace(
    scores: ArrayView2<f64>,
    string_embeddings: ArrayView2<f64>,
    out_dim: usize,
    eta: f64,
    levels: &[usize],
    case_insensitive: bool,
) -> Result<CommonSubspace> {
    let moments = embedding::CrossMoments::from_views(scores, string_embeddings)?;
    let (img, txt) = embedding::fit_cca_pair_from_moments(&moments, out_dim, eta, true)?;
    Ok(CommonSubspace {
        img,
        txt,
        levels: levels.to_vec(),
        case_insensitive,
    })
}

/// Like [`fit_common_subspace`] but clamps the output dimensionality to the
/// effective rank of the paired views (desk-scale corpora with few distinct
/// words cannot support the full dimensionality). Returns the subspace and
/// the dimensionality actually kept.
pub fn fit_common_subspace_capped(
    scores: ArrayView2<f64>,
    string_embeddings: ArrayView2<f64>,
    out_dim: usize,
    eta: f64,
    levels: &[usize],
    case_insensitive: bool,
) -> Result<(CommonSubspace, usize)> {
    let moments = embedding::CrossMoments::from_views(scores, string_embeddings)?;
    let (img, txt, effective) = embedding::fit_cca_pair_capped(&moments, out_dim, eta, true)?;
    Ok((
        CommonSubspace {
            img,
            txt,
            levels: levels.to_vec(),
            case_insensitive,
        },
        effective,
    ))
}

/// Embed image attribute scores into the common subspace (unit norm).
pub fn embed_image(scores: ArrayView1<f64>, subspace: &CommonSubspace) -> Result<Array1<f64>> {
    embedding::project(scores, &subspace.img)
}

/// Embed a text string into the common subspace (unit norm).
pub fn embed_string(text: &str, subspace: &CommonSubspace) -> Result<Array1<f64>> {
    let phi = string_embedding(text, &subspace.levels, subspace.case_insensitive)?;
    embedding::project(phi.view(), &subspace.txt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::fit_gmm;
    use ndarray::{arr1, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn feature(x: i64, y: i64, s: i64, v: &[f64]) -> MidLevelFeature {
        MidLevelFeature {
            block: BBox::new(x, y, s, s),
            v: Array1::from(v.to_vec()),
        }
    }

    fn small_gmm(dim: usize, g: usize, seed: u64) -> GmmModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array2::from_shape_fn((g * 40, dim), |_| rng.random::<f64>() * 2.0 - 1.0);
        fit_gmm(data.view(), g, seed, 10).unwrap()
    }

    #[test]
    fn global_signature_dims_and_norm() {
        // K=2 features + xy -> gmm dim 4; 2*4*G*12 dims
        let gmm = small_gmm(4, 3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let feats: Vec<MidLevelFeature> = (0..30)
            .map(|i| {
                let v = [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
                feature((i % 10) * 12, (i / 10) * 30, 16, &v)
            })
            .collect();
        let sig = global_signature(&feats, &gmm, 136, 120, SignatureSource::SupervisedMidlevel).unwrap();
        assert_eq!(sig.v.len(), 2 * 4 * 3 * 12);
        let norm = linalg::norm2(sig.v.as_slice().unwrap());
        assert!((norm - 1.0).abs() < 1e-8);
        // paper defaults: K=62 -> dim 64, 16 Gaussians, 2x6 -> 24,576
        assert_eq!(2 * 64 * 16 * 12, 24_576);

        // empty -> zero signature
        let empty = global_signature(&[], &gmm, 100, 100, SignatureSource::SupervisedMidlevel).unwrap();
        assert!(empty.v.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn global_signature_matches_per_cell_partition_oracle() {
        let gmm = small_gmm(3, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (w, h) = (120usize, 60usize);
        let feats: Vec<MidLevelFeature> = (0..50)
            .map(|_| {
                let x = rng.random_range(0..(w as i64 - 8));
                let y = rng.random_range(0..(h as i64 - 8));
                feature(x, y, 8, &[rng.random::<f64>() - 0.5])
            })
            .collect();
        let sig = global_signature(&feats, &gmm, w, h, SignatureSource::SupervisedMidlevel).unwrap();

        // oracle: augment by hand, encode each 2x6 cell independently
        let region = BBox::new(0, 0, w as i64, h as i64);
        let cd = fisher::cell_dim(&gmm);
        let mut manual = Array1::<f64>::zeros(cd * 12);
        for cell in 0..12 {
            let mut rows = Vec::new();
            for f in &feats {
                let cx = f.block.x as f64 + f.block.w as f64 / 2.0;
                let cy = f.block.y as f64 + f.block.h as f64 / 2.0;
                if fisher::cell_of(cx, cy, &region, 2, 6) == cell {
                    rows.push(arr1(&[f.v[0], cx / w as f64, cy / h as f64]));
                }
            }
            let mut m = Array2::<f64>::zeros((rows.len(), 3));
            for (i, r) in rows.iter().enumerate() {
                m.row_mut(i).assign(r);
            }
            let fv = fisher::encode_fv(m.view(), &gmm, fisher::FvMode::RawSum).unwrap();
            manual.slice_mut(ndarray::s![cell * cd..(cell + 1) * cd]).assign(&fv.v);
        }
        for v in manual.iter_mut() {
            *v = v.signum() * v.abs().sqrt();
        }
        linalg::l2_normalize(manual.as_slice_mut().unwrap());
        for i in 0..manual.len() {
            assert!((sig.v[i] - manual[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn string_embedding_examples() {
        // "A" with a single level: exactly one bit (case-sensitive here)
        let e = string_embedding("A", &[1], false).unwrap();
        assert_eq!(e.sum(), 1.0);
        assert_eq!(e[alphabet::char_index('A').unwrap()], 1.0);

        // "ab" at level 2: a in bin 0, b in bin 1
        let e = string_embedding("ab", &[2], false).unwrap();
        let a = alphabet::char_index('a').unwrap();
        let b = alphabet::char_index('b').unwrap();
        assert_eq!(e[a], 1.0);
        assert_eq!(e[ALPHABET_SIZE + b], 1.0);
        assert_eq!(e.sum(), 2.0);

        // presence, not count: "aa" at level 1 sets a single bit
        let e = string_embedding("aa", &[1], false).unwrap();
        assert_eq!(e.sum(), 1.0);

        // exact midpoint rule: "abc" level 2, 'b' overlaps both bins by
        // exactly half its span -> both set
        let e = string_embedding("abc", &[2], false).unwrap();
        assert_eq!(e[b], 1.0);
        assert_eq!(e[ALPHABET_SIZE + b], 1.0);

        // case folding maps uppercase onto lowercase slots
        let e1 = string_embedding("SUN", &[1, 2], true).unwrap();
        let e2 = string_embedding("sun", &[1, 2], true).unwrap();
        assert_eq!(e1.to_vec(), e2.to_vec());

        assert!(string_embedding("", &[1], false).is_err());
        assert!(string_embedding("a b", &[1], false).is_err());
    }

    #[test]
    fn attribute_ridge_matches_primal_normal_equations() {
        // 10-sample toy problem, low-dimensional: compare against the primal
        // (S^T S + lambda I)^-1 S^T T solution computed explicitly
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10;
        let d = 4;
        let sig = Array2::from_shape_fn((n, d), |_| rng.random::<f64>() * 2.0 - 1.0);
        let words: Vec<String> = ["ab", "ba", "aa", "bb", "ab", "ba", "ab", "bb", "aa", "ba"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let lambda = 0.37;
        let model = fit_attributes(sig.view(), &words, &[1, 2], lambda, false).unwrap();

        // primal oracle on centered data
        let na = attribute_count(&[1, 2]);
        let mut targets = Array2::<f64>::zeros((n, na));
        for (i, w) in words.iter().enumerate() {
            targets.row_mut(i).assign(&string_embedding(w, &[1, 2], false).unwrap());
        }
        let sm = sig.mean_axis(Axis(0)).unwrap();
        let tm = targets.mean_axis(Axis(0)).unwrap();
        let sc = &sig - &sm.broadcast((n, d)).unwrap();
        let tc = &targets - &tm.broadcast((n, na)).unwrap();
        let mut gram = sc.t().dot(&sc);
        for i in 0..d {
            gram[[i, i]] += lambda;
        }
        let l = linalg::cholesky_lower(&gram).unwrap();
        let rhs = sc.t().dot(&tc);
        let w_primal = linalg::solve_lower_transpose(&l, &linalg::solve_lower(&l, &rhs).unwrap()).unwrap();
        for i in 0..d {
            for j in 0..na {
                assert!(
                    (model.weights[[i, j]] - w_primal[[i, j]]).abs() < 1e-6,
                    "weight ({i},{j})"
                );
            }
        }

        // scores oracle
        let s = sig.row(3);
        let scores = attribute_scores(s, &model).unwrap();
        for j in 0..na {
            let mut want = model.bias[j];
            for i in 0..d {
                want += model.weights[[i, j]] * s[i];
            }
            assert!((scores[j] - want).abs() < 1e-10);
        }
    }

    #[test]
    fn ridge_limit_and_degenerate_attributes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 12;
        let sig = Array2::from_shape_fn((n, 3), |_| rng.random::<f64>());
        let words: Vec<String> = (0..n).map(|i| if i % 2 == 0 { "ab" } else { "cd" }.to_string()).collect();
        // lambda -> infinity: weights -> 0, scores -> bias (= target mean)
        let model = fit_attributes(sig.view(), &words, &[1], 1e12, false).unwrap();
        let wmax = model.weights.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        assert!(wmax < 1e-9);
        let scores = attribute_scores(sig.row(0), &model).unwrap();
        let a = alphabet::char_index('a').unwrap();
        assert!((scores[a] - 0.5).abs() < 1e-6);

        // degenerate flags: 'a' appears in half the words (not degenerate),
        // 'z' never (degenerate all-zero)
        let z = alphabet::char_index('z').unwrap();
        assert!(model.degenerate[z]);
        assert!(!model.degenerate[a]);
    }

    #[test]
    fn separable_attributes_reach_high_training_accuracy() {
        // signatures that linearly encode their word identity
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let words = ["cat", "dog", "sun", "map"];
        let n = 40;
        let d = 8;
        let mut sig = Array2::<f64>::zeros((n, d));
        let mut trans = Vec::new();
        for i in 0..n {
            let w = i % 4;
            sig[[i, w]] = 1.0;
            for j in 4..d {
                sig[[i, j]] = 0.05 * (rng.random::<f64>() - 0.5);
            }
            trans.push(words[w].to_string());
        }
        let levels = vec![1, 2];
        let model = fit_attributes(sig.view(), &trans, &levels, 1e-6, false).unwrap();
        let scores = attribute_scores_batch(sig.view(), &model).unwrap();
        let mut targets = Array2::<f64>::zeros((n, attribute_count(&levels)));
        for (i, t) in trans.iter().enumerate() {
            targets.row_mut(i).assign(&string_embedding(t, &levels, false).unwrap());
        }
        let mut correct = 0usize;
        let mut checked = 0usize;
        for j in 0..attribute_count(&levels) {
            if model.degenerate[j] {
                continue;
            }
            for i in 0..n {
                checked += 1;
                let pred = scores[[i, j]] > 0.5;
                if pred == (targets[[i, j]] > 0.5) {
                    correct += 1;
                }
            }
        }
        assert!(checked > 0);
        assert!(correct as f64 / checked as f64 >= 0.99);
    }

    #[test]
    fn common_subspace_self_similarity_and_dims() {
        // synthetic scores correlated with the string embeddings
        let words = ["cat", "dog", "sun", "map", "car", "bus"];
        let levels = vec![1, 2];
        let na = attribute_count(&levels);
        let n = 120;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut scores = Array2::<f64>::zeros((n, na));
        let mut strs = Array2::<f64>::zeros((n, na));
        let mut trans = Vec::new();
        for i in 0..n {
            let w = words[i % words.len()];
            let e = string_embedding(w, &levels, true).unwrap();
            for j in 0..na {
                scores[[i, j]] = e[j] + 0.3 * (rng.random::<f64>() - 0.5);
                strs[[i, j]] = e[j];
            }
            trans.push(w.to_string());
        }
        let subspace = fit_common_subspace(scores.view(), strs.view(), 5, 1e-4, &levels, true).unwrap();
        assert_eq!(subspace.out_dim(), 5);
        // self-similarity of an embedded string is 1
        let e = embed_string("cat", &subspace).unwrap();
        let sim = e.dot(&e);
        assert!((sim - 1.0).abs() < 1e-8);
        // matching image scores land near their own string
        let mut hit = 0;
        for i in 0..n {
            let img = embed_image(scores.row(i), &subspace).unwrap();
            let own: f64 = img.dot(&embed_string(&trans[i], &subspace).unwrap());
            let mut better = 0;
            for w in &words {
                let other: f64 = img.dot(&embed_string(w, &subspace).unwrap());
                if *w != trans[i] && other > own {
                    better += 1;
                }
            }
            if better == 0 {
                hit += 1;
            }
        }
        assert!(hit as f64 / n as f64 > 0.9, "hit rate {}", hit as f64 / n as f64);
    }

    #[test]
    fn concatenation_properties() {
        let a = WordSignature {
            v: arr1(&[0.6, 0.8]),
            source: SignatureSource::SupervisedMidlevel,
        };
        let b = WordSignature {
            v: arr1(&[1.0, 0.0]),
            source: SignatureSource::SiftBaseline,
        };
        let c = concat_signatures(&a, &b);
        assert_eq!(c.v.len(), 4);
        assert_eq!(c.source, SignatureSource::Concatenated);
        assert!((linalg::norm2(c.v.as_slice().unwrap()) - 1.0).abs() < 1e-12);
        // dims add: 24,576 + 24,576 = 49,152
        assert_eq!(24_576 + 24_576, 49_152);

        // cosine of self-concatenations equals cosine of the originals
        let x = WordSignature {
            v: arr1(&[0.6, 0.8]),
            source: SignatureSource::SupervisedMidlevel,
        };
        let y = WordSignature {
            v: arr1(&[0.0, 1.0]),
            source: SignatureSource::SupervisedMidlevel,
        };
        let xx = concat_signatures(&x, &x);
        let yy = concat_signatures(&y, &y);
        let orig = x.v.dot(&y.v);
        let cat = xx.v.dot(&yy.v);
        assert!((orig - cat).abs() < 1e-12);
    }
}
