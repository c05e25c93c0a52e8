//! End-to-end experiment orchestration: train every stage on the learn
//! split, evaluate on the test split, and emit a machine-readable report
//! plus a human table. All randomness is derived from the config seed; all
//! models pass through archive (f32) form before being used for evaluation,
//! so a rerun from a saved archive reproduces the numbers exactly.

use crate::archive::{self, Component, ModelArchive};
use crate::codebook::{fit_gmm_traced, GmmModel, GmmOptions};
use crate::config::PipelineConfig;
use crate::corpus::{synth_corpus, Corpus, Split};
use crate::embedding::{fit_cca_pair_from_moments, fit_pca_embedding, CrossMoments, EmbeddingModel};
use crate::error::{Error, Result};
use crate::eval;
use crate::features::{extract_dense, fit_pca, reduce_descriptors, PcaModel, ReducedDescriptors};
use crate::fisher;
use crate::midlevel::{build_grids_from, extract_fast, MidLevelFeature};
use crate::supervision;
use crate::wordrep::{self, SignatureSource, WordSignature};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::Digest;
use std::collections::BTreeMap;
use std::time::Instant;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// A feature source evaluated by the experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Source {
    Supervised(usize),
    Unsupervised,
    Sift,
    /// Supervised (first configured CR) and SIFT signatures concatenated.
    Concat,
}

impl Source {
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(r) = s.strip_prefix("supervised-cr") {
            let r: usize = r
                .parse()
                .map_err(|_| Error::Config(format!("bad source {s:?}")))?;
            if r == 0 {
                return Err(Error::Config(format!("bad source {s:?}")));
            }
            return Ok(Source::Supervised(r));
        }
        match s {
            "unsupervised" => Ok(Source::Unsupervised),
            "sift" | "sift-baseline" => Ok(Source::Sift),
            "concat" | "concatenated" => Ok(Source::Concat),
            _ => Err(Error::Config(format!("unknown source {s:?}"))),
        }
    }

    /// Archive component key fragment.
    pub fn key(&self) -> String {
        match self {
            Source::Supervised(r) => format!("sup_cr{r}"),
            Source::Unsupervised => "unsup".into(),
            Source::Sift => "sift".into(),
            Source::Concat => "concat".into(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Source::Supervised(r) => format!("supervised-cr{r}"),
            Source::Unsupervised => "unsupervised".into(),
            Source::Sift => "sift".into(),
            Source::Concat => "concat".into(),
        }
    }

    fn signature_source(&self) -> SignatureSource {
        match self {
            Source::Supervised(_) => SignatureSource::SupervisedMidlevel,
            Source::Unsupervised => SignatureSource::UnsupervisedMidlevel,
            Source::Sift => SignatureSource::SiftBaseline,
            Source::Concat => SignatureSource::Concatenated,
        }
    }

    pub fn cr(&self) -> Option<usize> {
        match self {
            Source::Supervised(r) => Some(*r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub hash: String,
    pub words: usize,
    pub learn_images: usize,
    pub test_images: usize,
}

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub learn_fraction: f64,
    pub source: String,
    pub cr: Option<usize>,
    /// "fv" (raw global Fisher vectors) or "subspace" (attributes + CCA).
    pub space: String,
    pub qbe_map: f64,
    pub qbe_p1: f64,
    pub qbe_retained: usize,
    pub qbs_map: Option<f64>,
    pub recognition_p1: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub config: PipelineConfig,
    pub corpus: CorpusSummary,
    pub rows: Vec<ReportRow>,
    pub timings_ms: BTreeMap<String, u64>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text results table.
    pub fn human_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "corpus {} ({} words, {} learn / {} test images)\n",
            &self.corpus.hash[..12.min(self.corpus.hash.len())],
            self.corpus.words,
            self.corpus.learn_images,
            self.corpus.test_images
        ));
        out.push_str(&format!(
            "{:<18} {:>5} {:<9} {:>8} {:>8} {:>8} {:>8}\n",
            "source", "frac", "space", "qbe-mAP", "qbe-P@1", "qbs-mAP", "rec-P@1"
        ));
        for r in &self.rows {
            let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
            out.push_str(&format!(
                "{:<18} {:>5.2} {:<9} {:>8.4} {:>8.4} {:>8} {:>8}\n",
                r.source,
                r.learn_fraction,
                r.space,
                r.qbe_map,
                r.qbe_p1,
                fmt(r.qbs_map),
                fmt(r.recognition_p1),
            ));
        }
        out
    }
}

/// Deterministic sub-seed derivation.
pub fn subseed(master: u64, tag: &str) -> u64 {
    let mut hasher = sha2::Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Content hash over images and annotations of several corpora.
pub fn corpus_hash(corpora: &[&Corpus]) -> String {
    let mut hasher = sha2::Sha256::new();
    for corpus in corpora {
        hasher.update(corpus.split.to_string().as_bytes());
        for item in &corpus.items {
            hasher.update(item.image.id.as_bytes());
            hasher.update(item.image.transcription.as_bytes());
            hasher.update((item.image.width as u64).to_le_bytes());
            hasher.update((item.image.height as u64).to_le_bytes());
            hasher.update(&item.image.to_u8());
            for a in &item.chars {
                hasher.update([a.label as u8]);
                for v in [a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h] {
                    hasher.update(v.to_le_bytes());
                }
            }
        }
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Generate the learn and test corpora for a config.
pub fn synth_corpora(cfg: &PipelineConfig) -> Result<(Corpus, Corpus)> {
    let words = cfg.wordlist()?;
    let style = cfg.render_style();
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(cfg.corpus.seed, "corpus-learn"));
    let learn = synth_corpus(
        &words,
        cfg.corpus.per_word_learn,
        &style,
        cfg.corpus.height,
        Split::Learn,
        &mut rng,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(cfg.corpus.seed, "corpus-test"));
    let test = synth_corpus(
        &words,
        cfg.corpus.per_word_test,
        &style,
        cfg.corpus.height,
        Split::Test,
        &mut rng,
    )?;
    Ok((learn, test))
}

fn reduced64(cfg: &PipelineConfig, item: &crate::corpus::CorpusItem, pca: &PcaModel) -> Result<ReducedDescriptors> {
    let dense = extract_dense(&item.image, &cfg.features.sift_scales, cfg.features.sift_step);
    reduce_descriptors(&dense, pca)
}

// ---- training stages ------------------------------------------------------

/// Which stage of training to run; `All` runs every stage in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainStage {
    Pca,
    GmmBlock,
    Embed,
    GmmGlobal,
    Attributes,
    Subspace,
    All,
}

impl std::str::FromStr for TrainStage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pca" => Ok(TrainStage::Pca),
            "gmm-block" => Ok(TrainStage::GmmBlock),
            "embed" => Ok(TrainStage::Embed),
            "gmm-global" => Ok(TrainStage::GmmGlobal),
            "attributes" => Ok(TrainStage::Attributes),
            "subspace" => Ok(TrainStage::Subspace),
            "all" => Ok(TrainStage::All),
            _ => Err(Error::Config(format!("unknown train stage {s:?}"))),
        }
    }
}

/// Sources whose models the experiment needs.
fn resolve_sources(cfg: &PipelineConfig) -> Result<(Vec<Source>, Vec<Source>)> {
    let fv: Vec<Source> = cfg
        .experiment
        .fv_sources
        .iter()
        .map(|s| Source::parse(s))
        .collect::<Result<_>>()?;
    let attr: Vec<Source> = cfg
        .experiment
        .attribute_sources
        .iter()
        .map(|s| Source::parse(s))
        .collect::<Result<_>>()?;
    Ok((fv, attr))
}

/// Base sources (with concat expanded to its parts) that need signatures.
fn base_sources(cfg: &PipelineConfig) -> Result<Vec<Source>> {
    let (fv, attr) = resolve_sources(cfg)?;
    let mut set = std::collections::BTreeSet::new();
    for s in fv.into_iter().chain(attr) {
        match s {
            Source::Concat => {
                set.insert(Source::Supervised(first_cr(cfg)?));
                set.insert(Source::Sift);
            }
            other => {
                set.insert(other);
            }
        }
    }
    Ok(set.into_iter().collect())
}

fn first_cr(cfg: &PipelineConfig) -> Result<usize> {
    cfg.experiment
        .crs
        .first()
        .copied()
        .ok_or_else(|| Error::Config("experiment.crs must not be empty".into()))
}

/// Run one training stage against an archive (see [`TrainStage`]).
pub fn train_stage(
    cfg: &PipelineConfig,
    learn: &Corpus,
    archive: &mut ModelArchive,
    stage: TrainStage,
) -> Result<()> {
    match stage {
        TrainStage::Pca => stage_pca(cfg, learn, archive).map_err(Error::in_stage("pca")),
        TrainStage::GmmBlock => stage_gmm_block(cfg, learn, archive).map_err(Error::in_stage("gmm-block")),
        TrainStage::Embed => stage_embed(cfg, learn, archive).map_err(Error::in_stage("embed")),
        TrainStage::GmmGlobal => stage_gmm_global(cfg, learn, archive).map_err(Error::in_stage("gmm-global")),
        TrainStage::Attributes => stage_attributes(cfg, learn, archive).map_err(Error::in_stage("attributes")),
        TrainStage::Subspace => stage_subspace(cfg, learn, archive).map_err(Error::in_stage("subspace")),
        TrainStage::All => {
            for s in [
                TrainStage::Pca,
                TrainStage::GmmBlock,
                TrainStage::Embed,
                TrainStage::GmmGlobal,
                TrainStage::Attributes,
                TrainStage::Subspace,
            ] {
                train_stage(cfg, learn, archive, s)?;
            }
            Ok(())
        }
    }
}

fn load_pca(archive: &ModelArchive, name: &str) -> Result<PcaModel> {
    archive::pca_from_component(archive.component(name)?)
}

fn load_gmm(archive: &ModelArchive, name: &str) -> Result<GmmModel> {
    archive::gmm_from_component(archive.component(name)?)
}

fn load_embedding(archive: &ModelArchive, name: &str) -> Result<EmbeddingModel> {
    archive::embedding_from_component(archive.component(name)?)
}

fn stage_pca(cfg: &PipelineConfig, learn: &Corpus, archive: &mut ModelArchive) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(cfg.experiment.seed, "pca-sample"));
    let mut rows: Vec<f32> = Vec::new();
    let mut count = 0usize;
    let dim = crate::features::SIFT_DIM;
    for item in &learn.items {
        if count >= cfg.features.pca_sample_cap {
            break;
        }
        let dense = extract_dense(&item.image, &cfg.features.sift_scales, cfg.features.sift_step);
        let valid: Vec<usize> = (0..dense.len()).filter(|&i| !dense.is_flat(i)).collect();
        let take = cfg
            .features
            .pca_sample_per_image
            .min(valid.len())
            .min(cfg.features.pca_sample_cap - count);
        let picked = sample_indices(&valid, take, &mut rng);
        for &i in &picked {
            rows.extend(dense.data.row(i).iter());
        }
        count += take;
    }
    let data = Array2::from_shape_vec((count, dim), rows).expect("sample layout");
    let pca_block = fit_pca(data.view(), cfg.features.pca_dim)?;
    let pca_base = fit_pca(data.view(), cfg.features.baseline_pca_dim)?;
    archive.insert("pca_block", archive::pca_to_component(&pca_block));
    archive.insert("pca_baseline", archive::pca_to_component(&pca_base));
    Ok(())
}

fn sample_indices(pool: &[usize], take: usize, rng: &mut impl Rng) -> Vec<usize> {
    if take >= pool.len() {
        return pool.to_vec();
    }
    // partial Fisher-Yates over a copy of the pool
    let mut pool = pool.to_vec();
    for i in 0..take {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(take);
    pool
}

fn stage_gmm_block(cfg: &PipelineConfig, learn: &Corpus, archive: &mut ModelArchive) -> Result<()> {
    let pca = load_pca(archive, "pca_block")?;
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(cfg.experiment.seed, "gmm-sample"));
    let mut rows: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for item in &learn.items {
        if count >= cfg.codebook.sample_cap {
            break;
        }
        let red = reduced64(cfg, item, &pca)?;
        let all: Vec<usize> = (0..red.len()).collect();
        let take = cfg
            .codebook
            .sample_per_image
            .min(all.len())
            .min(cfg.codebook.sample_cap - count);
        for &i in &sample_indices(&all, take, &mut rng) {
            rows.extend(red.data.row(i).iter());
        }
        count += take;
    }
    let data = Array2::from_shape_vec((count, cfg.features.pca_dim), rows).expect("sample layout");
    let opts = GmmOptions {
        iters: cfg.codebook.em_iters,
        restarts: cfg.codebook.em_restarts,
        ..GmmOptions::default()
    };
    let (gmm, _) = fit_gmm_traced(
        data.view(),
        cfg.codebook.block_gaussians,
        subseed(cfg.experiment.seed, "gmm-block"),
        &opts,
    )?;
    archive.insert("gmm_block", archive::gmm_to_component(&gmm));
    Ok(())
}

fn stage_embed(cfg: &PipelineConfig, learn: &Corpus, archive: &mut ModelArchive) -> Result<()> {
    let pca = load_pca(archive, "pca_block")?;
    let gmm = load_gmm(archive, "gmm_block")?;
    let dv = 4 * fisher::cell_dim(&gmm);
    let da: Vec<usize> = cfg
        .experiment
        .crs
        .iter()
        .map(|r| r * r * crate::alphabet::ALPHABET_SIZE)
        .collect();

    let mut sxx = Array2::<f64>::zeros((dv, dv));
    let mut sx = Array1::<f64>::zeros(dv);
    let mut per_cr: Vec<(Array2<f64>, Array2<f64>, Array1<f64>)> = da
        .iter()
        .map(|&d| (Array2::zeros((dv, d)), Array2::zeros((d, d)), Array1::zeros(d)))
        .collect();
    let mut n = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(cfg.experiment.seed, "block-sampling"));
    for item in &learn.items {
        let red = reduced64(cfg, item, &pca)?;
        let blocks = supervision::sample_blocks(
            red.image_width,
            red.image_height,
            cfg.supervision.blocks_per_image,
            &cfg.supervision.block_sizes,
            &mut rng,
        )?;
        let mut x = Array2::<f64>::zeros((blocks.len(), dv));
        for (i, b) in blocks.iter().enumerate() {
            x.row_mut(i).assign(&supervision::block_fisher_vector(&red, b, &gmm)?);
        }
        sxx = sxx + x.t().dot(&x);
        for row in x.rows() {
            sx = &sx + &row;
        }
        for (ci, &r) in cfg.experiment.crs.iter().enumerate() {
            let mut y = Array2::<f64>::zeros((blocks.len(), da[ci]));
            for (i, b) in blocks.iter().enumerate() {
                let label = supervision::block_label(b, &item.chars, r)?;
                y.row_mut(i).assign(&label.y);
            }
            let (sxy, syy, sy) = &mut per_cr[ci];
            *sxy = &*sxy + &x.t().dot(&y);
            *syy = &*syy + &y.t().dot(&y);
            for row in y.rows() {
                *sy = &*sy + &row;
            }
        }
        n += blocks.len();
    }

    for (ci, &r) in cfg.experiment.crs.iter().enumerate() {
        let (sxy, syy, sy) = &per_cr[ci];
        let moments = CrossMoments {
            sxx: sxx.clone(),
            syy: syy.clone(),
            sxy: sxy.clone(),
            sx: sx.clone(),
            sy: sy.clone(),
            n,
        };
        let (emb, _) = fit_cca_pair_from_moments(
            &moments,
            cfg.embedding.k,
            cfg.embedding.eta,
            cfg.embedding.centering,
        )?;
        archive.insert(
            &format!("embedding_sup_cr{r}"),
            archive::embedding_to_component(&emb, "cca"),
        );
    }
    let unsup = fit_pca_embedding(&sxx, &sx, n, cfg.embedding.k)?;
    archive.insert("embedding_unsup", archive::embedding_to_component(&unsup, "pca"));
    Ok(())
}

/// Models required to compute signatures, loaded once from an archive.
pub struct SignatureModels {
    pub pca_block: PcaModel,
    pub pca_baseline: PcaModel,
    pub gmm_block: GmmModel,
    pub embeddings: BTreeMap<String, EmbeddingModel>,
    pub global_gmms: BTreeMap<String, GmmModel>,
}

impl SignatureModels {
    pub fn load(archive: &ModelArchive, cfg: &PipelineConfig) -> Result<Self> {
        let mut embeddings = BTreeMap::new();
        let mut global_gmms = BTreeMap::new();
        for source in base_sources(cfg)? {
            match source {
                Source::Supervised(r) => {
                    let name = format!("embedding_sup_cr{r}");
                    embeddings.insert(source.key(), load_embedding(archive, &name)?);
                }
                Source::Unsupervised => {
                    embeddings.insert(source.key(), load_embedding(archive, "embedding_unsup")?);
                }
                Source::Sift | Source::Concat => {}
            }
            let gname = format!("gmm_global_{}", source.key());
            if archive.has(&gname) {
                global_gmms.insert(source.key(), load_gmm(archive, &gname)?);
            }
        }
        Ok(SignatureModels {
            pca_block: load_pca(archive, "pca_block")?,
            pca_baseline: load_pca(archive, "pca_baseline")?,
            gmm_block: load_gmm(archive, "gmm_block")?,
            embeddings,
            global_gmms,
        })
    }
}

/// Mid-level features per requested embedding source for one image, plus
/// the reduced baseline descriptors.
fn image_features(
    cfg: &PipelineConfig,
    item: &crate::corpus::CorpusItem,
    models: &SignatureModels,
    sources: &[Source],
) -> Result<(BTreeMap<String, Vec<MidLevelFeature>>, Option<ReducedDescriptors>)> {
    let dense = extract_dense(&item.image, &cfg.features.sift_scales, cfg.features.sift_step);
    let mut by_key = BTreeMap::new();
    let emb_sources: Vec<&Source> = sources
        .iter()
        .filter(|s| matches!(s, Source::Supervised(_) | Source::Unsupervised))
        .collect();
    if !emb_sources.is_empty() {
        let red64 = reduce_descriptors(&dense, &models.pca_block)?;
        let embs: Vec<&EmbeddingModel> = emb_sources
            .iter()
            .map(|s| &models.embeddings[&s.key()])
            .collect();
        let grids = build_grids_from(&red64, &models.gmm_block, &embs, cfg.midlevel.cell, &item.image.id)?;
        for (src, (grid, _)) in emb_sources.iter().zip(grids) {
            let feats = extract_fast(&grid, &cfg.midlevel.block_sizes, cfg.midlevel.step)?;
            by_key.insert(src.key(), feats);
        }
    }
    let baseline = if sources.iter().any(|s| matches!(s, Source::Sift)) {
        Some(reduce_descriptors(&dense, &models.pca_baseline)?)
    } else {
        None
    };
    Ok((by_key, baseline))
}

fn stage_gmm_global(cfg: &PipelineConfig, learn: &Corpus, archive: &mut ModelArchive) -> Result<()> {
    let models = SignatureModels::load(archive, cfg)?;
    let sources = base_sources(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(cfg.experiment.seed, "global-sample"));
    let mut samples: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut dims: BTreeMap<String, usize> = BTreeMap::new();
    for item in &learn.items {
        let (feats, baseline) = image_features(cfg, item, &models, &sources)?;
        let (w, h) = (item.image.width as f64, item.image.height as f64);
        for (key, fs) in &feats {
            let dim = fs.first().map_or(cfg.embedding.k + 2, |f| f.v.len() + 2);
            dims.insert(key.clone(), dim);
            let count = counts.entry(key.clone()).or_insert(0);
            if *count >= cfg.global.sample_cap {
                continue;
            }
            let idx: Vec<usize> = (0..fs.len()).collect();
            let take = cfg
                .global
                .sample_per_image
                .min(idx.len())
                .min(cfg.global.sample_cap - *count);
            let rows = samples.entry(key.clone()).or_default();
            for &i in &sample_indices(&idx, take, &mut rng) {
                let f = &fs[i];
                rows.extend(f.v.iter());
                rows.push((f.block.x as f64 + f.block.w as f64 / 2.0) / w);
                rows.push((f.block.y as f64 + f.block.h as f64 / 2.0) / h);
            }
            *count += take;
        }
        if let Some(red) = baseline {
            let key = Source::Sift.key();
            let dim = red.data.ncols() + 2;
            dims.insert(key.clone(), dim);
            let count = counts.entry(key.clone()).or_insert(0);
            if *count < cfg.global.sample_cap {
                let idx: Vec<usize> = (0..red.len()).collect();
                let take = cfg
                    .global
                    .sample_per_image
                    .min(idx.len())
                    .min(cfg.global.sample_cap - *count);
                let rows = samples.entry(key.clone()).or_default();
                for &i in &sample_indices(&idx, take, &mut rng) {
                    rows.extend(red.data.row(i).iter());
                    rows.push(red.centers[i].0 as f64 / w);
                    rows.push(red.centers[i].1 as f64 / h);
                }
                *count += take;
            }
        }
    }
    for (key, rows) in samples {
        let dim = dims[&key];
        let n = counts[&key];
        let data = Array2::from_shape_vec((n, dim), rows).expect("sample layout");
        let opts = GmmOptions {
            iters: cfg.global.em_iters,
            restarts: cfg.global.em_restarts,
            ..GmmOptions::default()
        };
        let (gmm, _) = fit_gmm_traced(
            data.view(),
            cfg.global.gaussians,
            subseed(cfg.experiment.seed, &format!("gmm-global-{key}")),
            &opts,
        )?;
        archive.insert(&format!("gmm_global_{key}"), archive::gmm_to_component(&gmm));
    }
    Ok(())
}

/// Global signatures for a whole corpus, one matrix per requested source.
pub fn compute_signatures(
    cfg: &PipelineConfig,
    corpus: &Corpus,
    models: &SignatureModels,
    sources: &[Source],
) -> Result<BTreeMap<String, Array2<f64>>> {
    // concat is assembled from its parts afterwards
    let mut base: Vec<Source> = Vec::new();
    for s in sources {
        match s {
            Source::Concat => {
                for p in [Source::Supervised(first_cr(cfg)?), Source::Sift] {
                    if !base.contains(&p) {
                        base.push(p);
                    }
                }
            }
            other => {
                if !base.contains(other) {
                    base.push(*other);
                }
            }
        }
    }
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut dims: BTreeMap<String, usize> = BTreeMap::new();
    for item in &corpus.items {
        let (feats, baseline) = image_features(cfg, item, models, &base)?;
        for src in &base {
            let key = src.key();
            let sig = match src {
                Source::Sift => {
                    let red = baseline.as_ref().expect("baseline requested");
                    let gmm = models
                        .global_gmms
                        .get(&key)
                        .ok_or_else(|| Error::Archive(format!("missing gmm_global_{key}")))?;
                    wordrep::baseline_signature_from(red, gmm)?
                }
                _ => {
                    let gmm = models
                        .global_gmms
                        .get(&key)
                        .ok_or_else(|| Error::Archive(format!("missing gmm_global_{key}")))?;
                    wordrep::global_signature(
                        &feats[&key],
                        gmm,
                        item.image.width,
                        item.image.height,
                        src.signature_source(),
                    )?
                }
            };
            dims.insert(key.clone(), sig.v.len());
            out.entry(key).or_default().extend(sig.v.iter());
        }
    }
    let n = corpus.len();
    let mut result: BTreeMap<String, Array2<f64>> = out
        .into_iter()
        .map(|(key, rows)| {
            let dim = dims[&key];
            (key.clone(), Array2::from_shape_vec((n, dim), rows).expect("signature layout"))
        })
        .collect();
    // assemble concat if requested
    if sources.iter().any(|s| matches!(s, Source::Concat)) {
        let a = result[&Source::Supervised(first_cr(cfg)?).key()].clone();
        let b = result[&Source::Sift.key()].clone();
        let mut c = Array2::<f64>::zeros((n, a.ncols() + b.ncols()));
        for i in 0..n {
            let sig = wordrep::concat_signatures(
                &WordSignature {
                    v: a.row(i).to_owned(),
                    source: SignatureSource::SupervisedMidlevel,
                },
                &WordSignature {
                    v: b.row(i).to_owned(),
                    source: SignatureSource::SiftBaseline,
                },
            );
            c.row_mut(i).assign(&sig.v);
        }
        result.insert(Source::Concat.key(), c);
    }
    Ok(result)
}

fn transcriptions(corpus: &Corpus) -> Vec<String> {
    corpus.items.iter().map(|i| i.image.transcription.clone()).collect()
}

fn ids(corpus: &Corpus) -> Vec<String> {
    corpus.items.iter().map(|i| i.image.id.clone()).collect()
}

fn stage_attributes(cfg: &PipelineConfig, learn: &Corpus, archive: &mut ModelArchive) -> Result<()> {
    let models = SignatureModels::load(archive, cfg)?;
    let (_, attr_sources) = resolve_sources(cfg)?;
    if attr_sources.is_empty() {
        return Ok(());
    }
    let sigs = compute_signatures(cfg, learn, &models, &attr_sources)?;
    let trans = transcriptions(learn);
    for source in &attr_sources {
        let key = source.key();
        let matrix = &sigs[&key];
        let model = wordrep::fit_attributes(
            matrix.view(),
            &trans,
            &cfg.attributes.levels,
            cfg.attributes.lambda,
            cfg.attributes.case_insensitive,
        )?;
        archive.insert(&format!("attributes_{key}"), archive::attributes_to_component(&model));
        // cache the learn-split attribute scores for the subspace stage
        let quantized = archive::attributes_from_component(
            archive.component(&format!("attributes_{key}"))?,
        )?;
        let scores = wordrep::attribute_scores_batch(matrix.view(), &quantized)?;
        let mut cache = Component::new("score-cache");
        cache.put_tensor_f64_2d("scores", &scores);
        archive.insert(&format!("scores_{key}"), cache);
    }
    Ok(())
}

fn stage_subspace(cfg: &PipelineConfig, learn: &Corpus, archive: &mut ModelArchive) -> Result<()> {
    let (_, attr_sources) = resolve_sources(cfg)?;
    if attr_sources.is_empty() {
        return Ok(());
    }
    let trans = transcriptions(learn);
    let na = wordrep::attribute_count(&cfg.attributes.levels);
    let mut strembs = Array2::<f64>::zeros((trans.len(), na));
    for (i, t) in trans.iter().enumerate() {
        strembs.row_mut(i).assign(&wordrep::string_embedding(
            t,
            &cfg.attributes.levels,
            cfg.attributes.case_insensitive,
        )?);
    }
    for source in &attr_sources {
        let key = source.key();
        let cache_name = format!("scores_{key}");
        let scores = if archive.has(&cache_name) {
            archive.component(&cache_name)?.tensor_2d("scores")?
        } else {
            // recompute from signatures when invoked standalone
            let models = SignatureModels::load(archive, cfg)?;
            let sigs = compute_signatures(cfg, learn, &models, std::slice::from_ref(source))?;
            let attr = archive::attributes_from_component(
                archive.component(&format!("attributes_{key}"))?,
            )?;
            wordrep::attribute_scores_batch(sigs[&key].view(), &attr)?
        };
        // desk-scale corpora cannot always support the configured output
        // dimensionality (string-side rank is bounded by the number of
        // distinct words); the fit clamps and records the effective size
        let (subspace, _effective) = wordrep::fit_common_subspace_capped(
            scores.view(),
            strembs.view(),
            cfg.subspace.out_dim,
            cfg.subspace.eta,
            &cfg.attributes.levels,
            cfg.attributes.case_insensitive,
        )?;
        archive.insert(&format!("subspace_{key}"), archive::subspace_to_component(&subspace));
    }
    Ok(())
}

// ---- evaluation -----------------------------------------------------------

/// Evaluate all configured rows on the test split using archived models.
pub fn evaluate(
    cfg: &PipelineConfig,
    test: &Corpus,
    archive: &ModelArchive,
    learn_fraction: f64,
) -> Result<Vec<ReportRow>> {
    let models = SignatureModels::load(archive, cfg)?;
    let (fv_sources, attr_sources) = resolve_sources(cfg)?;
    let mut all: Vec<Source> = fv_sources.clone();
    for s in &attr_sources {
        if !all.contains(s) {
            all.push(*s);
        }
    }
    let sigs = compute_signatures(cfg, test, &models, &all).map_err(Error::in_stage("signatures"))?;
    let test_ids = ids(test);
    let test_trans = transcriptions(test);
    let mut rows = Vec::new();

    for source in &fv_sources {
        let key = source.key();
        let metrics = eval::qbe_eval(sigs[&key].view(), &test_ids, &test_trans)
            .map_err(Error::in_stage("qbe-fv"))?;
        rows.push(ReportRow {
            learn_fraction,
            source: source.label(),
            cr: source.cr(),
            space: "fv".into(),
            qbe_map: metrics.map,
            qbe_p1: metrics.p_at_1,
            qbe_retained: metrics.retained_queries,
            qbs_map: None,
            recognition_p1: None,
        });
    }

    let lexicon: Vec<String> = cfg.wordlist()?;
    for source in &attr_sources {
        let key = source.key();
        let attr = archive::attributes_from_component(archive.component(&format!("attributes_{key}"))?)?;
        let subspace = archive::subspace_from_component(archive.component(&format!("subspace_{key}"))?)?;
        let scores = wordrep::attribute_scores_batch(sigs[&key].view(), &attr)?;
        let mut emb = Array2::<f64>::zeros((scores.nrows(), subspace.out_dim()));
        for i in 0..scores.nrows() {
            emb.row_mut(i).assign(&wordrep::embed_image(scores.row(i), &subspace)?);
        }
        let qbe = eval::qbe_eval(emb.view(), &test_ids, &test_trans).map_err(Error::in_stage("qbe-subspace"))?;
        let queries: Vec<(String, Array1<f64>)> = {
            let mut seen = std::collections::BTreeSet::new();
            let mut q = Vec::new();
            for t in &test_trans {
                let folded = crate::alphabet::fold_case(t);
                if seen.insert(folded.clone()) {
                    q.push((t.clone(), wordrep::embed_string(t, &subspace)?));
                }
            }
            q
        };
        let qbs = eval::qbs_eval(&queries, emb.view(), &test_ids, &test_trans)
            .map_err(Error::in_stage("qbs"))?;
        let lexicons: Vec<Vec<String>> = vec![lexicon.clone(); test.len()];
        let recog = eval::recognition_eval(emb.view(), &test_trans, &lexicons, |s| {
            wordrep::embed_string(s, &subspace)
        })
        .map_err(Error::in_stage("recognition"))?;
        rows.push(ReportRow {
            learn_fraction,
            source: source.label(),
            cr: source.cr(),
            space: "subspace".into(),
            qbe_map: qbe.map,
            qbe_p1: qbe.p_at_1,
            qbe_retained: qbe.retained_queries,
            qbs_map: Some(qbs.map),
            recognition_p1: Some(recog.p_at_1),
        });
    }
    Ok(rows)
}

/// Keep the first `ceil(fraction * per_word)` instances of every word.
fn learn_subset(learn: &Corpus, per_word: usize, fraction: f64) -> Corpus {
    if fraction >= 1.0 {
        return learn.clone();
    }
    let keep = ((fraction * per_word as f64).ceil() as usize).clamp(1, per_word);
    let mut subset = Corpus::new(learn.split);
    for (i, item) in learn.items.iter().enumerate() {
        if i % per_word < keep {
            subset.items.push(item.clone());
        }
    }
    subset
}

/// Train everything and evaluate, returning the report and the archive of
/// all trained models.
pub fn run_experiment(cfg: &PipelineConfig) -> Result<(Report, ModelArchive)> {
    let t0 = Instant::now();
    let mut timings: BTreeMap<String, u64> = BTreeMap::new();
    let (learn, test) = synth_corpora(cfg).map_err(Error::in_stage("corpus"))?;
    timings.insert("corpus".into(), t0.elapsed().as_millis() as u64);

    let hash = corpus_hash(&[&learn, &test]);
    let mut rows = Vec::new();
    let mut final_archive = ModelArchive::new();
    for &fraction in &cfg.experiment.learn_fractions {
        let sub = learn_subset(&learn, cfg.corpus.per_word_learn, fraction);
        let mut archive = ModelArchive::new();
        let t = Instant::now();
        train_stage(cfg, &sub, &mut archive, TrainStage::All)?;
        timings.insert(format!("train[{fraction}]"), t.elapsed().as_millis() as u64);
        let t = Instant::now();
        rows.extend(evaluate(cfg, &test, &archive, fraction)?);
        timings.insert(format!("eval[{fraction}]"), t.elapsed().as_millis() as u64);
        final_archive = archive;
    }

    let report = Report {
        schema_version: REPORT_SCHEMA_VERSION,
        config: cfg.clone(),
        corpus: CorpusSummary {
            hash,
            words: cfg.wordlist()?.len(),
            learn_images: learn.len(),
            test_images: test.len(),
        },
        rows,
        timings_ms: timings,
    };
    Ok((report, final_archive))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn source_parsing_and_keys() {
        assert_eq!(Source::parse("supervised-cr4").unwrap(), Source::Supervised(4));
        assert_eq!(Source::parse("supervised-cr1").unwrap().key(), "sup_cr1");
        assert_eq!(Source::parse("unsupervised").unwrap(), Source::Unsupervised);
        assert_eq!(Source::parse("sift").unwrap(), Source::Sift);
        assert_eq!(Source::parse("concat").unwrap(), Source::Concat);
        assert!(Source::parse("bogus").is_err());
        assert!(Source::parse("supervised-cr0").is_err());
    }

    #[test]
    fn subseed_is_deterministic_and_tag_sensitive() {
        assert_eq!(subseed(1, "a"), subseed(1, "a"));
        assert_ne!(subseed(1, "a"), subseed(1, "b"));
        assert_ne!(subseed(1, "a"), subseed(2, "a"));
    }

    #[test]
    fn learn_subset_keeps_per_word_prefix() {
        let cfg = {
            let mut c = PipelineConfig::default();
            c.corpus.words = 3;
            c.corpus.per_word_learn = 4;
            c
        };
        let words = cfg.wordlist().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let learn = synth_corpus(
            &words,
            4,
            &cfg.render_style(),
            60,
            Split::Learn,
            &mut rng,
        )
        .unwrap();
        let half = learn_subset(&learn, 4, 0.5);
        assert_eq!(half.len(), 6); // 2 of 4 per word
        let full = learn_subset(&learn, 4, 1.0);
        assert_eq!(full.len(), 12);
    }

    #[test]
    fn report_schema_golden() {
        // fixture report with pinned values; the serialized field layout is
        // the stable contract
        let mut cfg = PipelineConfig::default();
        cfg.corpus.words = 2;
        let report = Report {
            schema_version: REPORT_SCHEMA_VERSION,
            config: cfg,
            corpus: CorpusSummary {
                hash: "abc123".into(),
                words: 2,
                learn_images: 4,
                test_images: 2,
            },
            rows: vec![ReportRow {
                learn_fraction: 1.0,
                source: "supervised-cr4".into(),
                cr: Some(4),
                space: "fv".into(),
                qbe_map: 0.75,
                qbe_p1: 1.0,
                qbe_retained: 2,
                qbs_map: None,
                recognition_p1: Some(0.5),
            }],
            timings_ms: BTreeMap::from([("train".to_string(), 1234u64)]),
        };
        let json = report.to_json();
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(value["schema_version"], 1);
        assert_eq!(value["rows"][0]["source"], "supervised-cr4");
        assert_eq!(value["rows"][0]["qbs_map"], serde_json::Value::Null);
        assert_eq!(value["rows"][0]["recognition_p1"], 0.5);
        assert_eq!(value["config"]["embedding"]["k"], 62);
        // golden key order of a row (schema stability)
        let row_json = serde_json::to_string(&report.rows[0]).unwrap();
        assert_eq!(
            row_json,
            r#"{"learn_fraction":1.0,"source":"supervised-cr4","cr":4,"space":"fv","qbe_map":0.75,"qbe_p1":1.0,"qbe_retained":2,"qbs_map":null,"recognition_p1":0.5}"#
        );
        let table = report.human_table();
        assert!(table.contains("supervised-cr4"));
        assert!(table.contains("0.7500"));
    }
}
