//! Resolved pipeline configuration. Defaults follow the reference setup:
//! 120-px-high images, SIFT at 6 scales projected to 64 dims, 8-Gaussian
//! block FVs with a 2x2 pyramid (D_v = 4096), 150 sampled blocks per
//! training image, CCA with eta = 1e-4 and K = 62, fast extraction with
//! cell size 4 at 5 block sizes, a 16-Gaussian 2x6-pyramid global FV
//! (24,576 dims) and a 96-dim common subspace.
//!
//! Configs are TOML files; every field is optional and falls back to the
//! default, and every run embeds its fully resolved config in the report.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    /// Number of distinct words (taken from the built-in list unless
    /// `wordlist` is given).
    pub words: usize,
    pub per_word_learn: usize,
    pub per_word_test: usize,
    /// Optional explicit wordlist; overrides `words`.
    pub wordlist: Option<Vec<String>>,
    pub height: usize,
    pub seed: u64,
    pub noise_sigma_max: f32,
    pub scale_jitter: f32,
    pub baseline_jitter: f32,
    pub cap_height: f32,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            words: 50,
            per_word_learn: 5,
            per_word_test: 3,
            wordlist: None,
            height: 120,
            seed: 7,
            noise_sigma_max: 0.10,
            scale_jitter: 0.10,
            baseline_jitter: 2.0,
            cap_height: 64.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FeaturesConfig {
    pub sift_scales: Vec<usize>,
    pub sift_step: usize,
    /// PCA dimension of block-path descriptors.
    pub pca_dim: usize,
    /// PCA dimension of the SIFT baseline (matches the mid-level K).
    pub baseline_pca_dim: usize,
    /// Descriptor subsample cap for PCA fitting.
    pub pca_sample_cap: usize,
    pub pca_sample_per_image: usize,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        FeaturesConfig {
            sift_scales: vec![12, 16, 24, 32, 40, 48],
            sift_step: 2,
            pca_dim: 64,
            baseline_pca_dim: 62,
            pca_sample_cap: 500_000,
            pca_sample_per_image: 1200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CodebookConfig {
    pub block_gaussians: usize,
    pub em_iters: usize,
    pub em_restarts: usize,
    /// Descriptor subsample cap for GMM fitting.
    pub sample_cap: usize,
    pub sample_per_image: usize,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        CodebookConfig {
            block_gaussians: 8,
            em_iters: 100,
            em_restarts: 3,
            sample_cap: 500_000,
            sample_per_image: 800,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SupervisionConfig {
    pub blocks_per_image: usize,
    pub block_sizes: Vec<usize>,
}

impl Default for SupervisionConfig {
    fn default() -> Self {
        SupervisionConfig {
            blocks_per_image: 150,
            block_sizes: vec![16, 24, 32, 40, 48],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub eta: f64,
    pub k: usize,
    /// Mean-center X and Y before CCA (the literal learning algorithm runs
    /// uncentered; both are supported and recorded in the model).
    pub centering: bool,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            eta: 1e-4,
            k: 62,
            centering: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MidlevelConfig {
    pub block_sizes: Vec<usize>,
    pub step: usize,
    pub cell: usize,
}

impl Default for MidlevelConfig {
    fn default() -> Self {
        MidlevelConfig {
            block_sizes: vec![16, 24, 32, 40, 48],
            step: 4,
            cell: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GlobalConfig {
    pub gaussians: usize,
    /// Spatial pyramid as "RxC".
    pub pyramid: String,
    pub em_iters: usize,
    pub em_restarts: usize,
    pub sample_cap: usize,
    pub sample_per_image: usize,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        GlobalConfig {
            gaussians: 16,
            pyramid: "2x6".into(),
            em_iters: 100,
            em_restarts: 2,
            sample_cap: 200_000,
            sample_per_image: 500,
        }
    }
}

impl GlobalConfig {
    pub fn pyramid_grid(&self) -> Result<(usize, usize)> {
        parse_pyramid(&self.pyramid)
    }
}

pub fn parse_pyramid(s: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    if parts.len() == 2 {
        if let (Ok(r), Ok(c)) = (parts[0].trim().parse(), parts[1].trim().parse()) {
            if r > 0 && c > 0 {
                return Ok((r, c));
            }
        }
    }
    Err(Error::Config(format!("bad pyramid spec {s:?}, expected e.g. \"2x6\"")))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributesConfig {
    pub levels: Vec<usize>,
    pub lambda: f64,
    #[serde(default = "default_true")]
    pub case_insensitive: bool,
}

impl Default for AttributesConfig {
    fn default() -> Self {
        AttributesConfig {
            levels: vec![1, 2, 3, 4],
            lambda: 1.0,
            case_insensitive: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SubspaceConfig {
    pub out_dim: usize,
    pub eta: f64,
}

impl Default for SubspaceConfig {
    fn default() -> Self {
        SubspaceConfig {
            out_dim: 96,
            eta: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Character-region splits to train supervised embeddings for.
    pub crs: Vec<usize>,
    /// Raw-FV sources evaluated with QBE.
    pub fv_sources: Vec<String>,
    /// Sources that get the attributes + common-subspace layer.
    pub attribute_sources: Vec<String>,
    /// Fractions of the learn split to train on (training-size sweep).
    pub learn_fractions: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            crs: vec![4, 1],
            fv_sources: vec![
                "supervised-cr4".into(),
                "supervised-cr1".into(),
                "unsupervised".into(),
                "sift".into(),
            ],
            attribute_sources: vec!["supervised-cr4".into(), "sift".into(), "concat".into()],
            learn_fractions: vec![1.0],
        }
    }
}

/// The full resolved configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub corpus: CorpusConfig,
    pub features: FeaturesConfig,
    pub codebook: CodebookConfig,
    pub supervision: SupervisionConfig,
    pub embedding: EmbeddingConfig,
    pub midlevel: MidlevelConfig,
    pub global: GlobalConfig,
    pub attributes: AttributesConfig,
    pub subspace: SubspaceConfig,
    pub experiment: ExperimentConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Effective wordlist for synthetic corpora.
    pub fn wordlist(&self) -> Result<Vec<String>> {
        match &self.corpus.wordlist {
            Some(w) if !w.is_empty() => Ok(w.clone()),
            Some(_) => Err(Error::Config("empty wordlist".into())),
            None => {
                if self.corpus.words == 0 {
                    return Err(Error::Config("corpus.words must be >= 1".into()));
                }
                if self.corpus.words > crate::corpus::DEFAULT_WORDLIST.len() {
                    return Err(Error::Config(format!(
                        "corpus.words = {} exceeds the built-in list ({} words); provide corpus.wordlist",
                        self.corpus.words,
                        crate::corpus::DEFAULT_WORDLIST.len()
                    )));
                }
                Ok(crate::corpus::DEFAULT_WORDLIST[..self.corpus.words]
                    .iter()
                    .map(|s| s.to_string())
                    .collect())
            }
        }
    }

    pub fn render_style(&self) -> crate::corpus::RenderStyle {
        crate::corpus::RenderStyle {
            cap_height: self.corpus.cap_height,
            noise_sigma_max: self.corpus.noise_sigma_max,
            scale_jitter: self.corpus.scale_jitter,
            baseline_jitter: self.corpus.baseline_jitter,
            ..crate::corpus::RenderStyle::default()
        }
    }

    pub fn midlevel_params(&self) -> crate::midlevel::MidlevelParams {
        crate::midlevel::MidlevelParams {
            sift_scales: self.features.sift_scales.clone(),
            sift_step: self.features.sift_step,
            block_sizes: self.midlevel.block_sizes.clone(),
            block_step: self.midlevel.step,
            cell: self.midlevel.cell,
        }
    }
}
