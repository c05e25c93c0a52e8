//! `midword`: synthesize annotated word-image corpora, train the mid-level
//! pipeline stage by stage, extract features (naive or fast), evaluate
//! retrieval/recognition, verify the algebraic properties and benchmark
//! extraction.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use midword_core::archive::ModelArchive;
use midword_core::config::PipelineConfig;
use midword_core::corpus::{self, ImageFormat, Split};
use midword_core::experiment::{self, Source, TrainStage};
use midword_core::{eval, midlevel, verify, wordrep};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(name = "midword", version, about = "Supervised mid-level features for word image retrieval and recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config file plus the common hyperparameter overrides.
#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// TOML config file; unset fields fall back to defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Blocks sampled per training image.
    #[arg(long)]
    blocks_per_image: Option<usize>,
    /// CCA regularization.
    #[arg(long)]
    eta: Option<f64>,
    /// Character-region split per side (label granularity).
    #[arg(long)]
    cr: Option<usize>,
    /// Mid-level output dimensionality K.
    #[arg(long)]
    k: Option<usize>,
    /// Block extraction step in pixels.
    #[arg(long)]
    step: Option<usize>,
    /// Comma-separated block sizes.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// Gaussians of the global-FV vocabulary.
    #[arg(long)]
    global_gaussians: Option<usize>,
    /// Global spatial pyramid, e.g. 2x6.
    #[arg(long)]
    pyramid: Option<String>,
    /// Common-subspace output dimensionality.
    #[arg(long)]
    out_dim: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                PipelineConfig::from_toml(&text)?
            }
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.blocks_per_image {
            cfg.supervision.blocks_per_image = v;
        }
        if let Some(v) = self.eta {
            cfg.embedding.eta = v;
        }
        if let Some(v) = self.cr {
            cfg.experiment.crs = vec![v];
            cfg.experiment.fv_sources = vec![
                format!("supervised-cr{v}"),
                "unsupervised".into(),
                "sift".into(),
            ];
            cfg.experiment.attribute_sources =
                vec![format!("supervised-cr{v}"), "sift".into(), "concat".into()];
        }
        if let Some(v) = self.k {
            cfg.embedding.k = v;
        }
        if let Some(v) = self.step {
            cfg.midlevel.step = v;
        }
        if let Some(v) = &self.sizes {
            cfg.midlevel.block_sizes = v.clone();
            cfg.supervision.block_sizes = v.clone();
        }
        if let Some(v) = self.global_gaussians {
            cfg.global.gaussians = v;
        }
        if let Some(v) = &self.pyramid {
            cfg.global.pyramid = v.clone();
        }
        if let Some(v) = self.out_dim {
            cfg.subspace.out_dim = v;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic annotated corpus (learn/ and test/ splits).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        words: usize,
        #[arg(long, default_value_t = 5)]
        per_word_learn: usize,
        #[arg(long, default_value_t = 3)]
        per_word_test: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 120)]
        height: usize,
        /// Optional newline-separated wordlist file.
        #[arg(long)]
        wordlist: Option<PathBuf>,
        /// Write PNG instead of PGM image files.
        #[arg(long)]
        png: bool,
    },
    /// Train one pipeline stage (or all) on a learn corpus into an archive.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        archive: PathBuf,
        /// pca | gmm-block | embed | gmm-global | attributes | subspace | all
        #[arg(long, default_value = "all")]
        stage: String,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Extract mid-level features of one image (JSON lines on stdout or --out).
    Extract {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// fast | naive
        #[arg(long, default_value = "fast")]
        mode: String,
        /// Embedding source: supervised-cr<R> or unsupervised.
        #[arg(long, default_value = "supervised-cr4")]
        source: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate a trained archive on a corpus.
    Eval {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// qbe | qbs | recog
        #[arg(long, default_value = "qbe")]
        task: String,
        /// fv | subspace
        #[arg(long, default_value = "subspace")]
        space: String,
        #[arg(long, default_value = "supervised-cr4")]
        source: String,
        /// Write the JSON report here (stdout otherwise).
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Property-test harness: fast-vs-naive, additivity, norm absorption,
    /// rearrangement and CCA identities.
    Verify {
        #[arg(long, default_value_t = 6)]
        images: usize,
        #[arg(long, default_value_t = 300)]
        trials: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Wall-clock benchmark of grid build + fast extraction.
    Bench {
        #[arg(long)]
        archive: PathBuf,
        /// Word to render for the benchmark image.
        #[arg(long, default_value = "benchmark")]
        text: String,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long, default_value = "supervised-cr4")]
        source: String,
        /// Also time the naive path once for comparison.
        #[arg(long)]
        naive: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Full experiment: synthesize, train all stages, evaluate, report.
    Experiment {
        /// Output directory for report.json, report.txt and the archive.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn load_wordlist(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    let words: Vec<String> = text
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect();
    if words.is_empty() {
        bail!("wordlist {} is empty", path.display());
    }
    Ok(words)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Synth {
            out,
            words,
            per_word_learn,
            per_word_test,
            seed,
            height,
            wordlist,
            png,
        } => {
            let mut cfg = PipelineConfig::default();
            cfg.corpus.words = words;
            cfg.corpus.per_word_learn = per_word_learn;
            cfg.corpus.per_word_test = per_word_test;
            cfg.corpus.seed = seed;
            cfg.corpus.height = height;
            if let Some(path) = wordlist {
                cfg.corpus.wordlist = Some(load_wordlist(&path)?);
            }
            let (learn, test) = experiment::synth_corpora(&cfg)?;
            let format = if png { ImageFormat::Png } else { ImageFormat::Pgm };
            corpus::save_corpus(&learn, &out.join("learn"), format)?;
            corpus::save_corpus(&test, &out.join("test"), format)?;
            println!(
                "wrote {} learn and {} test images under {}",
                learn.len(),
                test.len(),
                out.display()
            );
        }
        Command::Train {
            corpus: corpus_dir,
            archive: archive_dir,
            stage,
            config,
        } => {
            let cfg = config.resolve()?;
            let learn = corpus::load_corpus(&corpus_dir)?;
            if learn.split != Split::Learn {
                eprintln!("note: training on a corpus tagged {:?}", learn.split.to_string());
            }
            let mut archive = if archive_dir.join("manifest.json").exists() {
                ModelArchive::load(&archive_dir)?
            } else {
                ModelArchive::new()
            };
            let stage: TrainStage = stage.parse()?;
            let t = Instant::now();
            experiment::train_stage(&cfg, &learn, &mut archive, stage)?;
            archive.save(&archive_dir)?;
            println!(
                "stage {stage:?} done in {:.1}s; archive now has {} components",
                t.elapsed().as_secs_f64(),
                archive.components.len()
            );
        }
        Command::Extract {
            archive: archive_dir,
            image,
            mode,
            source,
            out,
            config,
        } => {
            let cfg = config.resolve()?;
            let archive = ModelArchive::load(&archive_dir)?;
            let img = corpus::load_word_image(&image)?;
            let source = Source::parse(&source)?;
            let models = experiment::SignatureModels::load(&archive, &cfg)?;
            let emb = models
                .embeddings
                .get(&source.key())
                .with_context(|| format!("archive has no embedding for source {}", source.label()))?;
            let params = cfg.midlevel_params();
            let features = match mode.as_str() {
                "naive" => midlevel::extract_naive(&img, &models.pca_block, &models.gmm_block, emb, &params)?,
                "fast" => {
                    let grid = midlevel::build_integral_grid(
                        &img,
                        &models.pca_block,
                        &models.gmm_block,
                        emb,
                        &params,
                    )?;
                    midlevel::extract_fast(&grid, &params.block_sizes, params.block_step)?
                }
                other => bail!("unknown mode {other:?} (naive|fast)"),
            };
            let mut buf = String::new();
            for f in &features {
                let record = serde_json::json!({
                    "x": f.block.x,
                    "y": f.block.y,
                    "size": f.block.w,
                    "v": f.v.iter().copied().collect::<Vec<f64>>(),
                });
                buf.push_str(&serde_json::to_string(&record)?);
                buf.push('\n');
            }
            match out {
                Some(path) => std::fs::write(&path, buf)?,
                None => print!("{buf}"),
            }
            eprintln!("extracted {} features ({mode})", features.len());
        }
        Command::Eval {
            archive: archive_dir,
            corpus: corpus_dir,
            task,
            space,
            source,
            report,
            config,
        } => {
            let cfg = config.resolve()?;
            let archive = ModelArchive::load(&archive_dir)?;
            let test = corpus::load_corpus(&corpus_dir)?;
            let source = Source::parse(&source)?;
            let models = experiment::SignatureModels::load(&archive, &cfg)?;
            let sigs = experiment::compute_signatures(&cfg, &test, &models, std::slice::from_ref(&source))?;
            let sig = &sigs[&source.key()];
            let ids: Vec<String> = test.items.iter().map(|i| i.image.id.clone()).collect();
            let trans: Vec<String> = test.items.iter().map(|i| i.image.transcription.clone()).collect();

            let value = match (space.as_str(), task.as_str()) {
                ("fv", "qbe") => {
                    let m = eval::qbe_eval(sig.view(), &ids, &trans)?;
                    serde_json::to_value(m)?
                }
                ("subspace", task) => {
                    let attr = midword_core::archive::attributes_from_component(
                        archive.component(&format!("attributes_{}", source.key()))?,
                    )?;
                    let subspace = midword_core::archive::subspace_from_component(
                        archive.component(&format!("subspace_{}", source.key()))?,
                    )?;
                    let scores = wordrep::attribute_scores_batch(sig.view(), &attr)?;
                    let mut emb = ndarray::Array2::<f64>::zeros((scores.nrows(), subspace.out_dim()));
                    for i in 0..scores.nrows() {
                        emb.row_mut(i).assign(&wordrep::embed_image(scores.row(i), &subspace)?);
                    }
                    match task {
                        "qbe" => serde_json::to_value(eval::qbe_eval(emb.view(), &ids, &trans)?)?,
                        "qbs" => {
                            let mut queries = Vec::new();
                            let mut seen = std::collections::BTreeSet::new();
                            for t in &trans {
                                if seen.insert(midword_core::alphabet::fold_case(t)) {
                                    queries.push((t.clone(), wordrep::embed_string(t, &subspace)?));
                                }
                            }
                            serde_json::to_value(eval::qbs_eval(&queries, emb.view(), &ids, &trans)?)?
                        }
                        "recog" => {
                            let lexicon: Vec<String> = {
                                let mut set = std::collections::BTreeSet::new();
                                for t in &trans {
                                    set.insert(midword_core::alphabet::fold_case(t));
                                }
                                set.into_iter().collect()
                            };
                            let lexicons = vec![lexicon; test.len()];
                            let m = eval::recognition_eval(emb.view(), &trans, &lexicons, |s| {
                                wordrep::embed_string(s, &subspace)
                            })?;
                            serde_json::to_value(m)?
                        }
                        other => bail!("unknown task {other:?} (qbe|qbs|recog)"),
                    }
                }
                ("fv", other) => bail!("task {other:?} needs --space subspace"),
                (other, _) => bail!("unknown space {other:?} (fv|subspace)"),
            };
            let text = serde_json::to_string_pretty(&value)?;
            match report {
                Some(path) => std::fs::write(&path, text)?,
                None => println!("{text}"),
            }
        }
        Command::Verify { images, trials, seed } => {
            let mut failed = false;
            let props = verify::property_check(trials, seed)?;
            let mut line = |name: &str, value: f64, limit: f64| {
                let ok = value <= limit;
                failed |= !ok;
                println!(
                    "{} {name}: {value:.3e} (limit {limit:.1e})",
                    if ok { "PASS" } else { "FAIL" }
                );
            };
            line("fv additivity", props.additivity_max, 1e-12);
            line("norm absorption", props.scale_invariance_max, 1e-12);
            line("quadrant rearrangement", props.rearrangement_max, 1e-12);
            let cca = verify::cca_check(seed)?;
            line("cca generalized orthogonality", cca.orthogonality_max, 1e-6);
            let ok = cca.self_correlation_min >= 0.99;
            failed |= !ok;
            println!(
                "{} cca self-correlation: {:.6} (needs >= 0.99)",
                if ok { "PASS" } else { "FAIL" },
                cca.self_correlation_min
            );
            for (label, centering) in [("centering off", false), ("centering on", true)] {
                let params = verify::VerifyParams::default();
                let out = verify::fast_naive_check(&params, images, seed, centering)?;
                let ok = out.max_distance <= 1e-6;
                failed |= !ok;
                println!(
                    "{} fast vs naive ({label}): max distance {:.3e} over {} features on {} images (limit 1e-6)",
                    if ok { "PASS" } else { "FAIL" },
                    out.max_distance,
                    out.features,
                    out.images
                );
            }
            if failed {
                bail!("verification failed");
            }
        }
        Command::Bench {
            archive: archive_dir,
            text,
            reps,
            source,
            naive,
            config,
        } => {
            let cfg = config.resolve()?;
            let archive = ModelArchive::load(&archive_dir)?;
            let source = Source::parse(&source)?;
            let models = experiment::SignatureModels::load(&archive, &cfg)?;
            let emb = models
                .embeddings
                .get(&source.key())
                .with_context(|| format!("archive has no embedding for source {}", source.label()))?;
            let style = cfg.render_style();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let (img, anns) = corpus::render_word(&text, &style, &mut rng)?;
            let (img, _) = corpus::normalize_height(&img, &anns, cfg.corpus.height)?;
            println!("image {}x{} ({} px high)", img.width, img.height, cfg.corpus.height);
            let params = cfg.midlevel_params();
            let dense = midword_core::features::extract_dense(&img, &params.sift_scales, params.sift_step);
            let t = Instant::now();
            let reduced = midword_core::features::reduce_descriptors(&dense, &models.pca_block)?;
            println!("pca reduction: {:.1} ms ({} descriptors)", t.elapsed().as_secs_f64() * 1e3, reduced.len());
            for rep in 0..reps.max(1) {
                let t = Instant::now();
                let (grid, _) = midlevel::build_grid_from(&reduced, &models.gmm_block, emb, params.cell, &img.id)?;
                let build_ms = t.elapsed().as_secs_f64() * 1e3;
                let t = Instant::now();
                let feats = midlevel::extract_fast(&grid, &params.block_sizes, params.block_step)?;
                let extract_ms = t.elapsed().as_secs_f64() * 1e3;
                println!(
                    "rep {rep}: grid build {build_ms:.1} ms + {} blocks in {extract_ms:.1} ms (total {:.1} ms)",
                    feats.len(),
                    build_ms + extract_ms
                );
            }
            if naive {
                let t = Instant::now();
                let feats = midlevel::extract_naive_from(
                    &reduced,
                    &models.gmm_block,
                    emb,
                    &params.block_sizes,
                    params.block_step,
                )?;
                println!(
                    "naive: {} blocks in {:.1} ms",
                    feats.len(),
                    t.elapsed().as_secs_f64() * 1e3
                );
            }
        }
        Command::Experiment { out, config } => {
            let cfg = config.resolve()?;
            let (report, archive) = experiment::run_experiment(&cfg)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("report.json"), report.to_json())?;
            std::fs::write(out.join("report.txt"), report.human_table())?;
            std::fs::write(out.join("config.toml"), cfg.to_toml())?;
            archive.save(&out.join("archive"))?;
            print!("{}", report.human_table());
            println!("report written to {}", out.display());
        }
    }
    Ok(())
}
