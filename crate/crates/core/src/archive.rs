//! Model archive: a directory with a JSON manifest plus one raw tensor file
//! per matrix (row-major little-endian f32, shapes in the manifest).
//!
//! The in-memory [`ModelArchive`] holds the f32 tensors verbatim, so a
//! load/save round trip is byte-exact. Typed models are converted to and
//! from archive components; the experiment pipeline always evaluates models
//! that have passed through archive form, which makes "rerun from a loaded
//! archive" reproduce evaluation numbers exactly.

use crate::codebook::GmmModel;
use crate::embedding::EmbeddingModel;
use crate::error::{Error, Result};
use crate::features::PcaModel;
use crate::wordrep::{AttributeModel, CommonSubspace};
use ndarray::{Array1, Array2};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
struct TensorMeta {
    file: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
struct ComponentMeta {
    kind: String,
    #[serde(default)]
    hyper: BTreeMap<String, serde_json::Value>,
    tensors: BTreeMap<String, TensorMeta>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
struct Manifest {
    format_version: u32,
    components: BTreeMap<String, ComponentMeta>,
}

/// One named model component: hyperparameters plus named f32 tensors.
#[derive(Debug, Clone, Default)]
pub struct Component {
    pub kind: String,
    pub hyper: BTreeMap<String, serde_json::Value>,
    tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

impl Component {
    pub fn new(kind: &str) -> Self {
        Component {
            kind: kind.to_string(),
            ..Component::default()
        }
    }

    pub fn set_hyper(&mut self, key: &str, value: serde_json::Value) {
        self.hyper.insert(key.to_string(), value);
    }

    pub fn hyper_f64(&self, key: &str) -> Result<f64> {
        self.hyper
            .get(key)
            .and_then(|v| v.as_f64())
            .ok_or_else(|| Error::Archive(format!("missing numeric hyperparameter {key:?}")))
    }

    pub fn hyper_bool(&self, key: &str) -> Result<bool> {
        self.hyper
            .get(key)
            .and_then(|v| v.as_bool())
            .ok_or_else(|| Error::Archive(format!("missing boolean hyperparameter {key:?}")))
    }

    pub fn hyper_usize_list(&self, key: &str) -> Result<Vec<usize>> {
        self.hyper
            .get(key)
            .and_then(|v| v.as_array())
            .map(|a| a.iter().filter_map(|x| x.as_u64().map(|u| u as usize)).collect())
            .ok_or_else(|| Error::Archive(format!("missing list hyperparameter {key:?}")))
    }

    pub fn put_tensor_f64_2d(&mut self, name: &str, m: &Array2<f64>) {
        let shape = vec![m.nrows(), m.ncols()];
        let data: Vec<f32> = m.iter().map(|&v| v as f32).collect();
        self.tensors.insert(name.to_string(), (shape, data));
    }

    pub fn put_tensor_f64_1d(&mut self, name: &str, v: &Array1<f64>) {
        self.tensors
            .insert(name.to_string(), (vec![v.len()], v.iter().map(|&x| x as f32).collect()));
    }

    pub fn tensor(&self, name: &str) -> Result<(&[usize], &[f32])> {
        self.tensors
            .get(name)
            .map(|(s, d)| (s.as_slice(), d.as_slice()))
            .ok_or_else(|| Error::Archive(format!("missing tensor {name:?}")))
    }

    pub fn tensor_2d(&self, name: &str) -> Result<Array2<f64>> {
        let (shape, data) = self.tensor(name)?;
        if shape.len() != 2 {
            return Err(Error::Archive(format!("tensor {name:?} is not 2-d")));
        }
        Ok(Array2::from_shape_vec((shape[0], shape[1]), data.iter().map(|&v| v as f64).collect())
            .map_err(|e| Error::Archive(format!("tensor {name:?}: {e}")))?)
    }

    pub fn tensor_1d(&self, name: &str) -> Result<Array1<f64>> {
        let (shape, data) = self.tensor(name)?;
        if shape.len() != 1 {
            return Err(Error::Archive(format!("tensor {name:?} is not 1-d")));
        }
        Ok(Array1::from_iter(data.iter().map(|&v| v as f64)))
    }

    pub fn has_tensor(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }
}

/// A named set of components, savable to / loadable from a directory.
#[derive(Debug, Clone, Default)]
pub struct ModelArchive {
    pub components: BTreeMap<String, Component>,
}

impl ModelArchive {
    pub fn new() -> Self {
        ModelArchive::default()
    }

    pub fn insert(&mut self, name: &str, component: Component) {
        self.components.insert(name.to_string(), component);
    }

    pub fn component(&self, name: &str) -> Result<&Component> {
        self.components
            .get(name)
            .ok_or_else(|| Error::Archive(format!("missing component {name:?}")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.components.contains_key(name)
    }

    /// Write manifest.json plus one `<component>.<tensor>.bin` per tensor.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = Manifest {
            format_version: ARCHIVE_VERSION,
            components: BTreeMap::new(),
        };
        for (cname, comp) in &self.components {
            let mut tensors = BTreeMap::new();
            for (tname, (shape, data)) in &comp.tensors {
                let file = format!("{cname}.{tname}.bin");
                let path = dir.join(&file);
                let mut bytes = Vec::with_capacity(data.len() * 4);
                for v in data {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
                tensors.insert(
                    tname.clone(),
                    TensorMeta {
                        file,
                        shape: shape.clone(),
                    },
                );
            }
            manifest.components.insert(
                cname.clone(),
                ComponentMeta {
                    kind: comp.kind.clone(),
                    hyper: comp.hyper.clone(),
                    tensors,
                },
            );
        }
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    /// Load an archive, validating the format version and tensor lengths.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?)?;
        if manifest.format_version != ARCHIVE_VERSION {
            return Err(Error::Archive(format!(
                "unsupported archive version {} (expected {ARCHIVE_VERSION})",
                manifest.format_version
            )));
        }
        let mut archive = ModelArchive::new();
        for (cname, meta) in manifest.components {
            let mut comp = Component::new(&meta.kind);
            comp.hyper = meta.hyper;
            for (tname, tmeta) in meta.tensors {
                let tpath = dir.join(&tmeta.file);
                let bytes = fs::read(&tpath).map_err(|e| Error::io(&tpath, e))?;
                let expect: usize = tmeta.shape.iter().product::<usize>() * 4;
                if bytes.len() != expect {
                    return Err(Error::Archive(format!(
                        "tensor file {:?} has {} bytes, manifest shape {:?} needs {}",
                        tmeta.file,
                        bytes.len(),
                        tmeta.shape,
                        expect
                    )));
                }
                let data: Vec<f32> = bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                comp.tensors.insert(tname, (tmeta.shape, data));
            }
            archive.insert(&cname, comp);
        }
        Ok(archive)
    }
}

// ---- typed conversions ---------------------------------------------------

pub fn pca_to_component(model: &PcaModel) -> Component {
    let mut c = Component::new("pca");
    c.set_hyper("in_dim", model.in_dim().into());
    c.set_hyper("out_dim", model.out_dim.into());
    c.put_tensor_f64_1d("mean", &model.mean);
    c.put_tensor_f64_2d("basis", &model.basis);
    c.put_tensor_f64_1d("eigenvalues", &model.eigenvalues);
    c
}

pub fn pca_from_component(c: &Component) -> Result<PcaModel> {
    let basis = c.tensor_2d("basis")?;
    let out_dim = basis.ncols();
    Ok(PcaModel {
        mean: c.tensor_1d("mean")?,
        basis,
        eigenvalues: c.tensor_1d("eigenvalues")?,
        out_dim,
    })
}

pub fn gmm_to_component(model: &GmmModel) -> Component {
    let mut c = Component::new("gmm");
    c.set_hyper("components", model.components().into());
    c.set_hyper("dim", model.dim().into());
    c.put_tensor_f64_1d("weights", &model.weights);
    c.put_tensor_f64_2d("means", &model.means);
    c.put_tensor_f64_2d("variances", &model.variances);
    c
}

pub fn gmm_from_component(c: &Component) -> Result<GmmModel> {
    let mut weights = c.tensor_1d("weights")?;
    let total = weights.sum();
    if !(total.is_finite() && (total - 1.0).abs() < 1e-4) {
        return Err(Error::Archive(format!("gmm weights sum to {total}")));
    }
    // renormalize the f32-quantized simplex
    weights.mapv_inplace(|w| w / total);
    Ok(GmmModel {
        weights,
        means: c.tensor_2d("means")?,
        variances: c.tensor_2d("variances")?,
    })
}

pub fn embedding_to_component(model: &EmbeddingModel, kind: &str) -> Component {
    let mut c = Component::new(kind);
    c.set_hyper("eta", model.eta.into());
    c.set_hyper("centering", model.centering.into());
    c.set_hyper("k", model.out_dim().into());
    c.put_tensor_f64_2d("u", &model.u);
    c.put_tensor_f64_1d("eigenvalues", &model.eigenvalues);
    if let Some(mean) = &model.x_mean {
        c.put_tensor_f64_1d("x_mean", mean);
    }
    c
}

pub fn embedding_from_component(c: &Component) -> Result<EmbeddingModel> {
    let centering = c.hyper_bool("centering")?;
    let x_mean = if c.has_tensor("x_mean") {
        Some(c.tensor_1d("x_mean")?)
    } else {
        None
    };
    if centering && x_mean.is_none() {
        return Err(Error::Archive("centering embedding without x_mean tensor".into()));
    }
    Ok(EmbeddingModel {
        u: c.tensor_2d("u")?,
        x_mean,
        eigenvalues: c.tensor_1d("eigenvalues")?,
        eta: c.hyper_f64("eta")?,
        centering,
    })
}

pub fn attributes_to_component(model: &AttributeModel) -> Component {
    let mut c = Component::new("attributes");
    c.set_hyper("lambda", model.lambda.into());
    c.set_hyper("case_insensitive", model.case_insensitive.into());
    c.set_hyper("levels", model.levels.clone().into());
    c.put_tensor_f64_2d("weights", &model.weights);
    c.put_tensor_f64_1d("bias", &model.bias);
    c.put_tensor_f64_1d(
        "degenerate",
        &Array1::from_iter(model.degenerate.iter().map(|&b| if b { 1.0 } else { 0.0 })),
    );
    c
}

pub fn attributes_from_component(c: &Component) -> Result<AttributeModel> {
    Ok(AttributeModel {
        weights: c.tensor_2d("weights")?,
        bias: c.tensor_1d("bias")?,
        degenerate: c.tensor_1d("degenerate")?.iter().map(|&v| v != 0.0).collect(),
        levels: c.hyper_usize_list("levels")?,
        case_insensitive: c.hyper_bool("case_insensitive")?,
        lambda: c.hyper_f64("lambda")?,
    })
}

pub fn subspace_to_component(model: &CommonSubspace) -> Component {
    let mut c = Component::new("subspace");
    c.set_hyper("out_dim", model.out_dim().into());
    c.set_hyper("case_insensitive", model.case_insensitive.into());
    c.set_hyper("levels", model.levels.clone().into());
    c.set_hyper("eta", model.img.eta.into());
    c.put_tensor_f64_2d("p_img", &model.img.u);
    c.put_tensor_f64_2d("p_str", &model.txt.u);
    c.put_tensor_f64_1d("eigenvalues", &model.img.eigenvalues);
    if let Some(m) = &model.img.x_mean {
        c.put_tensor_f64_1d("mean_img", m);
    }
    if let Some(m) = &model.txt.x_mean {
        c.put_tensor_f64_1d("mean_str", m);
    }
    c
}

pub fn subspace_from_component(c: &Component) -> Result<CommonSubspace> {
    let eta = c.hyper_f64("eta")?;
    let eigenvalues = c.tensor_1d("eigenvalues")?;
    let img = EmbeddingModel {
        u: c.tensor_2d("p_img")?,
        x_mean: Some(c.tensor_1d("mean_img")?),
        eigenvalues: eigenvalues.clone(),
        eta,
        centering: true,
    };
    let txt = EmbeddingModel {
        u: c.tensor_2d("p_str")?,
        x_mean: Some(c.tensor_1d("mean_str")?),
        eigenvalues,
        eta,
        centering: true,
    };
    Ok(CommonSubspace {
        img,
        txt,
        levels: c.hyper_usize_list("levels")?,
        case_insensitive: c.hyper_bool("case_insensitive")?,
    })
}

/// Round an f64 matrix through f32 precision (the archive precision).
pub fn quantize_f32_2d(m: &Array2<f64>) -> Array2<f64> {
    m.mapv(|v| v as f32 as f64)
}

/// Round an f64 vector through f32 precision.
pub fn quantize_f32_1d(v: &Array1<f64>) -> Array1<f64> {
    v.mapv(|x| x as f32 as f64)
}
