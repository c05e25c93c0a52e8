//! Dense local gradient-orientation descriptors and PCA reduction.

mod pca;
mod sift;

pub use pca::{apply_pca, fit_pca, PcaModel};
pub use sift::{extract_dense, DenseDescriptors, SIFT_DIM};

use ndarray::{Array2, ArrayView1};

/// A single dense descriptor: patch center, patch side and the vector.
#[derive(Debug, Clone, Copy)]
pub struct LocalDescriptor<'a> {
    pub cx: f32,
    pub cy: f32,
    pub scale: u32,
    pub v: ArrayView1<'a, f32>,
}

/// Descriptors after PCA reduction, with flat (all-zero) raw descriptors
/// dropped. Positions are kept for spatial assignment downstream.
#[derive(Debug, Clone)]
pub struct ReducedDescriptors {
    pub image_width: usize,
    pub image_height: usize,
    pub centers: Vec<(f32, f32)>,
    /// n x d matrix, one reduced descriptor per row.
    pub data: Array2<f64>,
}

impl ReducedDescriptors {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Project non-flat descriptors with a PCA model. Flat raw descriptors carry
/// no gradient evidence and are dropped before any encoding.
pub fn reduce_descriptors(descs: &DenseDescriptors, pca: &PcaModel) -> crate::Result<ReducedDescriptors> {
    let keep: Vec<usize> = (0..descs.len())
        .filter(|&i| !descs.is_flat(i))
        .collect();
    let d_in = pca.mean.len();
    if descs.dim() != d_in {
        return Err(crate::Error::Dimension {
            what: "reduce_descriptors",
            expected: d_in,
            got: descs.dim(),
        });
    }
    let mut centered = Array2::<f64>::zeros((keep.len(), d_in));
    let mut centers = Vec::with_capacity(keep.len());
    for (row, &i) in keep.iter().enumerate() {
        let v = descs.data.row(i);
        for j in 0..d_in {
            centered[[row, j]] = v[j] as f64 - pca.mean[j];
        }
        centers.push(descs.centers[i]);
    }
    let data = centered.dot(&pca.basis);
    Ok(ReducedDescriptors {
        image_width: descs.image_width,
        image_height: descs.image_height,
        centers,
        data,
    })
}
