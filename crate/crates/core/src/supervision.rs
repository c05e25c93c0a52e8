//! Training-time block sampling and character-region overlap labels, plus
//! assembly of the paired (visual, label) views used to learn the embedding.

use crate::alphabet::{self, ALPHABET_SIZE};
use crate::codebook::GmmModel;
use crate::corpus::{BBox, CharAnnotation, Corpus};
use crate::error::{Error, Result};
use crate::features::{extract_dense, reduce_descriptors, PcaModel, ReducedDescriptors};
use crate::fisher::{self, Pyramid};
use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;

/// Overlap label of one block: an R^2 x 62 matrix flattened row-major
/// (region-major), entries in [0, 1].
#[derive(Debug, Clone)]
pub struct BlockLabel {
    pub y: Array1<f64>,
    pub regions_per_side: usize,
}

impl BlockLabel {
    pub fn dim(&self) -> usize {
        self.y.len()
    }

    /// Entry for character index `d` and region index `r` (row-major over
    /// the R x R split).
    pub fn get(&self, d: usize, r: usize) -> f64 {
        self.y[r * ALPHABET_SIZE + d]
    }
}

/// Aligned visual / label views: one row per sampled block.
#[derive(Debug, Clone)]
pub struct TrainingViews {
    /// NS x D_v l2-normalized block Fisher vectors.
    pub x: Array2<f32>,
    /// NS x (R^2 * 62) overlap labels.
    pub y: Array2<f32>,
}

/// Sample `count` square blocks fully inside a `width` x `height` image.
/// The size is uniform over the sizes that fit, the position uniform over
/// valid top-left corners.
pub fn sample_blocks(
    width: usize,
    height: usize,
    count: usize,
    sizes: &[usize],
    rng: &mut impl Rng,
) -> Result<Vec<BBox>> {
    if count == 0 {
        return Err(Error::InvalidInput("sample_blocks: count must be >= 1".into()));
    }
    let fitting: Vec<usize> = sizes
        .iter()
        .copied()
        .filter(|&s| s > 0 && s <= width && s <= height)
        .collect();
    if fitting.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no block size from {sizes:?} fits a {width}x{height} image"
        )));
    }
    let mut blocks = Vec::with_capacity(count);
    for _ in 0..count {
        let s = fitting[rng.random_range(0..fitting.len())];
        let x = rng.random_range(0..=(width - s)) as i64;
        let y = rng.random_range(0..=(height - s)) as i64;
        blocks.push(BBox::new(x, y, s as i64, s as i64));
    }
    Ok(blocks)
}

/// Overlap of `block` with the `r`-th cell of the R x R uniform split of a
/// character box, normalized by the cell area. Region boundaries are exact
/// real values; no pixel rounding is involved.
fn region_overlap(block: &BBox, char_bb: &BBox, r: usize, row: usize, col: usize) -> f64 {
    let rw = char_bb.w as f64 / r as f64;
    let rh = char_bb.h as f64 / r as f64;
    let rx0 = char_bb.x as f64 + col as f64 * rw;
    let ry0 = char_bb.y as f64 + row as f64 * rh;
    let rx1 = rx0 + rw;
    let ry1 = ry0 + rh;
    let ix = (block.right() as f64).min(rx1) - (block.x as f64).max(rx0);
    let iy = (block.bottom() as f64).min(ry1) - (block.y as f64).max(ry0);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    (ix * iy) / (rw * rh)
}

/// Character-region overlap label of a block. For each alphabet character
/// and region, the value is the maximum normalized overlap over annotations
/// carrying that character (max, not sum, to handle repeated characters).
/// `regions_per_side = 1` reduces to the whole-character overlap label.
pub fn block_label(
    block: &BBox,
    annotations: &[CharAnnotation],
    regions_per_side: usize,
) -> Result<BlockLabel> {
    if regions_per_side == 0 {
        return Err(Error::InvalidInput("block_label: R must be >= 1".into()));
    }
    let r = regions_per_side;
    let mut y = Array1::<f64>::zeros(r * r * ALPHABET_SIZE);
    for ann in annotations {
        let d = alphabet::char_index_checked(ann.label)?;
        for row in 0..r {
            for col in 0..r {
                let reg = row * r + col;
                let ov = region_overlap(block, &ann.bbox, r, row, col);
                let slot = &mut y[reg * ALPHABET_SIZE + d];
                if ov > *slot {
                    *slot = ov;
                }
            }
        }
    }
    Ok(BlockLabel {
        y,
        regions_per_side: r,
    })
}

/// Encode the l2-normalized 2x2-pyramid Fisher vector of one block over the
/// descriptors whose centers fall inside it.
pub fn block_fisher_vector(
    descs: &ReducedDescriptors,
    block: &BBox,
    gmm: &GmmModel,
) -> Result<Array1<f64>> {
    let mut idx: Vec<usize> = Vec::new();
    for (i, &(cx, cy)) in descs.centers.iter().enumerate() {
        let (cx, cy) = (cx as f64, cy as f64);
        if cx >= block.x as f64
            && cx < block.right() as f64
            && cy >= block.y as f64
            && cy < block.bottom() as f64
        {
            idx.push(i);
        }
    }
    let mut sub = Array2::<f64>::zeros((idx.len(), descs.data.ncols()));
    let mut centers = Vec::with_capacity(idx.len());
    for (row, &i) in idx.iter().enumerate() {
        sub.row_mut(row).assign(&descs.data.row(i));
        centers.push((descs.centers[i].0 as f64, descs.centers[i].1 as f64));
    }
    let fv = fisher::encode_fv_spm(
        sub.view(),
        &centers,
        block,
        gmm,
        Pyramid::Grid { rows: 2, cols: 2 },
    )?;
    let fv = fisher::l2_normalize(fv);
    Ok(fv.v)
}

/// Per-image training rows: sampled blocks encoded as (X, Y) row batches in
/// f64. Used by [`build_training_views`] and by streaming accumulators.
pub fn image_training_rows(
    descs: &ReducedDescriptors,
    annotations: &[CharAnnotation],
    blocks_per_image: usize,
    block_sizes: &[usize],
    regions_per_side: usize,
    gmm: &GmmModel,
    rng: &mut impl Rng,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let blocks = sample_blocks(
        descs.image_width,
        descs.image_height,
        blocks_per_image,
        block_sizes,
        rng,
    )?;
    let dv = 4 * fisher::cell_dim(gmm);
    let da = regions_per_side * regions_per_side * ALPHABET_SIZE;
    let mut x = Array2::<f64>::zeros((blocks.len(), dv));
    let mut y = Array2::<f64>::zeros((blocks.len(), da));
    for (i, block) in blocks.iter().enumerate() {
        let fv = block_fisher_vector(descs, block, gmm)?;
        x.row_mut(i).assign(&fv);
        let label = block_label(block, annotations, regions_per_side)?;
        let mut row = y.row_mut(i);
        for (dst, src) in row.iter_mut().zip(label.y.iter()) {
            *dst = *src;
        }
    }
    Ok((x, y))
}

/// Build the full stacked training views over a corpus: per image, dense
/// SIFT once, then one l2-normalized 2x2-pyramid block FV row in X and one
/// overlap-label row in Y per sampled block. Blocks with no descriptors
/// keep their zero row in X. Row order is corpus order, then sample order.
#[allow(clippy::too_many_arguments)]
pub fn build_training_views(
    corpus: &Corpus,
    pca: &PcaModel,
    block_gmm: &GmmModel,
    blocks_per_image: usize,
    block_sizes: &[usize],
    regions_per_side: usize,
    sift_scales: &[usize],
    sift_step: usize,
    rng: &mut impl Rng,
) -> Result<TrainingViews> {
    let dv = 4 * fisher::cell_dim(block_gmm);
    let da = regions_per_side * regions_per_side * ALPHABET_SIZE;
    let ns = corpus.len() * blocks_per_image;
    let mut x = Array2::<f32>::zeros((ns, dv));
    let mut y = Array2::<f32>::zeros((ns, da));
    let mut row0 = 0;
    for item in &corpus.items {
        let dense = extract_dense(&item.image, sift_scales, sift_step);
        let reduced = reduce_descriptors(&dense, pca)?;
        let (bx, by) = image_training_rows(
            &reduced,
            &item.chars,
            blocks_per_image,
            block_sizes,
            regions_per_side,
            block_gmm,
            rng,
        )?;
        for i in 0..blocks_per_image {
            for j in 0..dv {
                x[[row0 + i, j]] = bx[[i, j]] as f32;
            }
            for j in 0..da {
                y[[row0 + i, j]] = by[[i, j]] as f32;
            }
        }
        row0 += blocks_per_image;
    }
    Ok(TrainingViews { x, y })
}

/// Convenience: promote an f32 view matrix to f64 for fitting.
pub fn to_f64(m: ArrayView2<f32>) -> Array2<f64> {
    m.mapv(|v| v as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn sampling_counts_and_bounds() {
        let blocks = sample_blocks(300, 120, 150, &[16, 24, 32, 40, 48], &mut rng(1)).unwrap();
        assert_eq!(blocks.len(), 150);
        for b in &blocks {
            assert!(b.inside(300, 120));
            assert_eq!(b.w, b.h);
            assert!([16, 24, 32, 40, 48].contains(&(b.w as usize)));
        }
    }

    #[test]
    fn sampling_unique_placement_and_determinism() {
        let only = sample_blocks(32, 32, 10, &[32], &mut rng(2)).unwrap();
        for b in only {
            assert_eq!(b, BBox::new(0, 0, 32, 32));
        }
        let a = sample_blocks(200, 120, 50, &[16, 32], &mut rng(3)).unwrap();
        let b = sample_blocks(200, 120, 50, &[16, 32], &mut rng(3)).unwrap();
        assert_eq!(a, b);
        assert!(sample_blocks(20, 20, 5, &[32, 48], &mut rng(4)).is_err());
    }

    #[test]
    fn label_no_overlap_is_zero() {
        let anns = vec![CharAnnotation {
            label: 'Q',
            bbox: BBox::new(50, 0, 20, 30),
        }];
        let label = block_label(&BBox::new(0, 0, 16, 16), &anns, 2).unwrap();
        assert!(label.y.iter().all(|&v| v == 0.0));
        let empty = block_label(&BBox::new(0, 0, 16, 16), &[], 1).unwrap();
        assert!(empty.y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn label_half_covered_character() {
        // char 'U' box x in [20,40), y in [0,30); block x in [20,40), y in [0,15)
        let anns = vec![CharAnnotation {
            label: 'U',
            bbox: BBox::new(20, 0, 20, 30),
        }];
        let block = BBox::new(20, 0, 20, 15);
        let label = block_label(&block, &anns, 1).unwrap();
        let u = alphabet::char_index('U').unwrap();
        assert!((label.get(u, 0) - 0.5).abs() < 1e-12);
        assert_eq!(label.y.iter().filter(|&&v| v != 0.0).count(), 1);

        // R = 2: the top two regions are fully covered, bottom two empty
        let label2 = block_label(&block, &anns, 2).unwrap();
        assert!((label2.get(u, 0) - 1.0).abs() < 1e-12);
        assert!((label2.get(u, 1) - 1.0).abs() < 1e-12);
        assert_eq!(label2.get(u, 2), 0.0);
        assert_eq!(label2.get(u, 3), 0.0);
    }

    #[test]
    fn repeated_characters_take_the_max() {
        // two 'A' boxes; block covers 30% of one and 80% of the other
        let anns = vec![
            CharAnnotation {
                label: 'A',
                bbox: BBox::new(0, 0, 10, 10),
            },
            CharAnnotation {
                label: 'A',
                bbox: BBox::new(20, 0, 10, 10),
            },
        ];
        // block covering x in [7,28): 3 columns of the first (30%), 8 of the second (80%)
        let block = BBox::new(7, 0, 21, 10);
        let label = block_label(&block, &anns, 1).unwrap();
        let a = alphabet::char_index('A').unwrap();
        assert!((label.get(a, 0) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn label_is_monotone_in_block_size() {
        let anns = vec![
            CharAnnotation {
                label: 'g',
                bbox: BBox::new(5, 3, 17, 23),
            },
            CharAnnotation {
                label: '7',
                bbox: BBox::new(25, 2, 12, 26),
            },
        ];
        let small = BBox::new(10, 5, 12, 12);
        let big = BBox::new(8, 3, 20, 20);
        for r in 1..=4usize {
            let ls = block_label(&small, &anns, r).unwrap();
            let lb = block_label(&big, &anns, r).unwrap();
            for (s, b) in ls.y.iter().zip(lb.y.iter()) {
                assert!(b >= s, "enlarging the block decreased a label entry");
            }
            assert!(ls.y.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    /// Rasterized pixel-counting oracle: scale the plane by R so all region
    /// boundaries become integers, then count unit cells in the intersection.
    fn rasterized_overlap(block: &BBox, char_bb: &BBox, r: usize, row: usize, col: usize) -> f64 {
        let r = r as i64;
        let (row, col) = (row as i64, col as i64);
        // scaled block
        let bx0 = block.x * r;
        let bx1 = block.right() * r;
        let by0 = block.y * r;
        let by1 = block.bottom() * r;
        // scaled region: width char.w (after scaling), offset col*char.w
        let rx0 = char_bb.x * r + col * char_bb.w;
        let rx1 = rx0 + char_bb.w;
        let ry0 = char_bb.y * r + row * char_bb.h;
        let ry1 = ry0 + char_bb.h;
        let mut cells = 0i64;
        for y in ry0.max(by0)..ry1.min(by1) {
            for x in rx0.max(bx0)..rx1.min(bx1) {
                let _ = (x, y);
                cells += 1;
            }
        }
        cells as f64 / (char_bb.w * char_bb.h) as f64
    }

    #[test]
    fn label_matches_rasterized_oracle() {
        let mut rng = rng(99);
        for _ in 0..400 {
            let r = rng.random_range(1..=4usize);
            let char_bb = BBox::new(
                rng.random_range(0..30),
                rng.random_range(0..30),
                rng.random_range(1..=24),
                rng.random_range(1..=24),
            );
            let block = BBox::new(
                rng.random_range(0..40),
                rng.random_range(0..40),
                rng.random_range(1..=32),
                rng.random_range(1..=32),
            );
            for row in 0..r {
                for col in 0..r {
                    let got = region_overlap(&block, &char_bb, r, row, col);
                    let want = rasterized_overlap(&block, &char_bb, r, row, col);
                    let denom = want.abs().max(1e-9);
                    assert!(
                        ((got - want) / denom).abs() < 1e-9,
                        "block {block:?} char {char_bb:?} r={r} ({row},{col}): {got} vs {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn full_containment_gives_one() {
        let anns = vec![CharAnnotation {
            label: 'x',
            bbox: BBox::new(10, 10, 8, 12),
        }];
        let block = BBox::new(8, 8, 16, 16);
        for r in 1..=3 {
            let label = block_label(&block, &anns, r).unwrap();
            let xi = alphabet::char_index('x').unwrap();
            for reg in 0..r * r {
                assert!((label.get(xi, reg) - 1.0).abs() < 1e-12);
            }
        }
    }
}
