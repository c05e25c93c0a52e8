//! Dense upright SIFT over a regular grid at multiple patch scales.
//!
//! Each descriptor is the standard 4x4 spatial x 8 orientation histogram:
//! per-pixel gradient mass is shared trilinearly between neighboring
//! spatial/orientation bins, weighted by a Gaussian window (sigma = side/2),
//! l2-normalized, clipped at 0.2 and renormalized. A patch with no gradient
//! mass yields the exact zero vector.

use super::LocalDescriptor;
use crate::corpus::WordImage;
use ndarray::Array2;
use std::f32::consts::PI;

const SPATIAL_BINS: usize = 4;
const ORI_BINS: usize = 8;
pub const SIFT_DIM: usize = SPATIAL_BINS * SPATIAL_BINS * ORI_BINS;
const CLIP: f32 = 0.2;

/// Dense descriptors for one image, stored row-major (one per row).
#[derive(Debug, Clone)]
pub struct DenseDescriptors {
    pub image_width: usize,
    pub image_height: usize,
    pub centers: Vec<(f32, f32)>,
    pub scales: Vec<u32>,
    /// n x 128.
    pub data: Array2<f32>,
    flat: Vec<bool>,
}

impl DenseDescriptors {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// True if the raw patch had no gradient mass (descriptor is all zero).
    pub fn is_flat(&self, i: usize) -> bool {
        self.flat[i]
    }

    pub fn get(&self, i: usize) -> LocalDescriptor<'_> {
        LocalDescriptor {
            cx: self.centers[i].0,
            cy: self.centers[i].1,
            scale: self.scales[i],
            v: self.data.row(i),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = LocalDescriptor<'_>> {
        (0..self.len()).map(|i| self.get(i))
    }
}

struct PixelGradients {
    mag: Vec<f32>,
    ori_bin: Vec<u8>,
    ori_frac: Vec<f32>,
}

fn gradients(image: &WordImage) -> PixelGradients {
    let (w, h) = (image.width, image.height);
    let n = w * h;
    let mut mag = vec![0.0f32; n];
    let mut ori_bin = vec![0u8; n];
    let mut ori_frac = vec![0.0f32; n];
    let px = &image.pixels;
    for y in 0..h {
        for x in 0..w {
            let gx = if w == 1 {
                0.0
            } else if x == 0 {
                px[y * w + 1] - px[y * w]
            } else if x == w - 1 {
                px[y * w + x] - px[y * w + x - 1]
            } else {
                0.5 * (px[y * w + x + 1] - px[y * w + x - 1])
            };
            let gy = if h == 1 {
                0.0
            } else if y == 0 {
                px[w + x] - px[x]
            } else if y == h - 1 {
                px[y * w + x] - px[(y - 1) * w + x]
            } else {
                0.5 * (px[(y + 1) * w + x] - px[(y - 1) * w + x])
            };
            let m = (gx * gx + gy * gy).sqrt();
            let i = y * w + x;
            mag[i] = m;
            if m > 0.0 {
                let mut o = gy.atan2(gx) * (ORI_BINS as f32) / (2.0 * PI);
                if o < 0.0 {
                    o += ORI_BINS as f32;
                }
                let b = o.floor();
                ori_bin[i] = (b as usize % ORI_BINS) as u8;
                ori_frac[i] = o - b;
            }
        }
    }
    PixelGradients { mag, ori_bin, ori_frac }
}

/// Per-offset spatial binning table: up to two (bin, weight) pairs, with the
/// 1-d Gaussian window folded into the weights.
#[derive(Clone, Copy)]
struct BinTap {
    bin0: i8,
    w0: f32,
    bin1: i8,
    w1: f32,
}

fn spatial_taps(side: usize) -> Vec<BinTap> {
    let bin_size = side as f32 / SPATIAL_BINS as f32;
    let sigma = side as f32 / 2.0;
    let center = side as f32 / 2.0;
    (0..side)
        .map(|u| {
            let p = u as f32 + 0.5;
            let g = (-(p - center) * (p - center) / (2.0 * sigma * sigma)).exp();
            let bf = p / bin_size - 0.5;
            let b0 = bf.floor();
            let f = bf - b0;
            let b0i = b0 as i32;
            let b1i = b0i + 1;
            let mut tap = BinTap { bin0: -1, w0: 0.0, bin1: -1, w1: 0.0 };
            if (0..SPATIAL_BINS as i32).contains(&b0i) {
                tap.bin0 = b0i as i8;
                tap.w0 = (1.0 - f) * g;
            }
            if (0..SPATIAL_BINS as i32).contains(&b1i) {
                tap.bin1 = b1i as i8;
                tap.w1 = f * g;
            }
            tap
        })
        .collect()
}

/// Extract descriptors on a regular grid for every scale whose patch fits
/// inside the image. Images smaller than every patch yield an empty set.
pub fn extract_dense(image: &WordImage, scales: &[usize], step: usize) -> DenseDescriptors {
    assert!(step >= 1, "step must be >= 1");
    let (w, h) = (image.width, image.height);
    let grads = gradients(image);

    let mut centers = Vec::new();
    let mut out_scales = Vec::new();
    let mut rows: Vec<f32> = Vec::new();
    let mut flat = Vec::new();

    for &side in scales {
        if side == 0 || side > w || side > h {
            continue;
        }
        let taps = spatial_taps(side);
        let ny = (h - side) / step + 1;
        let nx = (w - side) / step + 1;
        let mut acc = [0.0f32; SIFT_DIM];
        for gy in 0..ny {
            let y0 = gy * step;
            for gx in 0..nx {
                let x0 = gx * step;
                acc.fill(0.0);
                let mut mass = 0.0f32;
                for v in 0..side {
                    let ty = taps[v];
                    if ty.bin0 < 0 && ty.bin1 < 0 {
                        continue;
                    }
                    let row_off = (y0 + v) * w + x0;
                    for u in 0..side {
                        let m = grads.mag[row_off + u];
                        if m == 0.0 {
                            continue;
                        }
                        let tx = taps[u];
                        let ob0 = grads.ori_bin[row_off + u] as usize;
                        let of = grads.ori_frac[row_off + u];
                        let ob1 = (ob0 + 1) % ORI_BINS;
                        let mo0 = m * (1.0 - of);
                        let mo1 = m * of;
                        mass += m;
                        // two y-taps x two x-taps x two orientation taps
                        for (by, wy) in [(ty.bin0, ty.w0), (ty.bin1, ty.w1)] {
                            if by < 0 || wy == 0.0 {
                                continue;
                            }
                            for (bx, wx) in [(tx.bin0, tx.w0), (tx.bin1, tx.w1)] {
                                if bx < 0 || wx == 0.0 {
                                    continue;
                                }
                                let base =
                                    ((by as usize) * SPATIAL_BINS + bx as usize) * ORI_BINS;
                                let ws = wy * wx;
                                acc[base + ob0] += ws * mo0;
                                acc[base + ob1] += ws * mo1;
                            }
                        }
                    }
                }
                if mass > 0.0 {
                    normalize_descriptor(&mut acc);
                    flat.push(false);
                } else {
                    // flat patch: exact zero descriptor
                    flat.push(true);
                }
                rows.extend_from_slice(&acc);
                centers.push((x0 as f32 + side as f32 / 2.0, y0 as f32 + side as f32 / 2.0));
                out_scales.push(side as u32);
            }
        }
    }

    let n = centers.len();
    let data = Array2::from_shape_vec((n, SIFT_DIM), rows).expect("descriptor layout");
    DenseDescriptors {
        image_width: w,
        image_height: h,
        centers,
        scales: out_scales,
        data,
        flat,
    }
}

fn normalize_descriptor(v: &mut [f32; SIFT_DIM]) {
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm == 0.0 {
        return;
    }
    for x in v.iter_mut() {
        *x = (*x / norm).min(CLIP);
    }
    let norm2 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm2 > 0.0 {
        for x in v.iter_mut() {
            *x /= norm2;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_from_fn(w: usize, h: usize, f: impl Fn(usize, usize) -> f32) -> WordImage {
        let data: Vec<u8> = (0..w * h)
            .map(|i| ((f(i % w, i / w)).clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        WordImage::from_u8("t".into(), "a".into(), w, h, &data)
    }

    #[test]
    fn constant_image_yields_zero_descriptors() {
        let img = image_from_fn(64, 48, |_, _| 0.5);
        let d = extract_dense(&img, &[16], 4);
        assert_eq!(d.len(), ((48 - 16) / 4 + 1) * ((64 - 16) / 4 + 1));
        for i in 0..d.len() {
            assert!(d.is_flat(i));
            assert!(d.get(i).v.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn grid_count_matches_formula() {
        let img = image_from_fn(200, 120, |x, y| ((x * 7 + y * 13) % 11) as f32 / 11.0);
        let d = extract_dense(&img, &[16], 2);
        assert_eq!(d.len(), ((120 - 16) / 2 + 1) * ((200 - 16) / 2 + 1));
        // image smaller than the smallest patch -> empty, not an error
        let tiny = image_from_fn(10, 10, |_, _| 0.0);
        assert!(extract_dense(&tiny, &[16, 24], 2).is_empty());
    }

    #[test]
    fn vertical_step_edge_concentrates_horizontal_gradient_bins() {
        // Finite-difference oracle: for a vertical step edge the gradient is
        // (positive, 0), i.e. orientation angle 0 -> orientation bin 0.
        let img = image_from_fn(64, 64, |x, _| if x < 32 { 0.0 } else { 1.0 });
        // independent oracle over raw pixels
        let mut oracle_bin_mass = [0.0f64; ORI_BINS];
        for y in 1..63 {
            for x in 1..63 {
                let gx = 0.5 * (img.at(y, x + 1) - img.at(y, x - 1));
                let gy = 0.5 * (img.at(y + 1, x) - img.at(y - 1, x));
                let m = ((gx * gx + gy * gy) as f64).sqrt();
                if m > 0.0 {
                    let mut a = (gy as f64).atan2(gx as f64);
                    if a < 0.0 {
                        a += 2.0 * std::f64::consts::PI;
                    }
                    let bin = ((a / (2.0 * std::f64::consts::PI) * 8.0).round() as usize) % 8;
                    oracle_bin_mass[bin] += m;
                }
            }
        }
        let oracle_dominant = oracle_bin_mass
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(oracle_dominant, 0);

        let d = extract_dense(&img, &[16], 4);
        let mut checked = 0;
        for i in 0..d.len() {
            if d.is_flat(i) {
                continue;
            }
            let v = d.get(i).v;
            let mut per_ori = [0.0f32; ORI_BINS];
            for (j, &x) in v.iter().enumerate() {
                per_ori[j % ORI_BINS] += x;
            }
            let dominant = per_ori
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(dominant, oracle_dominant, "descriptor {i}");
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn descriptors_are_unit_or_zero() {
        let img = image_from_fn(80, 60, |x, y| ((x * x + 3 * y) % 17) as f32 / 17.0);
        let d = extract_dense(&img, &[12, 16, 24], 4);
        for i in 0..d.len() {
            let n = d.get(i).v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
            assert!(n.abs() < 1e-5 || (n - 1.0).abs() < 1e-5, "norm {n}");
            assert!(d.get(i).v.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn translation_covariance_on_interior_grid_nodes() {
        let step = 4usize;
        let side = 16usize;
        let f = |x: usize, y: usize| (((x / 3) * 31 + (y / 2) * 7) % 13) as f32 / 13.0;
        let img = image_from_fn(96, 48, f);
        // shift content right by exactly `step`
        let shifted = image_from_fn(96, 48, |x, y| if x >= step { f(x - step, y) } else { 0.0 });
        let a = extract_dense(&img, &[side], step);
        let b = extract_dense(&shifted, &[side], step);
        let nx = (96 - side) / step + 1;
        let ny = (48 - side) / step + 1;
        // compare descriptors whose patches avoid the filled border region
        let mut compared = 0;
        for gy in 0..ny {
            for gx in 2..nx - 1 {
                let ia = gy * nx + (gx - 1);
                let ib = gy * nx + gx;
                assert_eq!(
                    a.data.row(ia).to_vec(),
                    b.data.row(ib).to_vec(),
                    "grid node ({gx},{gy})"
                );
                compared += 1;
            }
        }
        assert!(compared > 0);
    }
}
