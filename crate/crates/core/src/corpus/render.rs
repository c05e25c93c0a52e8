//! Rasterization of synthetic annotated word images from the stroke font.

use super::glyphs::{self, BASELINE_Y};
use super::{BBox, CharAnnotation, WordImage};
use crate::alphabet;
use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Rendering parameters. All jitter amplitudes may be set to zero for fully
/// rigid renders.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RenderStyle {
    /// Cap height in pixels before height normalization.
    pub cap_height: f32,
    /// Margin around the ink, in pixels.
    pub pad: usize,
    /// Gap between consecutive glyphs, in glyph units.
    pub letter_spacing: f32,
    /// Per-character scale jitter; 0.1 means +-10%.
    pub scale_jitter: f32,
    /// Per-character vertical baseline shift, in pixels.
    pub baseline_jitter: f32,
    /// Per-character spacing jitter, in pixels.
    pub spacing_jitter: f32,
    /// Per-image additive Gaussian pixel noise sigma is drawn from
    /// `[0, noise_sigma_max]`.
    pub noise_sigma_max: f32,
    /// Ink intensity range (global contrast scaling).
    pub contrast: (f32, f32),
    /// Stroke radius in glyph units.
    pub stroke_radius: f32,
}

impl Default for RenderStyle {
    fn default() -> Self {
        RenderStyle {
            cap_height: 64.0,
            pad: 6,
            letter_spacing: 1.7,
            scale_jitter: 0.10,
            baseline_jitter: 2.0,
            spacing_jitter: 1.0,
            noise_sigma_max: 0.10,
            contrast: (0.65, 1.0),
            stroke_radius: glyphs::STROKE_RADIUS,
        }
    }
}

struct PlacedGlyph {
    label: char,
    segments: Vec<[(f32, f32); 2]>,
    radius: f32,
}

impl PlacedGlyph {
    fn bounds(&self) -> (f32, f32, f32, f32) {
        let mut min_x = f32::INFINITY;
        let mut min_y = f32::INFINITY;
        let mut max_x = f32::NEG_INFINITY;
        let mut max_y = f32::NEG_INFINITY;
        for seg in &self.segments {
            for &(x, y) in seg {
                min_x = min_x.min(x);
                min_y = min_y.min(y);
                max_x = max_x.max(x);
                max_y = max_y.max(y);
            }
        }
        // Coverage reaches radius + 0.5 px past the centerline (AA band).
        let r = self.radius + 0.5;
        (min_x - r, min_y - r, max_x + r, max_y + r)
    }
}

fn dist_to_segment(px: f32, py: f32, a: (f32, f32), b: (f32, f32)) -> f32 {
    let (ax, ay) = a;
    let (bx, by) = b;
    let dx = bx - ax;
    let dy = by - ay;
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let cx = ax + t * dx;
    let cy = ay + t * dy;
    ((px - cx) * (px - cx) + (py - cy) * (py - cy)).sqrt()
}

/// Render a word image with per-character jitter and one annotation per
/// character. Deterministic for a fixed seed, text and style.
pub fn render_word(
    text: &str,
    style: &RenderStyle,
    rng: &mut impl Rng,
) -> Result<(WordImage, Vec<CharAnnotation>)> {
    alphabet::validate_word(text)?;
    let base_scale = style.cap_height / BASELINE_Y;

    // Layout pass: place glyph segments relative to (x=0, baseline y=0).
    let mut placed: Vec<PlacedGlyph> = Vec::new();
    let mut cursor = 0.0f32;
    for (i, c) in text.chars().enumerate() {
        let (strokes, advance) =
            glyphs::glyph(c).ok_or(Error::OutOfAlphabet(c))?;
        let scale = base_scale * (1.0 + style.scale_jitter * (rng.random::<f32>() * 2.0 - 1.0));
        let dy = style.baseline_jitter * (rng.random::<f32>() * 2.0 - 1.0);
        if i > 0 {
            cursor += style.letter_spacing * base_scale
                + style.spacing_jitter * (rng.random::<f32>() * 2.0 - 1.0);
        }
        let mut segments = Vec::new();
        for stroke in strokes {
            for pair in stroke.windows(2) {
                let map = |(gx, gy): (f32, f32)| {
                    (cursor + gx * scale, (gy - BASELINE_Y) * scale + dy)
                };
                segments.push([map(pair[0]), map(pair[1])]);
            }
            if stroke.len() == 1 {
                let p = stroke[0];
                let map = |(gx, gy): (f32, f32)| {
                    (cursor + gx * scale, (gy - BASELINE_Y) * scale + dy)
                };
                segments.push([map(p), map(p)]);
            }
        }
        placed.push(PlacedGlyph {
            label: c,
            segments,
            radius: style.stroke_radius * scale,
        });
        cursor += advance * scale;
    }

    // Canvas extent from the ink bounds.
    let mut min_x = f32::INFINITY;
    let mut min_y = f32::INFINITY;
    let mut max_x = f32::NEG_INFINITY;
    let mut max_y = f32::NEG_INFINITY;
    for g in &placed {
        let (x0, y0, x1, y1) = g.bounds();
        min_x = min_x.min(x0);
        min_y = min_y.min(y0);
        max_x = max_x.max(x1);
        max_y = max_y.max(y1);
    }
    let pad = style.pad as f32;
    let off_x = pad - min_x;
    let off_y = pad - min_y;
    let width = (max_x - min_x + 2.0 * pad).ceil() as usize + 1;
    let height = (max_y - min_y + 2.0 * pad).ceil() as usize + 1;

    let ink = style.contrast.0 + (style.contrast.1 - style.contrast.0) * rng.random::<f32>();
    let mut canvas = vec![0.0f32; width * height];
    let mut annotations = Vec::with_capacity(placed.len());
    for g in &placed {
        let (bx0, by0, bx1, by1) = g.bounds();
        let x0 = ((bx0 + off_x).floor().max(0.0)) as usize;
        let y0 = ((by0 + off_y).floor().max(0.0)) as usize;
        let x1 = (((bx1 + off_x).ceil()) as usize).min(width - 1);
        let y1 = (((by1 + off_y).ceil()) as usize).min(height - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let px = x as f32 - off_x;
                let py = y as f32 - off_y;
                let mut d = f32::INFINITY;
                for seg in &g.segments {
                    d = d.min(dist_to_segment(px, py, seg[0], seg[1]));
                    if d <= g.radius - 0.5 {
                        break;
                    }
                }
                let cov = (g.radius - d + 0.5).clamp(0.0, 1.0);
                if cov > 0.0 {
                    let v = &mut canvas[y * width + x];
                    *v = v.max(cov * ink);
                }
            }
        }
        annotations.push(CharAnnotation {
            label: g.label,
            bbox: BBox::new(
                x0 as i64,
                y0 as i64,
                (x1 - x0 + 1) as i64,
                (y1 - y0 + 1) as i64,
            ),
        });
    }

    // Additive noise, then quantize to the 8-bit lattice.
    let sigma = style.noise_sigma_max * rng.random::<f32>();
    if sigma > 0.0 {
        let normal = Normal::new(0.0f32, sigma).expect("valid sigma");
        for v in canvas.iter_mut() {
            *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
        }
    }
    let data: Vec<u8> = canvas
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let image = WordImage::from_u8(String::new(), text.to_string(), width, height, &data);
    Ok((image, annotations))
}
