//! Annotated word-image corpus: domain types, synthetic generation, height
//! normalization and disk I/O.
//!
//! Images are 8-bit grayscale rasters held in memory as `f32` values on the
//! exact lattice `k / 255`, so a corpus round-trips through disk losslessly.

mod glyphs;
mod io;
mod render;

pub use io::{load_corpus, load_word_image, save_corpus, ImageFormat};
pub use render::{render_word, RenderStyle};

use crate::alphabet;
use crate::error::{Error, Result};
use rand::Rng;

/// Axis-aligned box in pixel coordinates, top-left anchored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BBox {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl BBox {
    pub fn new(x: i64, y: i64, w: i64, h: i64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn area(&self) -> i64 {
        self.w * self.h
    }

    pub fn right(&self) -> i64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> i64 {
        self.y + self.h
    }

    /// Intersection area with another box.
    pub fn intersection_area(&self, other: &BBox) -> i64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw > 0 && ih > 0 {
            iw * ih
        } else {
            0
        }
    }

    /// True if the box lies fully inside an image of the given size.
    pub fn inside(&self, width: usize, height: usize) -> bool {
        self.x >= 0
            && self.y >= 0
            && self.w > 0
            && self.h > 0
            && self.right() <= width as i64
            && self.bottom() <= height as i64
    }
}

/// Grayscale word image with its transcription.
#[derive(Debug, Clone, PartialEq)]
pub struct WordImage {
    pub id: String,
    pub transcription: String,
    pub height: usize,
    pub width: usize,
    /// Row-major pixels in `[0, 1]`, quantized to the `k/255` lattice.
    pub pixels: Vec<f32>,
}

impl WordImage {
    pub fn from_u8(id: String, transcription: String, width: usize, height: usize, data: &[u8]) -> Self {
        debug_assert_eq!(data.len(), width * height);
        WordImage {
            id,
            transcription,
            height,
            width,
            pixels: data.iter().map(|&v| v as f32 / 255.0).collect(),
        }
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }
}

/// One labeled character bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CharAnnotation {
    pub label: char,
    pub bbox: BBox,
}

/// Which stage of the pipeline a corpus feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Learn,
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Learn => write!(f, "learn"),
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learn" => Ok(Split::Learn),
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidInput(format!("unknown split {other:?}"))),
        }
    }
}

/// An annotated image together with its character boxes.
#[derive(Debug, Clone)]
pub struct CorpusItem {
    pub image: WordImage,
    pub chars: Vec<CharAnnotation>,
}

/// A set of annotated word images belonging to one split.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub split: Split,
    pub items: Vec<CorpusItem>,
}

impl Corpus {
    pub fn new(split: Split) -> Self {
        Corpus {
            split,
            items: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Check the corpus invariants: unique ids, labels in the alphabet,
    /// boxes inside their images.
    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::BTreeSet::new();
        for item in &self.items {
            let img = &item.image;
            if !ids.insert(img.id.clone()) {
                return Err(Error::Corpus(format!("duplicate image id {:?}", img.id)));
            }
            alphabet::validate_word(&img.transcription)?;
            for ann in &item.chars {
                alphabet::char_index_checked(ann.label)?;
                if !ann.bbox.inside(img.width, img.height) {
                    return Err(Error::Corpus(format!(
                        "annotation box {:?} outside image {:?} ({}x{})",
                        ann.bbox, img.id, img.width, img.height
                    )));
                }
            }
        }
        Ok(())
    }
}

fn round_half_away(v: f64) -> i64 {
    if v >= 0.0 {
        (v + 0.5).floor() as i64
    } else {
        (v - 0.5).ceil() as i64
    }
}

/// Rescale an image so its height equals `target`, preserving aspect ratio.
/// Annotation boxes are scaled by the same factor, rounded half away from
/// zero and clamped inside the image.
pub fn normalize_height(
    image: &WordImage,
    annotations: &[CharAnnotation],
    target: usize,
) -> Result<(WordImage, Vec<CharAnnotation>)> {
    if target == 0 {
        return Err(Error::InvalidInput("target height must be positive".into()));
    }
    if image.height == 0 || image.width == 0 {
        return Err(Error::InvalidInput("empty image".into()));
    }
    if image.height == target {
        return Ok((image.clone(), annotations.to_vec()));
    }
    let scale = target as f64 / image.height as f64;
    let new_w = ((image.width as f64 * scale).round() as usize).max(1);
    let mut out = vec![0u8; new_w * target];
    let (w0, h0) = (image.width, image.height);
    for oy in 0..target {
        // map output pixel center back to source coordinates
        let sy = ((oy as f64 + 0.5) / scale - 0.5).clamp(0.0, h0 as f64 - 1.0);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h0 - 1);
        let fy = sy - y0 as f64;
        for ox in 0..new_w {
            let sx = ((ox as f64 + 0.5) / scale - 0.5).clamp(0.0, w0 as f64 - 1.0);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w0 - 1);
            let fx = sx - x0 as f64;
            let v00 = image.at(y0, x0) as f64;
            let v01 = image.at(y0, x1) as f64;
            let v10 = image.at(y1, x0) as f64;
            let v11 = image.at(y1, x1) as f64;
            let v = v00 * (1.0 - fy) * (1.0 - fx)
                + v01 * (1.0 - fy) * fx
                + v10 * fy * (1.0 - fx)
                + v11 * fy * fx;
            out[oy * new_w + ox] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    let scaled = WordImage::from_u8(
        image.id.clone(),
        image.transcription.clone(),
        new_w,
        target,
        &out,
    );
    let anns = annotations
        .iter()
        .map(|a| {
            let mut x = round_half_away(a.bbox.x as f64 * scale);
            let mut y = round_half_away(a.bbox.y as f64 * scale);
            let mut w = round_half_away(a.bbox.w as f64 * scale).max(1);
            let mut h = round_half_away(a.bbox.h as f64 * scale).max(1);
            x = x.clamp(0, new_w as i64 - 1);
            y = y.clamp(0, target as i64 - 1);
            w = w.min(new_w as i64 - x);
            h = h.min(target as i64 - y);
            CharAnnotation {
                label: a.label,
                bbox: BBox::new(x, y, w, h),
            }
        })
        .collect();
    Ok((scaled, anns))
}

/// Generate `per_word` annotated renders of every word in `wordlist`,
/// height-normalized to `height` pixels.
pub fn synth_corpus(
    wordlist: &[String],
    per_word: usize,
    style: &RenderStyle,
    height: usize,
    split: Split,
    rng: &mut impl Rng,
) -> Result<Corpus> {
    if wordlist.is_empty() {
        return Err(Error::InvalidInput("empty wordlist".into()));
    }
    if per_word == 0 {
        return Err(Error::InvalidInput("per_word must be positive".into()));
    }
    let mut corpus = Corpus::new(split);
    for (wi, word) in wordlist.iter().enumerate() {
        for k in 0..per_word {
            let id = format!("{split}_w{wi:04}_{k:03}");
            let (mut image, anns) = render_word(word, style, rng)?;
            image.id = id;
            let (image, anns) = normalize_height(&image, &anns, height)?;
            corpus.items.push(CorpusItem {
                image,
                chars: anns,
            });
        }
    }
    corpus.validate()?;
    Ok(corpus)
}

/// A small built-in vocabulary for desk-scale synthetic corpora.
pub const DEFAULT_WORDLIST: &[&str] = &[
    "sun", "house", "before", "school", "market", "river", "stone", "light", "green", "paper",
    "window", "coffee", "street", "garden", "button", "camera", "silver", "bridge", "planet",
    "dream", "cloud", "train", "glass", "music", "table", "phone", "water", "mount", "field",
    "brick", "candle", "dinner", "eagle", "forest", "guitar", "harbor", "island", "jacket",
    "kitten", "ladder", "meadow", "needle", "orange", "pencil", "rabbit", "saddle", "temple",
    "valley", "walnut", "yellow", "zipper", "anchor", "basket", "cotton", "donkey", "engine",
    "falcon", "goblet", "hammer", "insect",
];
