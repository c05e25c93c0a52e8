//! Corpus persistence: a JSON-lines manifest next to 8-bit grayscale image
//! files (PGM by default, PNG also accepted).

use super::{BBox, CharAnnotation, Corpus, CorpusItem, Split, WordImage};
use crate::error::{Error, Result};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// On-disk image encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ImageFormat {
    #[default]
    Pgm,
    Png,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ManifestChar {
    label: String,
    x: i64,
    y: i64,
    w: i64,
    h: i64,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ManifestRecord {
    id: String,
    text: String,
    file: String,
    chars: Vec<ManifestChar>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct CorpusMeta {
    format_version: u32,
    split: Split,
}

fn write_pgm(path: &Path, image: &WordImage) -> Result<()> {
    let mut buf = Vec::with_capacity(32 + image.width * image.height);
    buf.extend_from_slice(format!("P5\n{} {}\n255\n", image.width, image.height).as_bytes());
    buf.extend_from_slice(&image.to_u8());
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    // Header: magic, width, height, maxval as whitespace-separated tokens,
    // with '#' comments allowed, then a single whitespace byte before raster.
    let mut pos = 0usize;
    let mut tokens: Vec<String> = Vec::new();
    while tokens.len() < 4 && pos < data.len() {
        while pos < data.len() && (data[pos] as char).is_whitespace() {
            pos += 1;
        }
        if pos < data.len() && data[pos] == b'#' {
            while pos < data.len() && data[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < data.len() && !(data[pos] as char).is_whitespace() {
            pos += 1;
        }
        tokens.push(String::from_utf8_lossy(&data[start..pos]).to_string());
    }
    if tokens.len() < 4 || tokens[0] != "P5" {
        return Err(Error::Corpus(format!("{}: not a P5 PGM", path.display())));
    }
    pos += 1; // single whitespace after maxval
    let w: usize = tokens[1]
        .parse()
        .map_err(|_| Error::Corpus(format!("{}: bad width", path.display())))?;
    let h: usize = tokens[2]
        .parse()
        .map_err(|_| Error::Corpus(format!("{}: bad height", path.display())))?;
    if tokens[3] != "255" {
        return Err(Error::Corpus(format!("{}: only maxval 255 supported", path.display())));
    }
    if data.len() < pos + w * h {
        return Err(Error::Corpus(format!("{}: truncated raster", path.display())));
    }
    Ok((w, h, data[pos..pos + w * h].to_vec()))
}

fn read_image_file(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => read_pgm(path),
        _ => {
            let img = image::open(path)
                .map_err(|e| Error::Corpus(format!("{}: {e}", path.display())))?
                .to_luma8();
            let (w, h) = (img.width() as usize, img.height() as usize);
            Ok((w, h, img.into_raw()))
        }
    }
}

/// Read a standalone grayscale image file (PGM or anything the image crate
/// decodes) into a [`WordImage`] with an unknown transcription.
pub fn load_word_image(path: &Path) -> Result<WordImage> {
    let (w, h, data) = read_image_file(path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_default();
    Ok(WordImage::from_u8(id, "unknown".into(), w, h, &data))
}

/// Write a corpus as `manifest.jsonl` + one image file per item under `dir`.
pub fn save_corpus(corpus: &Corpus, dir: &Path, format: ImageFormat) -> Result<()> {
    corpus.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join("manifest.jsonl");
    let mut manifest = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    for item in &corpus.items {
        let ext = match format {
            ImageFormat::Pgm => "pgm",
            ImageFormat::Png => "png",
        };
        let file = format!("{}.{ext}", item.image.id);
        let img_path = dir.join(&file);
        match format {
            ImageFormat::Pgm => write_pgm(&img_path, &item.image)?,
            ImageFormat::Png => {
                let buf: image::GrayImage = image::ImageBuffer::from_raw(
                    item.image.width as u32,
                    item.image.height as u32,
                    item.image.to_u8(),
                )
                .expect("raster size");
                buf.save(&img_path)
                    .map_err(|e| Error::Corpus(format!("{}: {e}", img_path.display())))?;
            }
        }
        let record = ManifestRecord {
            id: item.image.id.clone(),
            text: item.image.transcription.clone(),
            file,
            chars: item
                .chars
                .iter()
                .map(|a| ManifestChar {
                    label: a.label.to_string(),
                    x: a.bbox.x,
                    y: a.bbox.y,
                    w: a.bbox.w,
                    h: a.bbox.h,
                })
                .collect(),
        };
        let line = serde_json::to_string(&record)?;
        writeln!(manifest, "{line}").map_err(|e| Error::io(&manifest_path, e))?;
    }
    let meta_path = dir.join("meta.json");
    let meta = CorpusMeta {
        format_version: 1,
        split: corpus.split,
    };
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&meta_path, e))?;
    Ok(())
}

/// Load a corpus saved by [`save_corpus`]. Fails on malformed manifests,
/// missing image files, out-of-alphabet labels or boxes outside images.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let meta_path = dir.join("meta.json");
    let split = if meta_path.exists() {
        let meta: CorpusMeta = serde_json::from_str(
            &fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?,
        )?;
        if meta.format_version != 1 {
            return Err(Error::Corpus(format!(
                "unsupported corpus format version {}",
                meta.format_version
            )));
        }
        meta.split
    } else {
        Split::Test
    };
    let manifest_path = dir.join("manifest.jsonl");
    let file = fs::File::open(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut corpus = Corpus::new(split);
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&manifest_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord = serde_json::from_str(&line).map_err(|e| {
            Error::Corpus(format!("manifest line {}: {e}", lineno + 1))
        })?;
        let img_path = dir.join(&record.file);
        if !img_path.exists() {
            return Err(Error::Corpus(format!(
                "image file {:?} for id {:?} is missing",
                record.file, record.id
            )));
        }
        let (w, h, data) = read_image_file(&img_path)?;
        let image = WordImage::from_u8(record.id.clone(), record.text.clone(), w, h, &data);
        let mut chars = Vec::with_capacity(record.chars.len());
        for c in &record.chars {
            let mut it = c.label.chars();
            let (label, extra) = (it.next(), it.next());
            let label = match (label, extra) {
                (Some(l), None) => l,
                _ => {
                    return Err(Error::Corpus(format!(
                        "id {:?}: label {:?} is not a single character",
                        record.id, c.label
                    )))
                }
            };
            crate::alphabet::char_index_checked(label)?;
            chars.push(CharAnnotation {
                label,
                bbox: BBox::new(c.x, c.y, c.w, c.h),
            });
        }
        corpus.items.push(CorpusItem { image, chars });
    }
    corpus.validate()?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{render_word, synth_corpus, RenderStyle};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_is_lossless() {
        let words: Vec<String> = ["sun", "Map1"].iter().map(|s| s.to_string()).collect();
        let corpus = synth_corpus(
            &words,
            2,
            &RenderStyle::default(),
            120,
            Split::Learn,
            &mut ChaCha8Rng::seed_from_u64(3),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&corpus, dir.path(), ImageFormat::Pgm).unwrap();
        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(loaded.split, Split::Learn);
        assert_eq!(loaded.len(), corpus.len());
        for (a, b) in corpus.items.iter().zip(loaded.items.iter()) {
            assert_eq!(a.image.id, b.image.id);
            assert_eq!(a.image.transcription, b.image.transcription);
            assert_eq!(a.image.pixels, b.image.pixels);
            assert_eq!(a.chars, b.chars);
        }
    }

    #[test]
    fn roundtrip_png() {
        let (mut img, anns) = render_word("png", &RenderStyle::default(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        img.id = "p0".into();
        let mut corpus = Corpus::new(Split::Test);
        corpus.items.push(CorpusItem { image: img, chars: anns });
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&corpus, dir.path(), ImageFormat::Png).unwrap();
        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(loaded.items[0].image.pixels, corpus.items[0].image.pixels);
    }

    #[test]
    fn missing_image_file_names_the_id() {
        let words = vec!["gone".to_string()];
        let corpus = synth_corpus(
            &words,
            1,
            &RenderStyle::default(),
            120,
            Split::Test,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&corpus, dir.path(), ImageFormat::Pgm).unwrap();
        let img = dir.path().join(format!("{}.pgm", corpus.items[0].image.id));
        std::fs::remove_file(img).unwrap();
        let err = load_corpus(dir.path()).unwrap_err().to_string();
        assert!(err.contains(&corpus.items[0].image.id), "{err}");
    }

    #[test]
    fn out_of_alphabet_label_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = WordImage::from_u8("x".into(), "a".into(), 4, 4, &[0u8; 16]);
        write_pgm(&dir.path().join("x.pgm"), &img).unwrap();
        std::fs::write(
            dir.path().join("manifest.jsonl"),
            r#"{"id":"x","text":"a","file":"x.pgm","chars":[{"label":"€","x":0,"y":0,"w":2,"h":2}]}"#,
        )
        .unwrap();
        assert!(matches!(
            load_corpus(dir.path()),
            Err(Error::OutOfAlphabet('€'))
        ));
    }

    #[test]
    fn bbox_outside_image_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = WordImage::from_u8("x".into(), "a".into(), 4, 4, &[0u8; 16]);
        write_pgm(&dir.path().join("x.pgm"), &img).unwrap();
        std::fs::write(
            dir.path().join("manifest.jsonl"),
            r#"{"id":"x","text":"a","file":"x.pgm","chars":[{"label":"a","x":2,"y":0,"w":5,"h":2}]}"#,
        )
        .unwrap();
        assert!(load_corpus(dir.path()).is_err());
    }
}
