//! On-disk form of labeled scenes and the dataset manifest.
//!
//! A scene is stored as three files sharing a stem:
//!
//! - `<id>_image.png`: 16-bit grayscale, `round(v * 65535)`;
//! - `<id>_mask.png`: 8-bit grayscale, 0 or 255;
//! - `<id>.meta`: `key=value` lines (`scene_id`, `split`, `lo_percentile`,
//!   `hi_percentile`, `lo_value`, `hi_value`, `degenerate`), `#` starts a comment.
//!
//! The manifest is a CSV file with one scene per line,
//! `scene_id,image_path,mask_path,split`, an optional header line starting with
//! `scene_id`, and `#` comments. Relative paths resolve against the manifest's folder.

use image::{DynamicImage, GrayImage, ImageBuffer, Luma};
use ndarray::Array2;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{LabeledScene, NormalizedImage, Split};
use crate::error::{Error, Result};

fn open_image(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image(other),
    })
}

/// Binarizes a decoded mask at half of its bit depth's range.
pub fn binarize_mask(img: &DynamicImage) -> Array2<u8> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let threshold = |v: f64, max: f64| u8::from(v / max >= 0.5);
    match img {
        DynamicImage::ImageLuma8(buf) => Array2::from_shape_fn((h, w), |(y, x)| {
            threshold(buf.get_pixel(x as u32, y as u32)[0] as f64, 255.0)
        }),
        DynamicImage::ImageLuma16(buf) => Array2::from_shape_fn((h, w), |(y, x)| {
            threshold(buf.get_pixel(x as u32, y as u32)[0] as f64, 65535.0)
        }),
        other => {
            let buf = other.to_luma16();
            Array2::from_shape_fn((h, w), |(y, x)| {
                threshold(buf.get_pixel(x as u32, y as u32)[0] as f64, 65535.0)
            })
        }
    }
}

/// Reads any image as unit-interval luminance (color is converted to luma).
pub fn read_unit_image(path: &Path) -> Result<Array2<f32>> {
    let img = open_image(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(match &img {
        DynamicImage::ImageLuma8(buf) => Array2::from_shape_fn((h, w), |(y, x)| {
            buf.get_pixel(x as u32, y as u32)[0] as f32 / 255.0
        }),
        DynamicImage::ImageLuma16(buf) => Array2::from_shape_fn((h, w), |(y, x)| {
            buf.get_pixel(x as u32, y as u32)[0] as f32 / 65535.0
        }),
        other => {
            let buf = other.to_luma32f();
            Array2::from_shape_fn((h, w), |(y, x)| {
                buf.get_pixel(x as u32, y as u32)[0].clamp(0.0, 1.0)
            })
        }
    })
}

/// Unit-interval image as 16-bit grayscale.
pub fn unit_to_png16(image: &Array2<f32>) -> ImageBuffer<Luma<u16>, Vec<u16>> {
    let (h, w) = image.dim();
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        Luma([(image[[y as usize, x as usize]].clamp(0.0, 1.0) * 65535.0).round() as u16])
    })
}

/// Binary mask as 8-bit grayscale with foreground 255.
pub fn mask_to_png(mask: &Array2<u8>) -> GrayImage {
    let (h, w) = mask.dim();
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        Luma([if mask[[y as usize, x as usize]] > 0 { 255 } else { 0 }])
    })
}

/// Sidecar metadata of a persisted scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneMetadata {
    pub scene_id: String,
    pub split: Split,
    pub lo_percentile: Option<f64>,
    pub hi_percentile: Option<f64>,
    pub lo_value: Option<f64>,
    pub hi_value: Option<f64>,
    pub degenerate: bool,
}

impl SceneMetadata {
    pub fn new(scene: &LabeledScene, norm: Option<&NormalizedImage>) -> Self {
        SceneMetadata {
            scene_id: scene.scene_id.clone(),
            split: scene.split,
            lo_percentile: norm.map(|n| n.lo_percentile),
            hi_percentile: norm.map(|n| n.hi_percentile),
            lo_value: norm.map(|n| n.lo_value),
            hi_value: norm.map(|n| n.hi_value),
            degenerate: norm.is_some_and(|n| n.degenerate),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("scene_id={}\nsplit={}\n", self.scene_id, self.split);
        let fields = [
            ("lo_percentile", self.lo_percentile),
            ("hi_percentile", self.hi_percentile),
            ("lo_value", self.lo_value),
            ("hi_value", self.hi_value),
        ];
        for (key, value) in fields {
            if let Some(v) = value {
                out.push_str(&format!("{key}={v}\n"));
            }
        }
        out.push_str(&format!("degenerate={}\n", self.degenerate));
        out
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Malformed {
                what: source.to_string(),
                line: n + 1,
                detail: "expected key=value".into(),
            })?;
            kv.insert(k.trim().to_string(), (n + 1, v.trim().to_string()));
        }
        let num = |key: &str| -> Result<Option<f64>> {
            kv.get(key)
                .map(|(line, v)| {
                    v.parse::<f64>().map_err(|e| Error::Malformed {
                        what: source.to_string(),
                        line: *line,
                        detail: format!("{key}: {e}"),
                    })
                })
                .transpose()
        };
        let scene_id = kv
            .get("scene_id")
            .map(|(_, v)| v.clone())
            .ok_or_else(|| Error::Malformed {
                what: source.to_string(),
                line: 0,
                detail: "missing scene_id".into(),
            })?;
        let split = match kv.get("split") {
            Some((_, v)) => v.parse()?,
            None => Split::Train,
        };
        Ok(SceneMetadata {
            scene_id,
            split,
            lo_percentile: num("lo_percentile")?,
            hi_percentile: num("hi_percentile")?,
            lo_value: num("lo_value")?,
            hi_value: num("hi_value")?,
            degenerate: kv.get("degenerate").is_some_and(|(_, v)| v == "true"),
        })
    }
}

/// One line of the dataset manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub scene_id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub split: Split,
}

impl ManifestEntry {
    pub fn load(&self) -> Result<LabeledScene> {
        let image = read_unit_image(&self.image)?;
        super::pair_with_mask(image, &self.mask, &self.scene_id, self.split)
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut entries = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if record.get(0) == Some("scene_id") {
            continue;
        }
        if record.len() != 4 {
            return Err(Error::Malformed {
                what: path.display().to_string(),
                line,
                detail: format!("expected 4 fields, found {}", record.len()),
            });
        }
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        entries.push(ManifestEntry {
            scene_id: record[0].to_string(),
            image: resolve(&record[1]),
            mask: resolve(&record[2]),
            split: record[3].parse().map_err(|e: Error| Error::Malformed {
                what: path.display().to_string(),
                line,
                detail: e.to_string(),
            })?,
        });
    }
    Ok(entries)
}

fn absolute(p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir().map_or_else(|_| p.to_path_buf(), |cwd| cwd.join(p))
    }
}

/// Writes a manifest with a header line. Paths inside the manifest's folder are
/// stored relative to it, others as absolute paths.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let base = absolute(path.parent().unwrap_or(Path::new(".")));
    let rel = |p: &Path| -> String {
        let abs = absolute(p);
        abs.strip_prefix(&base)
            .map(Path::to_path_buf)
            .unwrap_or(abs)
            .to_string_lossy()
            .into_owned()
    };
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["scene_id", "image_path", "mask_path", "split"])?;
    for e in entries {
        writer.write_record([
            e.scene_id.as_str(),
            &rel(&e.image),
            &rel(&e.mask),
            e.split.as_str(),
        ])?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

impl LabeledScene {
    /// Writes the scene's image, mask and metadata into `dir`.
    pub fn save(&self, dir: &Path, norm: Option<&NormalizedImage>) -> Result<ManifestEntry> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let image = dir.join(format!("{}_image.png", self.scene_id));
        let mask = dir.join(format!("{}_mask.png", self.scene_id));
        let meta = dir.join(format!("{}.meta", self.scene_id));
        unit_to_png16(&self.image).save(&image)?;
        mask_to_png(&self.mask).save(&mask)?;
        fs::write(&meta, SceneMetadata::new(self, norm).to_text())
            .map_err(|e| Error::io(&meta, e))?;
        Ok(ManifestEntry {
            scene_id: self.scene_id.clone(),
            image,
            mask,
            split: self.split,
        })
    }

    /// Reads a scene written by [`save`](Self::save).
    pub fn load(dir: &Path, scene_id: &str) -> Result<(Self, SceneMetadata)> {
        let meta_path = dir.join(format!("{scene_id}.meta"));
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta = SceneMetadata::parse(&text, &meta_path.display().to_string())?;
        let entry = ManifestEntry {
            scene_id: meta.scene_id.clone(),
            image: dir.join(format!("{scene_id}_image.png")),
            mask: dir.join(format!("{scene_id}_mask.png")),
            split: meta.split,
        };
        Ok((entry.load()?, meta))
    }
}
