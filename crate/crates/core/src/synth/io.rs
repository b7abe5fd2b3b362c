//! Per-sample binary files and split directories.
//!
//! Sample file layout (little-endian):
//!
//! | bytes      | field                                   |
//! |------------|-----------------------------------------|
//! | 4          | magic `OASD`                            |
//! | 1          | version = 1                             |
//! | 2          | height (u16)                            |
//! | 2          | width (u16)                             |
//! | 1          | class count (u8)                        |
//! | 1          | domain tag (1 = source, 0 = target)     |
//! | 4·3·H·W    | image, f32, channel-major               |
//! | H·W        | labels, u8                              |
//!
//! Each split directory also carries `manifest.txt`, one file name per line.

use std::fs;
use std::path::{Path, PathBuf};

use super::style::Sample;
use crate::error::{Error, Result};
use crate::losses::DomainLabel;
use crate::tensor::Tensor;

pub const SAMPLE_MAGIC: &[u8; 4] = b"OASD";
pub const SAMPLE_VERSION: u8 = 1;
pub const SAMPLE_EXTENSION: &str = "oasd";
pub const MANIFEST_NAME: &str = "manifest.txt";
const HEADER_LEN: usize = 11;

/// A target-domain training image. Carries no labels, so training code that
/// receives it cannot look at target annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledImage {
    pub image: Tensor,
}

impl UnlabeledImage {
    pub fn batch_image(&self) -> Tensor {
        let d = self.image.dims();
        self.image
            .clone()
            .reshape([1, d[0], d[1], d[2]])
            .expect("same element count")
    }
}

impl From<&Sample> for UnlabeledImage {
    fn from(s: &Sample) -> Self {
        UnlabeledImage {
            image: s.image.clone(),
        }
    }
}

pub fn encode_sample(sample: &Sample) -> Vec<u8> {
    let (h, w) = (sample.height(), sample.width());
    let mut out = Vec::with_capacity(HEADER_LEN + 12 * h * w + h * w);
    out.extend_from_slice(SAMPLE_MAGIC);
    out.push(SAMPLE_VERSION);
    out.extend_from_slice(&(h as u16).to_le_bytes());
    out.extend_from_slice(&(w as u16).to_le_bytes());
    out.push(sample.classes as u8);
    out.push(match sample.domain {
        DomainLabel::Source => 1,
        DomainLabel::Target => 0,
    });
    for v in sample.image.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&sample.labels);
    out
}

struct Header {
    height: usize,
    width: usize,
    classes: usize,
    domain: DomainLabel,
}

fn decode_header(bytes: &[u8], path: &Path) -> Result<Header> {
    if bytes.len() < 4 || &bytes[..4] != SAMPLE_MAGIC {
        return Err(Error::Magic {
            path: path.to_path_buf(),
            expected: "OASD",
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            detail: format!("{} header bytes of {HEADER_LEN}", bytes.len()),
        });
    }
    if bytes[4] != SAMPLE_VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: bytes[4],
            expected: SAMPLE_VERSION,
        });
    }
    let height = usize::from(u16::from_le_bytes([bytes[5], bytes[6]]));
    let width = usize::from(u16::from_le_bytes([bytes[7], bytes[8]]));
    let classes = usize::from(bytes[9]);
    let domain = match bytes[10] {
        1 => DomainLabel::Source,
        0 => DomainLabel::Target,
        other => {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: format!("domain tag {other}"),
            })
        }
    };
    if height == 0 || width == 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("empty image {height}x{width}"),
        });
    }
    Ok(Header {
        height,
        width,
        classes,
        domain,
    })
}

fn decode_image(bytes: &[u8], header: &Header, path: &Path) -> Result<Tensor> {
    let len = 3 * header.height * header.width;
    let end = HEADER_LEN + 4 * len;
    if bytes.len() < end {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            detail: format!("{} bytes, image needs {end}", bytes.len()),
        });
    }
    let data = bytes[HEADER_LEN..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::from_vec([3, header.height, header.width], data)
}

pub fn decode_sample(bytes: &[u8], path: &Path) -> Result<Sample> {
    let header = decode_header(bytes, path)?;
    let image = decode_image(bytes, &header, path)?;
    let start = HEADER_LEN + 12 * header.height * header.width;
    let end = start + header.height * header.width;
    if bytes.len() != end {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            detail: format!("{} bytes, expected {end}", bytes.len()),
        });
    }
    Ok(Sample {
        image,
        labels: bytes[start..end].to_vec(),
        classes: header.classes,
        domain: header.domain,
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_sample(path: &Path, sample: &Sample) -> Result<()> {
    fs::write(path, encode_sample(sample)).map_err(|e| Error::io(path, e))
}

pub fn read_sample(path: &Path) -> Result<Sample> {
    decode_sample(&read(path)?, path)
}

/// Reads only the header and image of a sample file; label bytes are never
/// touched and may be missing.
pub fn read_image_only(path: &Path) -> Result<UnlabeledImage> {
    let bytes = read(path)?;
    let header = decode_header(&bytes, path)?;
    Ok(UnlabeledImage {
        image: decode_image(&bytes, &header, path)?,
    })
}

/// Writes `samples` as numbered files plus a manifest, creating `dir`.
pub fn write_dataset(dir: &Path, samples: &[Sample]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for (i, s) in samples.iter().enumerate() {
        let name = format!("{i:06}.{SAMPLE_EXTENSION}");
        write_sample(&dir.join(&name), s)?;
        manifest.push_str(&name);
        manifest.push('\n');
    }
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Files of a split: the manifest order if one exists, otherwise every
/// sample file sorted by name.
pub fn dataset_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let manifest = dir.join(MANIFEST_NAME);
    if manifest.is_file() {
        let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        return Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| dir.join(l))
            .collect());
    }
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == SAMPLE_EXTENSION) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    dataset_files(dir)?.iter().map(|p| read_sample(p)).collect()
}

/// Image-only view of a split, for target-domain training data.
pub fn load_images(dir: &Path) -> Result<Vec<UnlabeledImage>> {
    dataset_files(dir)?.iter().map(|p| read_image_only(p)).collect()
}
