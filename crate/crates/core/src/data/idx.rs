//! Classic IDX files (big-endian magic and dimensions followed by raw bytes).

use std::path::Path;

use super::{Dataset, Split};
use crate::tensor::Tensor;
use crate::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw image payload of an IDX3 file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn header(bytes: &[u8], magic: u32, dims: usize, what: &str) -> Result<Vec<usize>> {
    let need = 4 * (1 + dims);
    if bytes.len() < need {
        return Err(Error::Idx(format!("{what}: header truncated ({} bytes)", bytes.len())));
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    if word(0) != magic {
        return Err(Error::Idx(format!("{what}: bad magic {:#010x}, expected {magic:#010x}", word(0))));
    }
    Ok((1..=dims).map(|i| word(i) as usize).collect())
}

fn payload<'a>(bytes: &'a [u8], offset: usize, len: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < offset + len {
        return Err(Error::Idx(format!(
            "{what}: truncated payload, {} of {len} bytes present",
            bytes.len().saturating_sub(offset)
        )));
    }
    Ok(&bytes[offset..offset + len])
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let d = header(bytes, IMAGES_MAGIC, 3, "images")?;
    let (count, rows, cols) = (d[0], d[1], d[2]);
    let pixels = payload(bytes, 16, count * rows * cols, "images")?.to_vec();
    Ok(IdxImages { count, rows, cols, pixels })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let d = header(bytes, LABELS_MAGIC, 1, "labels")?;
    Ok(payload(bytes, 8, d[0], "labels")?.to_vec())
}

pub fn write_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for w in [IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&w.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an image/label IDX pair scaled to `[0, 1]` by `/255`. With
/// `limit_per_class` only the first that many samples of each class (in file
/// order) are kept.
pub fn load_mnist_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    limit_per_class: Option<usize>,
    split: Split,
) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = parse_idx_images(&read(ip)?)?;
    let labels = parse_idx_labels(&read(lp)?)?;
    if images.count != labels.len() {
        return Err(Error::Idx(format!(
            "{} images but {} labels",
            images.count,
            labels.len()
        )));
    }
    if images.count == 0 {
        return Err(Error::Idx("empty IDX files".into()));
    }
    let classes = labels.iter().map(|&y| y as usize + 1).max().unwrap_or(0).max(10);
    let per = images.rows * images.cols;
    let mut taken = vec![0usize; classes];
    let mut data = Vec::new();
    let mut ys = Vec::new();
    for (i, &y) in labels.iter().enumerate() {
        let y = y as usize;
        if limit_per_class.is_some_and(|k| taken[y] >= k) {
            continue;
        }
        taken[y] += 1;
        data.extend(images.pixels[i * per..(i + 1) * per].iter().map(|&b| f64::from(b) / 255.0));
        ys.push(y);
    }
    if ys.is_empty() {
        return Err(Error::Idx("no samples selected".into()));
    }
    let inputs = Tensor::from_parts(vec![ys.len(), per], data)?;
    Dataset::new(
        inputs,
        ys,
        vec![1, images.rows, images.cols],
        classes,
        split,
        format!("idx:{}", ip.display()),
    )
}
