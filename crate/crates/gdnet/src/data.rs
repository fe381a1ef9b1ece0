//! IDX-format image/label ingestion and deterministic subsetting.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use std::io::Read;
use std::path::Path;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug)]
pub struct Dataset {
    /// One rows x cols x 1 tensor per image, pixel bytes scaled by 1/255.
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(buf)
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path, what: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Truncated {
            path: path.display().to_string(),
            detail: format!("missing {what}"),
        });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Reads an IDX image file (magic 0x803) and its label file (magic 0x801)
/// into a dataset; pixels are scaled to [0, 1].
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img_bytes = read_file(images_path)?;
    let magic = be_u32(&img_bytes, 0, images_path, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            path: images_path.display().to_string(),
            found: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let count = be_u32(&img_bytes, 4, images_path, "image count")? as usize;
    let rows = be_u32(&img_bytes, 8, images_path, "row count")? as usize;
    let cols = be_u32(&img_bytes, 12, images_path, "column count")? as usize;
    let need = 16 + count * rows * cols;
    if img_bytes.len() < need {
        return Err(Error::Truncated {
            path: images_path.display().to_string(),
            detail: format!(
                "{count} images of {rows}x{cols} need {need} bytes, file has {}",
                img_bytes.len()
            ),
        });
    }

    let lbl_bytes = read_file(labels_path)?;
    let magic = be_u32(&lbl_bytes, 0, labels_path, "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            path: labels_path.display().to_string(),
            found: magic,
            expected: IDX_LABELS_MAGIC,
        });
    }
    let lbl_count = be_u32(&lbl_bytes, 4, labels_path, "label count")? as usize;
    if lbl_bytes.len() < 8 + lbl_count {
        return Err(Error::Truncated {
            path: labels_path.display().to_string(),
            detail: format!(
                "{lbl_count} labels need {} bytes, file has {}",
                8 + lbl_count,
                lbl_bytes.len()
            ),
        });
    }
    if count != lbl_count {
        return Err(Error::CountMismatch {
            images: count,
            labels: lbl_count,
        });
    }

    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let start = 16 + i * rows * cols;
        let data = img_bytes[start..start + rows * cols]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect();
        images.push(Tensor::from_vec(rows, cols, 1, data)?);
    }
    let labels: Vec<usize> = lbl_bytes[8..8 + count].iter().map(|&b| b as usize).collect();
    let class_count = labels.iter().max().map_or(0, |&m| m + 1);
    Ok(Dataset {
        images,
        labels,
        class_count,
    })
}

/// Draws n items without replacement, deterministically for a given seed
/// (partial Fisher-Yates over the index array).
pub fn subset(data: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n > data.len() {
        return Err(Error::SubsetTooLarge {
            requested: n,
            available: data.len(),
        });
    }
    let mut rng = Rng::new(seed);
    let mut idx: Vec<usize> = (0..data.len()).collect();
    for i in 0..n {
        let j = i + rng.below(idx.len() - i);
        idx.swap(i, j);
    }
    idx.truncate(n);
    Ok(Dataset {
        images: idx.iter().map(|&i| data.images[i].clone()).collect(),
        labels: idx.iter().map(|&i| data.labels[i]).collect(),
        class_count: data.class_count,
    })
}
