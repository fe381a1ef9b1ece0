//! Helpers shared by the integration test targets: synthetic IDX datasets
//! and a small two-layer experiment config pointing at them.

use std::path::{Path, PathBuf};

pub fn write_idx_pair(
    dir: &Path,
    rows: usize,
    cols: usize,
    images: &[Vec<u8>],
    labels: &[u8],
) -> (PathBuf, PathBuf) {
    let img_path = dir.join("images-idx3-ubyte");
    let lbl_path = dir.join("labels-idx1-ubyte");
    let mut img = Vec::new();
    img.extend_from_slice(&0x0000_0803u32.to_be_bytes());
    img.extend_from_slice(&(images.len() as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    for im in images {
        assert_eq!(im.len(), rows * cols);
        img.extend_from_slice(im);
    }
    std::fs::write(&img_path, img).unwrap();
    let mut lbl = Vec::new();
    lbl.extend_from_slice(&0x0000_0801u32.to_be_bytes());
    lbl.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lbl.extend_from_slice(labels);
    std::fs::write(&lbl_path, lbl).unwrap();
    (img_path, lbl_path)
}

/// Deterministic striped 10x10 images in three classes.
pub fn synthetic_dataset(dir: &Path) -> (PathBuf, PathBuf) {
    let mut state = 0x8421_1133u64;
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 33) as u8
    };
    let images: Vec<Vec<u8>> = (0..48)
        .map(|i| {
            (0..100)
                .map(|k| if (k + i) % 7 < 3 { next() } else { 0 })
                .collect()
        })
        .collect();
    let labels: Vec<u8> = (0..48).map(|i| (i % 3) as u8).collect();
    write_idx_pair(dir, 10, 10, &images, &labels)
}

/// Two small layers, two epochs, the synthetic files as both train and test.
pub fn synthetic_config(dir: &Path, img: &Path, lbl: &Path, extra: &str) -> PathBuf {
    let conf_path = dir.join("run.conf");
    std::fs::write(
        &conf_path,
        format!(
            "[model]\nlayers = 2\nclasses = 3\n\
             [layer 1]\nf_out = 6\nsupport = 5\norder = 2\nstride = 2\n\
             [layer 2]\nf_out = 6\nsupport = 5\norder = 2\nstride = 2\n\
             [train]\nepochs = 2\nbatch_size = 16\nseed = 12\n\
             [data]\ntrain_images = {img}\ntrain_labels = {lbl}\n\
             test_images = {img}\ntest_labels = {lbl}\n{extra}",
            img = img.display(),
            lbl = lbl.display(),
        ),
    )
    .unwrap();
    conf_path
}

pub fn gdnet_bin() -> &'static str {
    env!("CARGO_BIN_EXE_gdnet")
}
