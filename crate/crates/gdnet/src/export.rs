//! Kernel-grid export for offline inspection: one P2 portable graymap plus
//! one raw float matrix per basis kernel.

use crate::error::{Error, Result};
use crate::kernel::KernelGrid;
use crate::layer::LayerParams;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Min-max normalizes a grid to 0..=255; a zero-range grid maps to mid-gray.
pub fn to_graymap(grid: &KernelGrid) -> String {
    let lo = grid.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = grid.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let mut out = format!("P2\n{} {}\n255\n", grid.support, grid.support);
    for row in grid.values.chunks(grid.support) {
        let line: Vec<String> = row
            .iter()
            .map(|&v| {
                let g = if range > 0.0 {
                    ((v - lo) / range * 255.0).round() as u32
                } else {
                    128
                };
                g.to_string()
            })
            .collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

/// Unnormalized values, one grid row per line, 12 significant digits.
pub fn to_float_matrix(grid: &KernelGrid) -> String {
    let mut out = String::new();
    for row in grid.values.chunks(grid.support) {
        let line: Vec<String> = row.iter().map(|&v| format!("{v:.11e}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn parse_float_matrix(text: &str) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|_| Error::MalformedModel {
                line: 0,
                msg: format!("bad float `{t}` in kernel dump"),
            })
        })
        .collect()
}

/// Writes `{prefix}_b{b}_p{p}_q{q}.pgm` and `.txt` for every kernel of every
/// basis of one layer; returns the created paths.
pub fn export_kernels(params: &LayerParams, prefix: &str) -> Result<Vec<PathBuf>> {
    let grids = params.sample_grids()?;
    let mut written = Vec::new();
    for (b, (spec, basis)) in params.bases.iter().zip(&grids).enumerate() {
        for (&(p, q), grid) in spec.derivation_orders.iter().zip(basis) {
            let base = format!("{prefix}_b{b}_p{p}_q{q}");
            let pgm = PathBuf::from(format!("{base}.pgm"));
            std::fs::write(&pgm, to_graymap(grid))
                .map_err(|e| Error::io(pgm.display().to_string(), e))?;
            written.push(pgm);
            let txt = PathBuf::from(format!("{base}.txt"));
            std::fs::write(&txt, to_float_matrix(grid))
                .map_err(|e| Error::io(txt.display().to_string(), e))?;
            written.push(txt);
        }
    }
    Ok(written)
}

/// Convenience for reading one exported float dump back.
pub fn load_float_matrix(path: &Path) -> Result<Vec<f64>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_float_matrix(&text)
}
