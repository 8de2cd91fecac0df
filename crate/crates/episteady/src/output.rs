//! Deterministic serialization: CSV tables with 17-significant-digit floats,
//! key = value metadata records, and 8-bit PGM heatmaps.

use crate::error::{Result, SimError};
use crate::grid::Grid;
use std::io::Write;
use std::path::Path;

/// Render a float with 17 significant digits (round-trips f64 exactly), so
/// reruns produce bitwise-identical files.
pub fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Write a nodal table `x[,y],<names...>` with one row per node in node order.
pub fn write_node_csv(
    path: &Path,
    grid: &Grid,
    columns: &[(&str, &[f64])],
) -> Result<()> {
    for (name, col) in columns {
        if col.len() != grid.n_nodes() {
            return Err(SimError::config(format!(
                "column {name} has {} entries for {} nodes",
                col.len(),
                grid.n_nodes()
            )));
        }
    }
    let mut out = String::new();
    out.push('x');
    if grid.dim == 2 {
        out.push_str(",y");
    }
    for (name, _) in columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for node in 0..grid.n_nodes() {
        let (x, y) = grid.coords(node);
        out.push_str(&fmt_g17(x));
        if grid.dim == 2 {
            out.push(',');
            out.push_str(&fmt_g17(y));
        }
        for (_, col) in columns {
            out.push(',');
            out.push_str(&fmt_g17(col[node]));
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Write a text file as-is (used for reports that carry their own header).
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

/// Write a key = value metadata record (one pair per line).
pub fn write_meta(path: &Path, pairs: &[(&str, String)]) -> Result<()> {
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(v);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| SimError::io(dir.display().to_string(), e))?;
        }
    }
    let mut f = std::fs::File::create(path)
        .map_err(|e| SimError::io(path.display().to_string(), e))?;
    f.write_all(bytes).map_err(|e| SimError::io(path.display().to_string(), e))?;
    Ok(())
}

/// An 8-bit grayscale raster of a nodal field over the grid's bounding box.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first (top = maximum y).
    pub pixels: Vec<u8>,
}

/// Map a field linearly onto 0..=255 (round half up); masked-out cells are 0;
/// a constant field renders as 128 everywhere it is defined.
pub fn heatmap(grid: &Grid, values: &[f64]) -> HeatmapImage {
    assert_eq!(values.len(), grid.n_nodes());
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = grid.nx;
    let height = grid.ny;
    let mut pixels = vec![0u8; width * height];
    for row in 0..height {
        let iy = height - 1 - row; // top row = maximum y
        for ix in 0..width {
            let px = &mut pixels[row * width + ix];
            if let Some(node) = grid.node_at(ix, iy) {
                *px = if hi > lo {
                    let t = (values[node] - lo) / (hi - lo);
                    // f64::round is half-away-from-zero; t >= 0 so this is half-up.
                    (255.0 * t).round().clamp(0.0, 255.0) as u8
                } else {
                    128
                };
            }
        }
    }
    HeatmapImage { width, height, pixels }
}

/// Serialize a heatmap as binary PGM (P5).
pub fn pgm_bytes(img: &HeatmapImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Write a field straight to a PGM file.
pub fn write_heatmap(path: &Path, grid: &Grid, values: &[f64]) -> Result<()> {
    write_atomic(path, &pgm_bytes(&heatmap(grid, values)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{DomainSpec, Grid};

    #[test]
    fn g17_round_trips() {
        for &x in &[0.1, 1.0 / 3.0, std::f64::consts::PI, 1e-300, -7.25e3, 0.0] {
            let s = fmt_g17(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back, x, "{s}");
        }
    }

    #[test]
    fn heatmap_basics() {
        let g = Grid::build(&DomainSpec::Rectangle { lx: 1.0, ly: 1.0, nx: 3, ny: 3 }).unwrap();
        // Field = y: top row must be brightest.
        let f: Vec<f64> = (0..g.n_nodes()).map(|i| g.coords(i).1).collect();
        let img = heatmap(&g, &f);
        assert_eq!((img.width, img.height), (3, 3));
        assert_eq!(&img.pixels[0..3], &[255, 255, 255]);
        assert_eq!(&img.pixels[6..9], &[0, 0, 0]);
        assert_eq!(img.pixels[3], 128); // middle row exactly halfway -> 127.5 rounds up
        let constant = heatmap(&g, &vec![2.0; g.n_nodes()]);
        assert!(constant.pixels.iter().all(|&p| p == 128));
        let bytes = pgm_bytes(&img);
        assert!(bytes.starts_with(b"P5\n3 3\n255\n"));
        assert_eq!(bytes.len(), b"P5\n3 3\n255\n".len() + 9);
    }

    #[test]
    fn masked_cells_render_black() {
        let g = Grid::build(&DomainSpec::Disk { radius: 1.0, n: 8 }).unwrap();
        let f = vec![1.0; g.n_nodes()];
        let img = heatmap(&g, &f);
        // Corners of the bounding box are outside the disk.
        assert_eq!(img.pixels[0], 0);
        assert_eq!(img.pixels[img.pixels.len() - 1], 0);
        // Center cells are defined and constant -> 128.
        let mid = (img.height / 2) * img.width + img.width / 2;
        assert_eq!(img.pixels[mid], 128);
    }
}
