//! PNG and CSV artifacts.

use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::{Array2, Array4, Axis};

use crate::error::{arg_err, Error, Result};

/// Distinct colors for class indices; the last one is reserved for indices
/// past the palette (the garbage class included).
const PALETTE: [[u8; 3]; 11] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [188, 189, 34],
    [23, 190, 207],
    [250, 220, 60],
    [127, 127, 127],
];

pub fn class_color(class: usize) -> Rgb<u8> {
    Rgb(PALETTE[class.min(PALETTE.len() - 1)])
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    img.save(path).map_err(|e| Error::Image(e.to_string()))
}

/// Tiles unit-range images row-major into a grid with `cols` columns and a
/// one-pixel gap.
pub fn save_image_grid(images: &Array4<f32>, cols: usize, path: &Path) -> Result<()> {
    let (n, c, h, w) = images.dim();
    if n == 0 || cols == 0 {
        return arg_err("grid needs at least one image and one column");
    }
    if c != 1 && c != 3 {
        return arg_err(format!("cannot render {c}-channel images"));
    }
    let rows = n.div_ceil(cols);
    let cols = cols.min(n);
    let mut img = RgbImage::from_pixel((cols * (w + 1) + 1) as u32, (rows * (h + 1) + 1) as u32, Rgb([255, 255, 255]));
    let byte = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    for (k, im) in images.axis_iter(Axis(0)).enumerate() {
        let (ox, oy) = ((k % cols) * (w + 1) + 1, (k / cols) * (h + 1) + 1);
        for y in 0..h {
            for x in 0..w {
                let px = if c == 1 {
                    let v = byte(im[[0, y, x]]);
                    [v, v, v]
                } else {
                    [byte(im[[0, y, x]]), byte(im[[1, y, x]]), byte(im[[2, y, x]])]
                };
                img.put_pixel((ox + x) as u32, (oy + y) as u32, Rgb(px));
            }
        }
    }
    save(&img, path)
}

/// Scatter plot of `[M, 2]` points colored by group index.
pub fn save_scatter(points: &Array2<f64>, groups: &[usize], size: u32, path: &Path) -> Result<()> {
    if points.ncols() != 2 || points.nrows() != groups.len() {
        return arg_err("scatter needs [M, 2] points and one group per point");
    }
    let mut img = RgbImage::from_pixel(size, size, Rgb([255, 255, 255]));
    if points.nrows() == 0 {
        return save(&img, path);
    }
    let range = |col: usize| {
        let c = points.column(col);
        let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, (hi - lo).max(1e-12))
    };
    let ((x0, xs), (y0, ys)) = (range(0), range(1));
    let margin = 4.0;
    let span = f64::from(size) - 2.0 * margin - 1.0;
    for (p, &g) in points.rows().into_iter().zip(groups) {
        let cx = (margin + (p[0] - x0) / xs * span) as i64;
        // image rows grow downward
        let cy = (margin + (1.0 - (p[1] - y0) / ys) * span) as i64;
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (x, y) = (cx + dx, cy + dy);
                if (0..i64::from(size)).contains(&x) && (0..i64::from(size)).contains(&y) {
                    img.put_pixel(x as u32, y as u32, class_color(g));
                }
            }
        }
    }
    save(&img, path)
}

/// Heatmap of `values` (rows top to bottom), white at the minimum and dark
/// blue at the maximum, each cell drawn as a `cell × cell` block.
pub fn save_heatmap(values: &Array2<f64>, cell: u32, path: &Path) -> Result<()> {
    let (r, c) = values.dim();
    if r == 0 || c == 0 || cell == 0 {
        return arg_err("heatmap needs a non-empty matrix and a positive cell size");
    }
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut img = RgbImage::new(c as u32 * cell, r as u32 * cell);
    for ((i, j), &v) in values.indexed_iter() {
        let px = if v.is_finite() {
            let t = (v - lo) / span;
            let mix = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
            Rgb([mix(255.0, 8.0), mix(255.0, 48.0), mix(255.0, 107.0)])
        } else {
            Rgb([200, 0, 0])
        };
        for dy in 0..cell {
            for dx in 0..cell {
                img.put_pixel(j as u32 * cell + dx, i as u32 * cell + dy, px);
            }
        }
    }
    save(&img, path)
}

/// Class map with row 0 drawn at the bottom, matching ascending y.
pub fn save_class_map(classes: &Array2<usize>, path: &Path) -> Result<()> {
    let (r, c) = classes.dim();
    if r == 0 || c == 0 {
        return arg_err("empty class map");
    }
    let img = RgbImage::from_fn(c as u32, r as u32, |x, y| class_color(classes[[r - 1 - y as usize, x as usize]]));
    save(&img, path)
}

/// Writes a header line and one line per row.
pub fn write_csv<I, R>(path: &Path, header: &str, rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: Display,
{
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "{header}")?;
    for row in rows {
        writeln!(f, "{row}")?;
    }
    f.flush()?;
    Ok(())
}

/// Comma-joined values.
pub fn join<T: Display>(values: impl IntoIterator<Item = T>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}
