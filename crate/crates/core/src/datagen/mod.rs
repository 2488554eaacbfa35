//! Category x condition image datasets.
//!
//! Images are single-channel and stored as 8-bit intensities; a pixel's value
//! is `byte / 255`, so every image lies in `[0, 1]` and storage in IDX files
//! is lossless.

mod glyph;
pub mod idx;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seeds;

pub use glyph::{render_glyph, NUM_TEMPLATES};
pub use idx::{load_idx, BaseImage, IdxArray};

/// Geometry of a procedural Grid-Positions dataset.
///
/// Condition `n` occupies grid cell `n` in row-major order. The grid may have
/// more cells than conditions (e.g. five positions on a 3x3 grid); the
/// trailing cells then stay empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub num_categories: usize,
    pub num_conditions: usize,
    pub cell_grid: (usize, usize),
    pub glyph_size: usize,
    pub canvas_size: usize,
    pub samples_per_combination: usize,
    pub noise_std: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            num_categories: 9,
            num_conditions: 9,
            cell_grid: (3, 3),
            glyph_size: 14,
            canvas_size: 42,
            samples_per_combination: 20,
            noise_std: 0.1,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let (rows, cols) = self.cell_grid;
        if self.num_categories == 0 || self.num_conditions == 0 {
            return Err(invalid("grid spec needs at least one category and one condition"));
        }
        if self.num_categories > NUM_TEMPLATES {
            return Err(invalid(format!(
                "{} categories requested, only {NUM_TEMPLATES} glyph templates exist",
                self.num_categories
            )));
        }
        if rows * cols < self.num_conditions {
            return Err(invalid(format!(
                "cell grid {rows}x{cols} cannot hold {} conditions",
                self.num_conditions
            )));
        }
        if self.glyph_size == 0 {
            return Err(invalid("glyph_size must be positive"));
        }
        if self.canvas_size < rows * self.glyph_size || self.canvas_size < cols * self.glyph_size {
            return Err(invalid(format!(
                "canvas {} too small for {rows}x{cols} cells of {} pixels",
                self.canvas_size, self.glyph_size
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(invalid("noise_std must be finite and non-negative"));
        }
        Ok(())
    }
}

/// One image with its (category, condition) label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledImage {
    pub height: usize,
    pub width: usize,
    /// Row-major 8-bit intensities.
    pub bytes: Vec<u8>,
    pub category: usize,
    pub condition: usize,
}

impl LabeledImage {
    pub fn pixel(&self, row: usize, col: usize) -> f32 {
        f32::from(self.bytes[row * self.width + col]) / 255.0
    }

    /// Pixel values in `[0, 1]`, written into `out`.
    pub fn write_pixels<T: From<f32>>(&self, out: &mut [T]) {
        for (o, &b) in out.iter_mut().zip(&self.bytes) {
            *o = T::from(f32::from(b) / 255.0);
        }
    }

    pub fn pixels(&self) -> Vec<f32> {
        self.bytes.iter().map(|&b| f32::from(b) / 255.0).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Procedural,
    IdxIngested,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub items: Vec<LabeledImage>,
    pub num_categories: usize,
    pub num_conditions: usize,
    pub height: usize,
    pub width: usize,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Number of pixels per image.
    pub fn image_len(&self) -> usize {
        self.height * self.width
    }

    /// Item counts per `(category, condition)`, indexed `[c * #N + n]`.
    pub fn combination_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_categories * self.num_conditions];
        for it in &self.items {
            counts[it.category * self.num_conditions + it.condition] += 1;
        }
        counts
    }

    /// A dataset with the same metadata holding the selected items.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            items: indices.iter().map(|&i| self.items[i].clone()).collect(),
            ..self.empty_like()
        }
    }

    pub fn empty_like(&self) -> Dataset {
        Dataset {
            items: Vec::new(),
            num_categories: self.num_categories,
            num_conditions: self.num_conditions,
            height: self.height,
            width: self.width,
            provenance: self.provenance,
        }
    }

    fn validate_labels(&self) -> Result<()> {
        for (i, it) in self.items.iter().enumerate() {
            if it.category >= self.num_categories || it.condition >= self.num_conditions {
                return Err(Error::Consistency(format!(
                    "item {i} label ({}, {}) outside {}x{}",
                    it.category, it.condition, self.num_categories, self.num_conditions
                )));
            }
            if it.height != self.height || it.width != self.width {
                return Err(Error::Consistency(format!(
                    "item {i} is {}x{}, dataset is {}x{}",
                    it.height, it.width, self.height, self.width
                )));
            }
        }
        Ok(())
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Top-left pixel of grid cell `cell` on the canvas (grid centred).
fn cell_origin(cell: usize, grid: (usize, usize), glyph: usize, canvas: usize) -> (usize, usize) {
    let (rows, cols) = grid;
    let off_y = (canvas - rows * glyph) / 2;
    let off_x = (canvas - cols * glyph) / 2;
    (off_y + (cell / cols) * glyph, off_x + (cell % cols) * glyph)
}

/// Generates the procedural Grid-Positions dataset.
///
/// Items are ordered by category, then condition, then sample index.
pub fn generate_grid_positions(spec: &GridSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = seeds::rng(seed);
    let noise = if spec.noise_std > 0.0 {
        Some(Normal::new(0.0f32, spec.noise_std as f32).map_err(|e| invalid(e.to_string()))?)
    } else {
        None
    };
    let side = spec.canvas_size;
    let g = spec.glyph_size;
    let mut items = Vec::with_capacity(
        spec.num_categories * spec.num_conditions * spec.samples_per_combination,
    );
    for c in 0..spec.num_categories {
        for n in 0..spec.num_conditions {
            let (oy, ox) = cell_origin(n, spec.cell_grid, g, side);
            for _ in 0..spec.samples_per_combination {
                let style: u64 = rng.random();
                let patch = render_glyph(c, style, g)?;
                let mut canvas = vec![0f32; side * side];
                for r in 0..g {
                    let row = &mut canvas[(oy + r) * side + ox..(oy + r) * side + ox + g];
                    row.copy_from_slice(&patch[r * g..(r + 1) * g]);
                }
                if let Some(dist) = &noise {
                    for v in canvas.iter_mut() {
                        *v += dist.sample(&mut rng);
                    }
                }
                items.push(LabeledImage {
                    height: side,
                    width: side,
                    bytes: canvas.into_iter().map(quantize).collect(),
                    category: c,
                    condition: n,
                });
            }
        }
    }
    Ok(Dataset {
        items,
        num_categories: spec.num_categories,
        num_conditions: spec.num_conditions,
        height: side,
        width: side,
        provenance: Provenance::Procedural,
    })
}

/// Bilinear resize with half-pixel centres (edge samples clamp).
pub fn resize_bilinear(src: &[f32], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(out_h * out_w);
    let sy = h as f32 / out_h as f32;
    let sx = w as f32 / out_w as f32;
    for oy in 0..out_h {
        let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f32;
        for ox in 0..out_w {
            let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f32;
            let top = src[y0 * w + x0] * (1.0 - wx) + src[y0 * w + x1] * wx;
            let bottom = src[y1 * w + x0] * (1.0 - wx) + src[y1 * w + x1] * wx;
            out.push(top * (1.0 - wy) + bottom * wy);
        }
    }
    out
}

/// Builds MNIST-Positions style data from externally supplied digit images.
///
/// The `classes_kept` smallest class ids are kept and relabelled `0..`.
/// Every kept class is truncated to the size of the smallest kept class and
/// its images are assigned to positions round-robin, so per-combination
/// counts differ by at most one.
pub fn build_positions_dataset(
    base: &[BaseImage],
    grid: (usize, usize),
    glyph_size: usize,
    canvas_size: usize,
    classes_kept: usize,
) -> Result<Dataset> {
    if base.is_empty() {
        return Err(invalid("base image list is empty"));
    }
    let num_conditions = grid.0 * grid.1;
    if num_conditions == 0 || glyph_size == 0 {
        return Err(invalid("grid and glyph size must be non-empty"));
    }
    if canvas_size < grid.0 * glyph_size || canvas_size < grid.1 * glyph_size {
        return Err(invalid("canvas too small for the requested grid"));
    }
    let mut classes: Vec<usize> = base.iter().map(|b| b.class).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes_kept == 0 || classes_kept > classes.len() {
        return Err(invalid(format!(
            "classes_kept={classes_kept} but base has {} distinct classes",
            classes.len()
        )));
    }
    classes.truncate(classes_kept);

    let per_class: Vec<Vec<&BaseImage>> = classes
        .iter()
        .map(|&cls| base.iter().filter(|b| b.class == cls).collect())
        .collect();
    let quota = per_class.iter().map(Vec::len).min().unwrap_or(0);

    let mut items = Vec::with_capacity(quota * classes_kept);
    for (category, images) in per_class.iter().enumerate() {
        for (i, img) in images.iter().take(quota).enumerate() {
            let condition = i % num_conditions;
            let patch = resize_bilinear(&img.pixels, img.height, img.width, glyph_size, glyph_size);
            let (oy, ox) = cell_origin(condition, grid, glyph_size, canvas_size);
            let mut bytes = vec![0u8; canvas_size * canvas_size];
            for r in 0..glyph_size {
                for c in 0..glyph_size {
                    bytes[(oy + r) * canvas_size + ox + c] = quantize(patch[r * glyph_size + c]);
                }
            }
            items.push(LabeledImage {
                height: canvas_size,
                width: canvas_size,
                bytes,
                category,
                condition,
            });
        }
    }
    Ok(Dataset {
        items,
        num_categories: classes_kept,
        num_conditions,
        height: canvas_size,
        width: canvas_size,
        provenance: Provenance::IdxIngested,
    })
}

const IMAGES_FILE: &str = "images.idx";
const MANIFEST_FILE: &str = "labels.jsonl";
const META_FILE: &str = "dataset.json";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestLine {
    i: usize,
    c: usize,
    n: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetMeta {
    num_categories: usize,
    num_conditions: usize,
    provenance: Provenance,
}

/// Writes `images.idx` (rank 3), `labels.jsonl` and `dataset.json` into `dir`.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    dataset.validate_labels()?;
    fs::create_dir_all(dir)?;
    let mut data = Vec::with_capacity(dataset.len() * dataset.image_len());
    for it in &dataset.items {
        data.extend_from_slice(&it.bytes);
    }
    let array = IdxArray::new(
        vec![dataset.len() as u32, dataset.height as u32, dataset.width as u32],
        data,
    )?;
    idx::write_idx(&dir.join(IMAGES_FILE), &array)?;

    let mut manifest = Vec::new();
    for (i, it) in dataset.items.iter().enumerate() {
        serde_json::to_writer(
            &mut manifest,
            &ManifestLine {
                i,
                c: it.category,
                n: it.condition,
            },
        )?;
        manifest.push(b'\n');
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)?;

    let meta = DatasetMeta {
        num_categories: dataset.num_categories,
        num_conditions: dataset.num_conditions,
        provenance: dataset.provenance,
    };
    let mut f = fs::File::create(dir.join(META_FILE))?;
    serde_json::to_writer_pretty(&mut f, &meta)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Inverse of [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta: DatasetMeta = serde_json::from_slice(&fs::read(dir.join(META_FILE))?)?;
    let images = idx::read_idx_rank(&dir.join(IMAGES_FILE), 3)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let reader = BufReader::new(fs::File::open(&manifest_path)?);
    let mut labels = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let rec: ManifestLine = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: manifest_path.clone(),
            msg: format!("line {}: {e}", line_no + 1),
        })?;
        if rec.i != labels.len() {
            return Err(Error::Consistency(format!(
                "manifest line {} has index {}, expected {}",
                line_no + 1,
                rec.i,
                labels.len()
            )));
        }
        labels.push((rec.c, rec.n));
    }
    let count = images.dims[0] as usize;
    if labels.len() != count {
        return Err(Error::Consistency(format!(
            "manifest lists {} items but {} holds {count} images",
            labels.len(),
            IMAGES_FILE
        )));
    }
    let (h, w) = (images.dims[1] as usize, images.dims[2] as usize);
    let items = labels
        .into_iter()
        .enumerate()
        .map(|(i, (c, n))| LabeledImage {
            height: h,
            width: w,
            bytes: images.data[i * h * w..(i + 1) * h * w].to_vec(),
            category: c,
            condition: n,
        })
        .collect();
    let dataset = Dataset {
        items,
        num_categories: meta.num_categories,
        num_conditions: meta.num_conditions,
        height: h,
        width: w,
        provenance: meta.provenance,
    };
    dataset.validate_labels()?;
    Ok(dataset)
}
