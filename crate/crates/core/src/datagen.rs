//! Desk-scale corpora: procedural "real" images, generator-made fakes,
//! dataset splits with manifests, and bit-exact 8-bit PNG persistence.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::img::Image;
use crate::models::{self, GeneratorParams, ImageSet, ModelError};
use crate::tensor::{child_seed, fnv1a64};

pub const IMG_SIZE: usize = 64;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("dataset root {0}: {1}")]
    Root(PathBuf, String),
    #[error("png {path}: {msg}")]
    Png { path: String, msg: String },
    #[error("manifest {path}, line {line}: {msg}")]
    Manifest { path: String, line: usize, msg: String },
    #[error("counts must be at least 100 per class, got real={real} fake={fake}")]
    TooSmall { real: usize, fake: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn name(&self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    /// Path relative to the dataset root.
    pub path: String,
    pub label: Label,
    pub split: Split,
    /// Per-image child seed used to synthesize it.
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub seed: u64,
}

impl Dataset {
    pub fn count(&self, split: Split, label: Label) -> usize {
        self.entries.iter().filter(|e| e.split == split && e.label == label).count()
    }

    /// FNV-1a over the manifest text; identifies the dataset in metadata.
    pub fn hash(&self) -> u64 {
        fnv1a64(manifest_csv(self).as_bytes())
    }
}

// ---- procedural "real" images ----------------------------------------------

/// Bilinear upsample of a coarse value-noise grid to the target size.
fn value_noise(rng: &mut ChaCha8Rng, grid: usize, size: usize) -> Vec<f32> {
    let g: Vec<f32> = (0..grid * grid).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut out = vec![0.0f32; size * size];
    let scale = grid as f32 / size as f32;
    for y in 0..size {
        let gy = (y as f32 + 0.5) * scale - 0.5;
        let y0 = gy.floor().clamp(0.0, (grid - 1) as f32) as usize;
        let y1 = (y0 + 1).min(grid - 1);
        let fy = (gy - y0 as f32).clamp(0.0, 1.0);
        for x in 0..size {
            let gx = (x as f32 + 0.5) * scale - 0.5;
            let x0 = gx.floor().clamp(0.0, (grid - 1) as f32) as usize;
            let x1 = (x0 + 1).min(grid - 1);
            let fx = (gx - x0 as f32).clamp(0.0, 1.0);
            out[y * size + x] = g[y0 * grid + x0] * (1.0 - fy) * (1.0 - fx)
                + g[y0 * grid + x1] * (1.0 - fy) * fx
                + g[y1 * grid + x0] * fy * (1.0 - fx)
                + g[y1 * grid + x1] * fy * fx;
        }
    }
    out
}

/// Multi-octave smooth noise with random color gradients and occasional sharp
/// edges; approximates a 1/f spectrum.
pub fn synth_real(rng: &mut ChaCha8Rng) -> Image {
    let n = IMG_SIZE;
    // shared luminance field: octaves with halving amplitude
    let mut lum = vec![0.0f32; n * n];
    for (k, grid) in [4usize, 8, 16, 32, 64].iter().enumerate() {
        let amp = 0.5f32.powi(k as i32);
        let noise = value_noise(rng, *grid, n);
        for (l, v) in lum.iter_mut().zip(&noise) {
            *l += amp * v;
        }
    }

    // global color gradient between two random colors along a random direction
    let c0: [f32; 3] =
        [rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85)];
    let c1: [f32; 3] =
        [rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85)];
    let theta = rng.gen_range(0.0..std::f32::consts::TAU);
    let (dx, dy) = (theta.cos(), theta.sin());

    // occasional sharp edge: half-plane or disc step in luminance
    let edge = if rng.gen_bool(0.35) {
        let cx = rng.gen_range(0.2..0.8) * n as f32;
        let cy = rng.gen_range(0.2..0.8) * n as f32;
        let contrast = rng.gen_range(0.15..0.35) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        if rng.gen_bool(0.5) {
            let phi = rng.gen_range(0.0..std::f32::consts::TAU);
            Some((cx, cy, phi.cos(), phi.sin(), f32::NAN, contrast))
        } else {
            let r = rng.gen_range(0.15..0.4) * n as f32;
            Some((cx, cy, 0.0, 0.0, r, contrast))
        }
    } else {
        None
    };

    // low-frequency chroma fields
    let chroma_a = value_noise(rng, 8, n);
    let chroma_b = value_noise(rng, 8, n);

    let mut img = Image::zeros(n, n);
    for y in 0..n {
        for x in 0..n {
            let t = ((x as f32 * dx + y as f32 * dy) / n as f32 + 1.0) / 2.0;
            let t = t.clamp(0.0, 1.0);
            let mut l = 0.5 * lum[y * n + x];
            if let Some((cx, cy, ex, ey, r, contrast)) = edge {
                let d = if r.is_nan() {
                    (x as f32 - cx) * ex + (y as f32 - cy) * ey
                } else {
                    ((x as f32 - cx).powi(2) + (y as f32 - cy).powi(2)).sqrt() - r
                };
                // soft step ~1px wide
                l += contrast / (1.0 + (-d * 2.0).exp());
            }
            let ca = 0.12 * chroma_a[y * n + x];
            let cb = 0.12 * chroma_b[y * n + x];
            let chroma = [ca, -0.5 * ca + 0.8 * cb, -0.5 * ca - 0.8 * cb];
            for c in 0..3 {
                let base = c0[c] * (1.0 - t) + c1[c] * t;
                img.set(c, y, x, (base + l + chroma[c]).clamp(0.0, 1.0));
            }
        }
    }
    img
}

// ---- 8-bit quantization and PNG persistence ---------------------------------

/// `round(v * 255) / 255`, round half away from zero (f32::round's rule).
pub fn quantize8(image: &Image) -> Image {
    let mut out = image.clone();
    for v in out.tensor_mut().data_mut() {
        *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }
    out
}

pub fn is_quantized8(image: &Image) -> bool {
    image.tensor().data().iter().all(|&v| {
        let q = (v * 255.0).round() / 255.0;
        v == q
    })
}

/// Writes an 8-bit RGB PNG (quantizing first).
pub fn save_png(path: &Path, image: &Image) -> Result<(), DatagenError> {
    let (h, w) = (image.height(), image.width());
    let mut bytes = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                bytes.push((image.get(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    let file = fs::File::create(path).map_err(|e| DatagenError::Png {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let encoder = image::codecs::png::PngEncoder::new(BufWriter::new(file));
    image::ImageEncoder::write_image(
        encoder,
        &bytes,
        w as u32,
        h as u32,
        image::ColorType::Rgb8,
    )
    .map_err(|e| DatagenError::Png { path: path.display().to_string(), msg: e.to_string() })
}

pub fn load_png(path: &Path) -> Result<Image, DatagenError> {
    let reject = |msg: String| DatagenError::Png { path: path.display().to_string(), msg };
    let dynimg = image::open(path).map_err(|e| reject(e.to_string()))?;
    let rgb = dynimg.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut img = Image::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let p = rgb.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                img.set(c, y, x, p.0[c] as f32 / 255.0);
            }
        }
    }
    Ok(img)
}

// ---- dataset build ----------------------------------------------------------

fn split_of(index: usize) -> Split {
    match index % 10 {
        8 => Split::Val,
        9 => Split::Test,
        _ => Split::Train,
    }
}

pub fn manifest_csv(ds: &Dataset) -> String {
    let mut out = String::from("path,label,split,seed\n");
    for e in &ds.entries {
        out.push_str(&format!("{},{},{},{}\n", e.path, e.label.name(), e.split.name(), e.seed));
    }
    out
}

/// Synthesizes `n_real` procedural reals and `n_fake` generator samples,
/// writes them as 8-bit PNGs under `root/{split}/{label}/NNNNN.png` with a
/// manifest, deterministically under `seed`.
pub fn build_dataset(
    root: &Path,
    n_real: usize,
    n_fake: usize,
    gen_params: &GeneratorParams,
    seed: u64,
) -> Result<Dataset, DatagenError> {
    if n_real < 100 || n_fake < 100 {
        return Err(DatagenError::TooSmall { real: n_real, fake: n_fake });
    }
    fs::create_dir_all(root).map_err(|e| DatagenError::Root(root.to_path_buf(), e.to_string()))?;
    for split in [Split::Train, Split::Val, Split::Test] {
        for label in [Label::Real, Label::Fake] {
            fs::create_dir_all(root.join(split.name()).join(label.name()))?;
        }
    }

    let mut entries = Vec::with_capacity(n_real + n_fake);
    for i in 0..n_real {
        let split = split_of(i);
        entries.push(ManifestEntry {
            path: format!("{}/real/{:05}.png", split.name(), i),
            label: Label::Real,
            split,
            seed: child_seed(seed, i as u64),
        });
    }
    for i in 0..n_fake {
        let split = split_of(i);
        entries.push(ManifestEntry {
            path: format!("{}/fake/{:05}.png", split.name(), i),
            label: Label::Fake,
            split,
            seed: child_seed(seed, (n_real + i) as u64),
        });
    }

    entries.par_iter().try_for_each(|e| -> Result<(), DatagenError> {
        let mut rng = ChaCha8Rng::seed_from_u64(e.seed);
        let img = match e.label {
            Label::Real => synth_real(&mut rng),
            Label::Fake => {
                let (z, w) = models::sample_latents(gen_params, &mut rng);
                quantize8(&models::generate(gen_params, &z, &w)?)
            }
        };
        save_png(&root.join(&e.path), &img)
    })?;

    let ds = Dataset { root: root.to_path_buf(), entries, seed };
    fs::write(root.join("manifest.csv"), manifest_csv(&ds))?;
    Ok(ds)
}

/// Parses `manifest.csv` under `root`.
pub fn load_dataset(root: &Path) -> Result<Dataset, DatagenError> {
    let mpath = root.join("manifest.csv");
    let text = fs::read_to_string(&mpath).map_err(|e| DatagenError::Manifest {
        path: mpath.display().to_string(),
        line: 0,
        msg: e.to_string(),
    })?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let reject = |msg: String| DatagenError::Manifest {
            path: mpath.display().to_string(),
            line: lineno + 1,
            msg,
        };
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(reject(format!("expected 4 columns, got {}", parts.len())));
        }
        let label = match parts[1] {
            "real" => Label::Real,
            "fake" => Label::Fake,
            other => return Err(reject(format!("unknown label {other:?}"))),
        };
        let split = match parts[2] {
            "train" => Split::Train,
            "val" => Split::Val,
            "test" => Split::Test,
            other => return Err(reject(format!("unknown split {other:?}"))),
        };
        let seed =
            parts[3].parse::<u64>().map_err(|e| reject(format!("bad seed column: {e}")))?;
        entries.push(ManifestEntry { path: parts[0].into(), label, split, seed });
    }
    Ok(Dataset { root: root.to_path_buf(), entries, seed: 0 })
}

/// Decodes every image of a split into memory.
pub fn load_split(ds: &Dataset, split: Split) -> Result<ImageSet, DatagenError> {
    let selected: Vec<&ManifestEntry> = ds.entries.iter().filter(|e| e.split == split).collect();
    let images: Vec<Image> = selected
        .par_iter()
        .map(|e| load_png(&ds.root.join(&e.path)))
        .collect::<Result<_, _>>()?;
    let labels = selected.iter().map(|e| e.label == Label::Fake).collect();
    Ok(ImageSet { images, labels })
}
