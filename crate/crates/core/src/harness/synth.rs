//! Synthetic faces with occluders: a textured elliptical face over a noisy
//! background, and up to a few rectangles, ellipses or thick polylines drawn
//! over it.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ExperimentConfig;
use crate::blobpipe::{connected_components, pgm, synthesize_labels, BlobMap};
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Grid, LabelMap};
use crate::metrics::SuperpixelMap;
use crate::tensor::Tensor;

/// Side of the square blocks the super-pixel map is cut into.
const SUPERPIXEL_BLOCK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown split {s:?} (train | val | test)")))
    }

    pub fn size(self, cfg: &ExperimentConfig) -> usize {
        match self {
            Split::Train => cfg.n_train,
            Split::Val => cfg.n_val,
            Split::Test => cfg.n_test,
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Rect { cy: f64, cx: f64, hy: f64, hx: f64 },
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64 },
    Polyline { points: Vec<(f64, f64)>, half_width: f64 },
}

impl Shape {
    /// Point given as `(y, x)`.
    pub fn contains(&self, y: f64, x: f64) -> bool {
        match self {
            Shape::Rect { cy, cx, hy, hx } => (y - cy).abs() <= *hy && (x - cx).abs() <= *hx,
            Shape::Ellipse { cy, cx, ry, rx } => ((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2) <= 1.0,
            Shape::Polyline { points, half_width } => points
                .windows(2)
                .any(|s| segment_distance((y, x), s[0], s[1]) <= *half_width),
        }
    }

    pub fn mask(&self, size: usize) -> BinaryMask {
        Grid::from_fn(size, size, |i, j| self.contains(i as f64 + 0.5, j as f64 + 0.5))
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dy, dx) = (b.0 - a.0, b.1 - a.1);
    let len2 = dy * dy + dx * dx;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dy + (p.1 - a.1) * dx) / len2).clamp(0.0, 1.0)
    };
    ((p.0 - a.0 - t * dy).powi(2) + (p.1 - a.1 - t * dx).powi(2)).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneParams {
    pub face: Shape,
    pub occluders: Vec<Shape>,
    pub noise: f64,
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub image: Tensor,
    pub labels: LabelMap,
    pub blobs: BlobMap,
    pub superpixels: SuperpixelMap,
    pub params: SceneParams,
}

/// Independent stream per `(seed, split, index)`.
pub fn scene_rng(seed: u64, split: Split, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((split.stream() << 32) | index as u64);
    rng
}

fn random_occluder(rng: &mut ChaCha8Rng, face: &Shape) -> Shape {
    let Shape::Ellipse { cy, cx, ry, rx } = *face else {
        unreachable!("face is an ellipse")
    };
    // anchor inside the face ellipse
    let r = rng.random::<f64>().sqrt() * 0.8;
    let t = rng.random_range(0.0..std::f64::consts::TAU);
    let (ay, ax) = (cy + r * ry * t.sin(), cx + r * rx * t.cos());
    match rng.random_range(0..3) {
        0 => Shape::Rect {
            cy: ay,
            cx: ax,
            hy: ry * rng.random_range(0.15..0.4),
            hx: rx * rng.random_range(0.15..0.4),
        },
        1 => Shape::Ellipse {
            cy: ay,
            cx: ax,
            ry: ry * rng.random_range(0.15..0.4),
            rx: rx * rng.random_range(0.15..0.4),
        },
        _ => {
            let mut points = vec![(ay, ax)];
            for _ in 0..rng.random_range(1..3) {
                let (py, px) = *points.last().unwrap();
                let len = ry * rng.random_range(0.3..0.7);
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                points.push((py + len * a.sin(), px + len * a.cos()));
            }
            Shape::Polyline {
                points,
                half_width: rng.random_range(1.5..3.0),
            }
        }
    }
}

/// Dim, nearly grey.
fn background_colour(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let v = rng.random_range(0.0..0.3);
    [0, 1, 2].map(|_| v + rng.random_range(-0.05..0.05))
}

/// Saturated blue, green or magenta, away from skin tones.
fn occluder_colour(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let family = [[0.1, 0.2, 0.9], [0.1, 0.8, 0.2], [0.8, 0.1, 0.8]][rng.random_range(0..3)];
    family.map(|c| c + rng.random_range(-0.1..0.1))
}

pub fn generate_scene(size: usize, max_occluders: usize, noise: f64, rng: &mut ChaCha8Rng) -> Result<SyntheticScene> {
    let s = size as f64;
    let face = Shape::Ellipse {
        cy: s * rng.random_range(0.42..0.58),
        cx: s * rng.random_range(0.42..0.58),
        ry: s * rng.random_range(0.26..0.36),
        rx: s * rng.random_range(0.2..0.3),
    };
    let n_occ = rng.random_range(0..=max_occluders);
    let occluders: Vec<Shape> = (0..n_occ).map(|_| random_occluder(rng, &face)).collect();

    let face_mask = face.mask(size);
    let occ_masks: Vec<BinaryMask> = occluders.iter().map(|o| o.mask(size)).collect();
    let occluded = Grid::from_fn(size, size, |i, j| {
        *face_mask.get(i, j) && occ_masks.iter().any(|m| *m.get(i, j))
    });
    let (labels, blobs) = synthesize_labels(&face_mask, &connected_components(&occluded))?;

    let bg = background_colour(rng);
    let bg_wave = (
        rng.random_range(0.05..0.3),
        rng.random_range(0.05..0.3),
        rng.random_range(0.0..0.1),
    );
    let skin = [
        rng.random_range(0.6..0.9),
        rng.random_range(0.4..0.7),
        rng.random_range(0.3..0.6),
    ];
    let skin_wave = (rng.random_range(0.2..0.6), rng.random_range(0.2..0.6));
    let occ_colours: Vec<[f64; 3]> = (0..n_occ).map(|_| occluder_colour(rng)).collect();
    let gauss = Normal::new(0.0, noise.max(1e-12)).map_err(|e| Error::Config(e.to_string()))?;

    let mut data = vec![0.0; 3 * size * size];
    for i in 0..size {
        for j in 0..size {
            let (fi, fj) = (i as f64, j as f64);
            let owner = occ_masks
                .iter()
                .rposition(|m| *m.get(i, j))
                .filter(|_| *face_mask.get(i, j));
            let base = match owner {
                Some(o) => occ_colours[o],
                None if *face_mask.get(i, j) => {
                    let t = 0.1 * (skin_wave.0 * fi).sin() * (skin_wave.1 * fj).cos();
                    [skin[0] + t, skin[1] + t, skin[2] + t]
                }
                None => {
                    let t = bg_wave.2 * (bg_wave.0 * fi + bg_wave.1 * fj).sin();
                    [bg[0] + t, bg[1] + t, bg[2] + t]
                }
            };
            for c in 0..3 {
                let n = if noise > 0.0 { gauss.sample(rng) } else { 0.0 };
                data[(c * size + i) * size + j] = base[c] + n;
            }
        }
    }
    let image = Tensor::new(vec![3, size, size], data)?;
    let superpixels = block_superpixels(&labels, SUPERPIXEL_BLOCK)?;
    Ok(SyntheticScene {
        image,
        labels,
        blobs,
        superpixels,
        params: SceneParams { face, occluders, noise },
    })
}

/// Square blocks subdivided by ground-truth class, renumbered densely in
/// row-major order of first pixel.
pub fn block_superpixels(labels: &LabelMap, block: usize) -> Result<SuperpixelMap> {
    let (h, w) = labels.dims();
    let blocks_per_row = w.div_ceil(block);
    let mut remap = std::collections::HashMap::new();
    let ids = Grid::from_fn(h, w, |i, j| {
        let key = ((i / block) * blocks_per_row + j / block, *labels.get(i, j));
        let next = remap.len() as u32;
        *remap.entry(key).or_insert(next)
    });
    SuperpixelMap::new(ids)
}

/// One sample as stored on disk.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Tensor,
    pub labels: LabelMap,
    pub blobs: BlobMap,
    pub superpixels: SuperpixelMap,
}

pub fn sample_paths(dir: &Path, split: Split, index: usize) -> [PathBuf; 4] {
    let d = dir.join(split.name());
    [
        d.join(format!("image_{index:04}.cseg")),
        d.join(format!("label_{index:04}.pgm")),
        d.join(format!("blob_{index:04}.cseg")),
        d.join(format!("superpixel_{index:04}.cseg")),
    ]
}

fn grid_tensor(g: &Grid<u32>) -> Tensor {
    Tensor::from_grid(g)
}

/// Write every split plus `manifest.txt` (the generating config).
pub fn synth_generate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    for split in Split::ALL {
        let d = out.join(split.name());
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        for index in 0..split.size(cfg) {
            let mut rng = scene_rng(cfg.seed, split, index);
            let scene = generate_scene(cfg.image_size, cfg.max_occluders, cfg.noise, &mut rng)?;
            let [img, lbl, blob, sp] = sample_paths(out, split, index);
            scene.image.write(img)?;
            pgm::write_labels(lbl, &scene.labels)?;
            grid_tensor(scene.blobs.ids()).write(blob)?;
            grid_tensor(scene.superpixels.ids()).write(sp)?;
        }
    }
    let mut manifest = cfg.to_text();
    writeln!(manifest, "# generated dataset").unwrap();
    let path = out.join("manifest.txt");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

pub fn load_sample(dir: &Path, split: Split, index: usize) -> Result<Sample> {
    let [img, lbl, blob, sp] = sample_paths(dir, split, index);
    let image = Tensor::read(img)?;
    let labels = pgm::read_labels(lbl)?;
    let blobs = BlobMap::new(Tensor::read(blob)?.to_u32_grid()?);
    let superpixels = SuperpixelMap::from_tensor(&Tensor::read(sp)?)?;
    let (_, h, w) = image.chw()?;
    if labels.dims() != (h, w) || blobs.dims() != (h, w) || superpixels.ids().dims() != (h, w) {
        return Err(Error::Dimension(format!(
            "sample {} {index}: file dims disagree",
            split.name()
        )));
    }
    Ok(Sample {
        image,
        labels,
        blobs,
        superpixels,
    })
}

pub fn load_split(dir: &Path, split: Split, n: usize) -> Result<Vec<Sample>> {
    (0..n).map(|i| load_sample(dir, split, i)).collect()
}

/// The config a dataset directory was generated with.
pub fn read_manifest(dir: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(dir.join("manifest.txt"))
}

/// Mirror a `C x H x W` tensor left to right.
pub fn flip_tensor(t: &Tensor) -> Result<Tensor> {
    let (c, h, w) = t.chw()?;
    let src = t.data();
    let mut out = vec![0.0; src.len()];
    for row in 0..c * h {
        for j in 0..w {
            out[row * w + j] = src[row * w + (w - 1 - j)];
        }
    }
    Tensor::new(vec![c, h, w], out)
}
