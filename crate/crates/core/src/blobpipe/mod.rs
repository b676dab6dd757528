//! Occlusion factorization: residual between the full-face and teacher
//! masks, morphological refinement, connected components, and the merged
//! blob / label maps used as consensus regions.

mod components;
mod morphology;
pub mod pgm;

pub use components::{connected_components, count_components, label_regions};
pub use morphology::{dilate, erode, refine_residual, RefineParams, StructuringElement};

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Grid, LabelMap};

pub const BACKGROUND: u8 = 0;
pub const FACE: u8 = 1;
pub const OCCLUSION: u8 = 2;

/// Per-pixel blob ids. Ids may have gaps (an unoccluded face has no id 2,
/// an image filled by the face has no id 0).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlobMap {
    ids: Grid<u32>,
}

impl BlobMap {
    pub fn new(ids: Grid<u32>) -> Self {
        BlobMap { ids }
    }

    pub fn ids(&self) -> &Grid<u32> {
        &self.ids
    }

    pub fn dims(&self) -> (usize, usize) {
        self.ids.dims()
    }

    pub fn max_id(&self) -> u32 {
        self.ids.as_slice().iter().copied().max().unwrap_or(0)
    }

    /// Ids that own at least one pixel, ascending.
    pub fn present_ids(&self) -> Vec<u32> {
        let mut seen: Vec<u32> = self.ids.as_slice().to_vec();
        seen.sort_unstable();
        seen.dedup();
        seen
    }

    /// Number of non-empty blobs.
    pub fn n_blobs(&self) -> usize {
        self.present_ids().len()
    }

    /// Flat pixel indices of every non-empty blob, keyed by id.
    pub fn pixels(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut out: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (idx, &id) in self.ids.as_slice().iter().enumerate() {
            out.entry(id).or_default().push(idx);
        }
        out
    }

    pub fn flip_horizontal(&self) -> Self {
        BlobMap {
            ids: self.ids.flip_horizontal(),
        }
    }
}

/// One consensus region with its ground-truth class.
#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub id: u32,
    pub class: u8,
    pub pixels: Vec<usize>,
}

/// Group pixels by blob and check that every blob carries a single class.
pub fn blob_classes(labels: &LabelMap, blobs: &BlobMap) -> Result<Vec<Blob>> {
    labels.ensure_same_dims(blobs.ids(), "labels vs blobs")?;
    let mut out = Vec::new();
    for (id, pixels) in blobs.pixels() {
        let class = labels.as_slice()[pixels[0]];
        if let Some(&other) = pixels.iter().map(|&p| &labels.as_slice()[p]).find(|&&c| c != class) {
            return Err(Error::BlobLabel(format!("blob {id} spans classes {class} and {other}")));
        }
        out.push(Blob { id, class, pixels });
    }
    Ok(out)
}

/// `max(0, full - seg)`: face-hull pixels the teacher did not mark as face.
pub fn residual(full: &BinaryMask, seg: &BinaryMask) -> Result<BinaryMask> {
    full.ensure_same_dims(seg, "residual")?;
    let data = full
        .as_slice()
        .iter()
        .zip(seg.as_slice())
        .map(|(&f, &s)| f && !s)
        .collect();
    Grid::from_vec(full.height(), full.width(), data)
}

/// Merge the face mask with occlusion components.
///
/// Blob ids: background 0, face (face pixel not covered by an occlusion) 1,
/// occlusion component `i` -> `1 + i`. Labels follow directly:
/// id 0 -> background, 1 -> face, >= 2 -> occlusion.
pub fn synthesize_labels(face: &BinaryMask, occlusions: &BlobMap) -> Result<(LabelMap, BlobMap)> {
    face.ensure_same_dims(occlusions.ids(), "face vs occlusion components")?;
    let ids: Vec<u32> = face
        .as_slice()
        .iter()
        .zip(occlusions.ids().as_slice())
        .map(|(&f, &occ)| match (occ, f) {
            (0, true) => 1,
            (0, false) => 0,
            (n, _) => 1 + n,
        })
        .collect();
    let ids = Grid::from_vec(face.height(), face.width(), ids)?;
    let labels = ids.map(|&c| class_of_blob_id(c));
    Ok((labels, BlobMap::new(ids)))
}

pub fn class_of_blob_id(c: u32) -> u8 {
    match c {
        0 => BACKGROUND,
        1 => FACE,
        _ => OCCLUSION,
    }
}

/// Blobs straight from annotated class masks.
///
/// Without splitting, each class present becomes one blob whose id is the
/// class id. With splitting, every 8-connected same-class region becomes its
/// own blob, numbered from 0 in row-major order of first pixel.
pub fn blobs_from_labels(labels: &LabelMap, split_components: bool) -> BlobMap {
    if !split_components {
        return BlobMap::new(labels.map(|&c| c as u32));
    }
    let (h, w) = labels.dims();
    let mut ids = vec![u32::MAX; h * w];
    let mut next = 0u32;
    let mut classes: Vec<u8> = labels.as_slice().to_vec();
    classes.sort_unstable();
    classes.dedup();
    // per-class components, then a global renumbering by first pixel
    let mut per_class = Vec::new();
    for &class in &classes {
        let (comp, _) = label_regions(labels, |&v| v == class);
        per_class.push((class, comp));
    }
    let mut remap: BTreeMap<(u8, u32), u32> = BTreeMap::new();
    for idx in 0..h * w {
        let class = labels.as_slice()[idx];
        let slot = classes.binary_search(&class).expect("class listed");
        let local = per_class[slot].1.as_slice()[idx];
        let id = *remap.entry((class, local)).or_insert_with(|| {
            next += 1;
            next - 1
        });
        ids[idx] = id;
    }
    BlobMap::new(Grid::from_vec(h, w, ids).expect("dims preserved"))
}

/// Pipeline result for one image.
#[derive(Clone, Debug)]
pub struct Factorization {
    pub residual: BinaryMask,
    pub refined: BinaryMask,
    pub labels: LabelMap,
    pub blobs: BlobMap,
}

/// `full` hull mask and `teacher` face mask to labels and blobs.
pub fn factorize(full: &BinaryMask, teacher: &BinaryMask, params: &RefineParams) -> Result<Factorization> {
    let rho = residual(full, teacher)?;
    let refined = refine_residual(&rho, params);
    let comps = connected_components(&refined);
    let (labels, blobs) = synthesize_labels(teacher, &comps)?;
    Ok(Factorization {
        residual: rho,
        refined,
        labels,
        blobs,
    })
}
