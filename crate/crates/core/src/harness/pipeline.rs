use std::fs;
use std::path::Path;

use crate::blobpipe::{factorize, pgm, Factorization, RefineParams};
use crate::error::{Error, Result};
use crate::geometry::{full_face_mask, read_pose_file};
use crate::grid::BinaryMask;
use crate::tensor::Tensor;

/// Source of the full-face mask.
#[derive(Clone, Copy, Debug)]
pub enum FullFace<'a> {
    Mask(&'a Path),
    Pose(&'a Path),
}

pub const FULL_FILE: &str = "full.pgm";
pub const RESIDUAL_FILE: &str = "residual.pgm";
pub const REFINED_FILE: &str = "refined.pgm";
pub const LABELS_FILE: &str = "labels.pgm";
pub const BLOBS_FILE: &str = "blobs.cseg";

/// Build the full-face mask, factorize it against the teacher mask and
/// write every intermediate to `out_dir`.
pub fn pipeline_run(
    full: FullFace<'_>,
    teacher_path: &Path,
    out_dir: &Path,
    params: &RefineParams,
) -> Result<Factorization> {
    let teacher = pgm::read_mask(teacher_path)?;
    let full_mask: BinaryMask = match full {
        FullFace::Mask(p) => pgm::read_mask(p)?,
        FullFace::Pose(p) => {
            let (pose, shape) = read_pose_file(p)?;
            full_face_mask(&pose, &shape, teacher.height(), teacher.width())?
        }
    };
    let fact = factorize(&full_mask, &teacher, params)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    pgm::write_mask(out_dir.join(FULL_FILE), &full_mask)?;
    pgm::write_mask(out_dir.join(RESIDUAL_FILE), &fact.residual)?;
    pgm::write_mask(out_dir.join(REFINED_FILE), &fact.refined)?;
    pgm::write_labels(out_dir.join(LABELS_FILE), &fact.labels)?;
    Tensor::from_grid(fact.blobs.ids()).write(out_dir.join(BLOBS_FILE))?;
    Ok(fact)
}
