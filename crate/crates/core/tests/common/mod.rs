//! Slow, direct reference implementations used as test oracles, plus the
//! construction of the shipped pipeline fixtures.

#![allow(dead_code)]

use std::path::PathBuf;

use cseg::geometry::{ContourShape, Hull2D, Pose};
use cseg::grid::{BinaryMask, Grid, LabelMap};
use cseg::net::descriptor::{LayerKind, LayerSpec};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Active offsets of a `h x w` rectangle centred on `(h/2, w/2)`.
pub fn rect_offsets(h: usize, w: usize) -> Vec<(isize, isize)> {
    let (ch, cw) = ((h / 2) as isize, (w / 2) as isize);
    let mut v = Vec::new();
    for i in 0..h as isize {
        for j in 0..w as isize {
            v.push((i - ch, j - cw));
        }
    }
    v
}

/// Offsets with `(di/r)^2 + (dj/r)^2 <= 1` on an odd `d x d` grid, `r = d/2`.
pub fn disc_offsets(d: usize) -> Vec<(isize, isize)> {
    let r = (d / 2) as isize;
    let mut v = Vec::new();
    for di in -r..=r {
        for dj in -r..=r {
            if di * di + dj * dj <= r * r {
                v.push((di, dj));
            }
        }
    }
    v
}

fn at(m: &BinaryMask, i: isize, j: isize) -> bool {
    i >= 0 && j >= 0 && (i as usize) < m.height() && (j as usize) < m.width() && *m.get(i as usize, j as usize)
}

pub fn naive_erode(m: &BinaryMask, offsets: &[(isize, isize)]) -> BinaryMask {
    Grid::from_fn(m.height(), m.width(), |i, j| {
        offsets.iter().all(|&(di, dj)| at(m, i as isize + di, j as isize + dj))
    })
}

/// Hit by any reflected offset: `out(s) = 1` iff some `m(s - d) = 1`.
pub fn naive_dilate(m: &BinaryMask, offsets: &[(isize, isize)]) -> BinaryMask {
    Grid::from_fn(m.height(), m.width(), |i, j| {
        offsets.iter().any(|&(di, dj)| at(m, i as isize - di, j as isize - dj))
    })
}

pub fn naive_refine(residual: &BinaryMask) -> BinaryMask {
    let rect = rect_offsets(25, 7);
    let once = naive_erode(residual, &rect);
    let twice = naive_erode(&once, &rect);
    naive_dilate(&twice, &disc_offsets(45))
}

/// Recursive 8-connected flood fill; ids `1..` in row-major order of the
/// first pixel reached by the scan.
pub fn flood_fill_labels<T: PartialEq>(grid: &Grid<T>, pred: impl Fn(&T) -> bool) -> (Grid<u32>, u32) {
    fn fill<T>(grid: &Grid<T>, pred: &dyn Fn(&T) -> bool, out: &mut Grid<u32>, i: isize, j: isize, id: u32) {
        if i < 0 || j < 0 || i as usize >= grid.height() || j as usize >= grid.width() {
            return;
        }
        let (iu, ju) = (i as usize, j as usize);
        if *out.get(iu, ju) != 0 || !pred(grid.get(iu, ju)) {
            return;
        }
        out.set(iu, ju, id);
        for di in -1..=1 {
            for dj in -1..=1 {
                if di != 0 || dj != 0 {
                    fill(grid, pred, out, i + di, j + dj, id);
                }
            }
        }
    }
    let mut out = Grid::filled(grid.height(), grid.width(), 0u32);
    let mut n = 0;
    for i in 0..grid.height() {
        for j in 0..grid.width() {
            if *out.get(i, j) == 0 && pred(grid.get(i, j)) {
                n += 1;
                fill(grid, &pred, &mut out, i as isize, j as isize, n);
            }
        }
    }
    (out, n)
}

/// Label case table written out directly.
pub fn naive_synthesize(face: &BinaryMask, occ_ids: &Grid<u32>) -> (LabelMap, Grid<u32>) {
    let c = Grid::from_fn(face.height(), face.width(), |i, j| {
        match (*occ_ids.get(i, j), *face.get(i, j)) {
            (0, false) => 0,
            (0, true) => 1,
            (n, _) => n + 1,
        }
    });
    let y = c.map(|&v| if v >= 2 { 2 } else { v as u8 });
    (y, c)
}

/// Refine, label and synthesize with the slow oracles.
pub fn naive_pipeline(full: &BinaryMask, teacher: &BinaryMask) -> (LabelMap, Grid<u32>) {
    let rho = Grid::from_fn(full.height(), full.width(), |i, j| {
        *full.get(i, j) && !*teacher.get(i, j)
    });
    let refined = naive_refine(&rho);
    let (ids, _) = flood_fill_labels(&refined, |&b| b);
    naive_synthesize(teacher, &ids)
}

/// Pixel centre `(j + 0.5, i + 0.5)` on or left of every CCW hull edge.
pub fn halfplane_raster(hull: &Hull2D, h: usize, w: usize) -> BinaryMask {
    Grid::from_fn(h, w, |i, j| {
        let (px, py) = (j as f64 + 0.5, i as f64 + 0.5);
        hull.edges()
            .all(|(a, b)| (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x) >= 0.0)
    })
}

/// Per-region majority label by explicit counting.
pub fn tally_superpixel_accuracy(pred: &LabelMap, sp: &Grid<u32>, region_gt: &[u8]) -> f64 {
    let mut correct = 0;
    for (r, &gt) in region_gt.iter().enumerate() {
        let mut counts = [0usize; 256];
        for (&id, &p) in sp.as_slice().iter().zip(pred.as_slice()) {
            if id as usize == r {
                counts[p as usize] += 1;
            }
        }
        let mut best = 0;
        for c in 1..256 {
            if counts[c] > counts[best] {
                best = c;
            }
        }
        if best as u8 == gt {
            correct += 1;
        }
    }
    correct as f64 / region_gt.len() as f64
}

/// Receptive field by dependency tracing along one axis: propagate, for
/// every output position, the set of input positions it reads.
pub fn traced_receptive_field(specs: &[LayerSpec], input_len: usize) -> usize {
    // each position holds the inclusive range of input indices it depends on
    let mut deps: Vec<Option<(i64, i64)>> = (0..input_len as i64).map(|i| Some((i, i))).collect();
    let mut history: Vec<Vec<Option<(i64, i64)>>> = Vec::new();
    let merge = |a: Option<(i64, i64)>, b: Option<(i64, i64)>| match (a, b) {
        (Some(x), Some(y)) => Some((x.0.min(y.0), x.1.max(y.1))),
        (x, None) => x,
        (None, y) => y,
    };
    for s in specs {
        deps = match s.kind {
            LayerKind::Pad => {
                // mirrored borders read the reflected positions
                let n = deps.len() as i64;
                let p = s.pad as i64;
                (-p..n + p)
                    .map(|i| {
                        let r = if i < 0 {
                            -i
                        } else if i >= n {
                            2 * (n - 1) - i
                        } else {
                            i
                        };
                        deps[r as usize]
                    })
                    .collect()
            }
            LayerKind::Conv | LayerKind::Classifier => {
                let n = deps.len() as i64;
                let pad = s.pad as i64;
                let span = ((s.kernel_h - 1) * s.dilation) as i64;
                let mut out = Vec::new();
                let mut start = -pad;
                while start + span < n + pad {
                    let mut acc = None;
                    for t in 0..s.kernel_h as i64 {
                        let idx = start + t * s.dilation as i64;
                        if idx >= 0 && idx < n {
                            acc = merge(acc, deps[idx as usize]);
                        }
                    }
                    out.push(acc);
                    start += s.stride as i64;
                }
                out
            }
            LayerKind::Shuffle => deps.iter().flat_map(|&d| std::iter::repeat_n(d, s.ratio)).collect(),
            LayerKind::Concat => {
                let other = &history[s.ratio - 1];
                deps.iter().zip(other).map(|(&a, &b)| merge(a, b)).collect()
            }
            LayerKind::Elu | LayerKind::BatchNorm => deps,
        };
        history.push(deps.clone());
    }
    deps.iter()
        .flatten()
        .map(|&(lo, hi)| (hi - lo + 1) as usize)
        .max()
        .unwrap_or(1)
}

/// 64 points on a gently curved face outline, in model units.
pub fn fixture_contour() -> ContourShape {
    let v = (0..64)
        .map(|n| {
            let t = n as f64 / 64.0 * std::f64::consts::TAU;
            let x = 0.46 * t.cos();
            // flatter forehead, pointed chin
            let y = if t.sin() > 0.0 { 0.6 * t.sin() } else { 0.5 * t.sin() };
            [x, y, 0.15 * (1.0 - t.cos().abs())]
        })
        .collect();
    ContourShape::new(v).unwrap()
}

/// Slightly turned head about one unit from a 100 px focal-length camera.
pub fn fixture_pose() -> Pose {
    let a: f64 = 0.12;
    Pose {
        intrinsics: [[100.0, 0.0, 64.0], [0.0, 100.0, 64.0], [0.0, 0.0, 1.0]],
        extrinsics: [
            [a.cos(), 0.0, a.sin(), 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [-a.sin(), 0.0, a.cos(), 1.0],
        ],
    }
}

pub fn rect_mask(h: usize, w: usize, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> BinaryMask {
    Grid::from_fn(h, w, |i, j| rows.contains(&i) && cols.contains(&j))
}

/// `a AND NOT b`.
pub fn minus(a: &BinaryMask, b: &BinaryMask) -> BinaryMask {
    Grid::from_fn(a.height(), a.width(), |i, j| *a.get(i, j) && !*b.get(i, j))
}

pub fn union(a: &BinaryMask, b: &BinaryMask) -> BinaryMask {
    Grid::from_fn(a.height(), a.width(), |i, j| *a.get(i, j) || *b.get(i, j))
}
