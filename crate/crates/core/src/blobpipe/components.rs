//! 8-connected component labeling with a two-pass union-find.

use crate::grid::{BinaryMask, Grid};

use super::BlobMap;

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        DisjointSet { parent: Vec::new() }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let gp = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = gp;
            x = gp;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Label the 8-connected regions of `pred(pixel) == true`.
///
/// Returns provisional-free ids `1..=n` assigned in row-major order of each
/// region's first pixel, 0 elsewhere, plus `n`.
pub fn label_regions<T>(grid: &Grid<T>, mut pred: impl FnMut(&T) -> bool) -> (Grid<u32>, u32) {
    let (h, w) = grid.dims();
    let mut provisional = vec![u32::MAX; h * w];
    let mut ds = DisjointSet::new();

    for i in 0..h {
        for j in 0..w {
            if !pred(grid.get(i, j)) {
                continue;
            }
            // already-visited neighbours: W, NW, N, NE
            let mut current: Option<u32> = None;
            let neighbours = [
                (i as isize, j as isize - 1),
                (i as isize - 1, j as isize - 1),
                (i as isize - 1, j as isize),
                (i as isize - 1, j as isize + 1),
            ];
            for (ni, nj) in neighbours {
                if ni < 0 || nj < 0 || nj as usize >= w {
                    continue;
                }
                let lbl = provisional[ni as usize * w + nj as usize];
                if lbl == u32::MAX {
                    continue;
                }
                match current {
                    None => current = Some(lbl),
                    Some(c) => ds.union(c, lbl),
                }
            }
            provisional[i * w + j] = current.unwrap_or_else(|| ds.make());
        }
    }

    // final ids by first appearance in row-major order
    let mut remap = vec![0u32; ds.parent.len()];
    let mut next = 0u32;
    let mut out = vec![0u32; h * w];
    for (idx, &p) in provisional.iter().enumerate() {
        if p == u32::MAX {
            continue;
        }
        let root = ds.find(p) as usize;
        if remap[root] == 0 {
            next += 1;
            remap[root] = next;
        }
        out[idx] = remap[root];
    }
    (Grid::from_vec(h, w, out).expect("dims preserved"), next)
}

/// Zeros get id 0; each 8-connected region of ones gets an id `1..=n`.
pub fn connected_components(m: &BinaryMask) -> BlobMap {
    let (ids, _) = label_regions(m, |&b| b);
    BlobMap::new(ids)
}

/// Number of 8-connected regions of pixels equal to `class`.
pub fn count_components<T: PartialEq>(grid: &Grid<T>, class: &T) -> usize {
    label_regions(grid, |v| v == class).1 as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_columns_are_two_components() {
        let m = BinaryMask::from_vec(2, 3, vec![true, false, true, true, false, true]).unwrap();
        let b = connected_components(&m);
        assert_eq!(b.ids().as_slice(), &[1, 0, 2, 1, 0, 2]);
        assert_eq!(b.max_id(), 2);
    }

    #[test]
    fn diagonal_touch_is_connected() {
        let m = BinaryMask::from_vec(2, 2, vec![true, false, false, true]).unwrap();
        assert_eq!(connected_components(&m).max_id(), 1);
    }

    #[test]
    fn u_shape_merges_late() {
        // the two arms meet only on the last row
        let rows = ["1.1", "1.1", "111"];
        let bits: Vec<bool> = rows.iter().flat_map(|r| r.chars().map(|c| c == '1')).collect();
        let m = BinaryMask::from_vec(3, 3, bits).unwrap();
        let b = connected_components(&m);
        assert_eq!(b.max_id(), 1);
        assert!(b.ids().as_slice().iter().all(|&v| v <= 1));
    }

    #[test]
    fn ids_follow_first_pixel_order() {
        let rows = ["..1", "1..", "..."];
        let bits: Vec<bool> = rows.iter().flat_map(|r| r.chars().map(|c| c == '1')).collect();
        let m = BinaryMask::from_vec(3, 3, bits).unwrap();
        let b = connected_components(&m);
        assert_eq!(*b.ids().get(0, 2), 1);
        assert_eq!(*b.ids().get(1, 0), 2);
    }

    #[test]
    fn empty_mask_has_no_components() {
        let m = BinaryMask::filled(4, 4, false);
        let b = connected_components(&m);
        assert_eq!(b.max_id(), 0);
        assert_eq!(count_components(&m, &true), 0);
    }
}
