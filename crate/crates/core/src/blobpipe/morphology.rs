//! Binary erosion and dilation with arbitrary structuring elements.
//!
//! Pixels outside the image read as 0 for both operators. Each element is
//! decomposed into one horizontal run per row offset, and every run is
//! tested in O(1) against a per-row prefix count of ones.

use crate::grid::BinaryMask;

/// Active offsets `(di, dj)` relative to the anchor, which sits at the
/// center cell `(height / 2, width / 2)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StructuringElement {
    height: usize,
    width: usize,
    offsets: Vec<(isize, isize)>,
}

impl StructuringElement {
    pub fn rect(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "empty structuring element");
        let (ai, aj) = ((height / 2) as isize, (width / 2) as isize);
        let offsets = (0..height as isize)
            .flat_map(|i| (0..width as isize).map(move |j| (i - ai, j - aj)))
            .collect();
        StructuringElement { height, width, offsets }
    }

    /// Inscribed discrete ellipse: `(di/ry)^2 + (dj/rx)^2 <= 1` with
    /// `ry = (height - 1) / 2`, `rx = (width - 1) / 2`.
    pub fn ellipse(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "empty structuring element");
        let ry = (height as f64 - 1.0) / 2.0;
        let rx = (width as f64 - 1.0) / 2.0;
        let (ai, aj) = ((height / 2) as isize, (width / 2) as isize);
        let mut offsets = Vec::new();
        for i in 0..height as isize {
            for j in 0..width as isize {
                let (di, dj) = (i - ai, j - aj);
                let ty = if ry > 0.0 { di as f64 / ry } else { 0.0 };
                let tx = if rx > 0.0 { dj as f64 / rx } else { 0.0 };
                if ty * ty + tx * tx <= 1.0 {
                    offsets.push((di, dj));
                }
            }
        }
        StructuringElement { height, width, offsets }
    }

    /// Build from explicit offsets; the anchor `(0, 0)` must be active and
    /// every offset must fit in the `height x width` box.
    pub fn from_offsets(height: usize, width: usize, offsets: Vec<(isize, isize)>) -> Option<Self> {
        let (ai, aj) = ((height / 2) as isize, (width / 2) as isize);
        let fits = offsets
            .iter()
            .all(|&(di, dj)| (0..height as isize).contains(&(di + ai)) && (0..width as isize).contains(&(dj + aj)));
        if !fits || !offsets.contains(&(0, 0)) {
            return None;
        }
        Some(StructuringElement { height, width, offsets })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn offsets(&self) -> &[(isize, isize)] {
        &self.offsets
    }

    /// Point reflection through the anchor.
    pub fn reflect(&self) -> Self {
        StructuringElement {
            height: self.height,
            width: self.width,
            offsets: self.offsets.iter().map(|&(di, dj)| (-di, -dj)).collect(),
        }
    }

    /// Horizontal runs `(di, dj_lo, dj_hi)`, inclusive; a row with gaps
    /// yields several runs.
    fn runs(&self) -> Vec<(isize, isize, isize)> {
        let mut offs = self.offsets.clone();
        offs.sort_unstable();
        offs.dedup();
        let mut runs: Vec<(isize, isize, isize)> = Vec::new();
        for (di, dj) in offs {
            match runs.last_mut() {
                Some(r) if r.0 == di && r.2 + 1 == dj => r.2 = dj,
                _ => runs.push((di, dj, dj)),
            }
        }
        runs
    }
}

/// Prefix counts of ones per row, `width + 1` entries per row.
fn row_prefix(m: &BinaryMask) -> Vec<u32> {
    let (h, w) = m.dims();
    let mut pre = vec![0u32; h * (w + 1)];
    for i in 0..h {
        let row = &m.as_slice()[i * w..(i + 1) * w];
        let base = i * (w + 1);
        for (j, &b) in row.iter().enumerate() {
            pre[base + j + 1] = pre[base + j] + b as u32;
        }
    }
    pre
}

/// Ones in row `i`, columns `lo..=hi` clipped to the image.
#[inline]
fn run_count(pre: &[u32], w: usize, i: usize, lo: isize, hi: isize) -> u32 {
    let lo = lo.max(0) as usize;
    let hi = (hi + 1).min(w as isize);
    if hi <= lo as isize {
        return 0;
    }
    let base = i * (w + 1);
    pre[base + hi as usize] - pre[base + lo]
}

/// `out(s) = 1` iff every active offset anchored at `s` lands on a 1.
pub fn erode(m: &BinaryMask, k: &StructuringElement) -> BinaryMask {
    let (h, w) = m.dims();
    let pre = row_prefix(m);
    let runs = k.runs();
    BinaryMask::from_fn(h, w, |i, j| {
        runs.iter().all(|&(di, lo, hi)| {
            let r = i as isize + di;
            let (a, b) = (j as isize + lo, j as isize + hi);
            if r < 0 || r >= h as isize || a < 0 || b >= w as isize {
                return false;
            }
            run_count(&pre, w, r as usize, a, b) as isize == hi - lo + 1
        })
    })
}

/// `out(s) = 1` iff some reflected active offset from `s` lands on a 1.
pub fn dilate(m: &BinaryMask, k: &StructuringElement) -> BinaryMask {
    let (h, w) = m.dims();
    let pre = row_prefix(m);
    let runs = k.reflect().runs();
    BinaryMask::from_fn(h, w, |i, j| {
        runs.iter().any(|&(di, lo, hi)| {
            let r = i as isize + di;
            if r < 0 || r >= h as isize {
                return false;
            }
            run_count(&pre, w, r as usize, j as isize + lo, j as isize + hi) > 0
        })
    })
}

#[derive(Clone, Debug)]
pub struct RefineParams {
    pub erode_element: StructuringElement,
    pub erode_passes: usize,
    pub dilate_element: StructuringElement,
}

impl Default for RefineParams {
    /// Two erosions with a 25x7 (rows x cols) rectangle, then one dilation
    /// with a 45x45 ellipse.
    fn default() -> Self {
        RefineParams {
            erode_element: StructuringElement::rect(25, 7),
            erode_passes: 2,
            dilate_element: StructuringElement::ellipse(45, 45),
        }
    }
}

/// Shrink away thin residual fragments, then grow the survivors so that
/// occlusions are over- rather than under-segmented.
pub fn refine_residual(residual: &BinaryMask, params: &RefineParams) -> BinaryMask {
    let mut m = residual.clone();
    for _ in 0..params.erode_passes {
        m = erode(&m, &params.erode_element);
    }
    dilate(&m, &params.dilate_element)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_erode(m: &BinaryMask, k: &StructuringElement) -> BinaryMask {
        BinaryMask::from_fn(m.height(), m.width(), |i, j| {
            k.offsets()
                .iter()
                .all(|&(di, dj)| *m.get_signed(i as isize + di, j as isize + dj).unwrap_or(&false))
        })
    }

    fn naive_dilate(m: &BinaryMask, k: &StructuringElement) -> BinaryMask {
        BinaryMask::from_fn(m.height(), m.width(), |i, j| {
            k.offsets()
                .iter()
                .any(|&(di, dj)| *m.get_signed(i as isize - di, j as isize - dj).unwrap_or(&false))
        })
    }

    fn mask_from_bits(h: usize, w: usize, bits: &[bool]) -> BinaryMask {
        BinaryMask::from_vec(h, w, bits.to_vec()).unwrap()
    }

    #[test]
    fn ellipse_45_shape() {
        let e = StructuringElement::ellipse(45, 45);
        assert!(e.offsets().contains(&(0, 0)));
        assert!(e.offsets().contains(&(22, 0)));
        assert!(e.offsets().contains(&(0, -22)));
        assert!(!e.offsets().contains(&(22, 22)));
        assert!(e.offsets().iter().all(|&(a, b)| a * a + b * b <= 22 * 22));
        let n = e.offsets().len();
        let brute = (-22i64..=22)
            .flat_map(|a| (-22i64..=22).map(move |b| (a, b)))
            .filter(|(a, b)| a * a + b * b <= 484)
            .count();
        assert_eq!(n, brute);
    }

    #[test]
    fn erode_row_with_border_zero() {
        let m = BinaryMask::filled(1, 7, true);
        let out = erode(&m, &StructuringElement::rect(1, 3));
        assert_eq!(out.as_slice(), &[false, true, true, true, true, true, false]);
        let z = BinaryMask::filled(5, 5, false);
        assert_eq!(erode(&z, &StructuringElement::rect(3, 3)), z);
    }

    #[test]
    fn dilate_single_pixel() {
        let mut m = BinaryMask::filled(5, 5, false);
        m.set(2, 2, true);
        let out = dilate(&m, &StructuringElement::rect(3, 3));
        for i in 0..5 {
            for j in 0..5 {
                let inside = (1..=3).contains(&i) && (1..=3).contains(&j);
                assert_eq!(*out.get(i, j), inside);
            }
        }
        let z = BinaryMask::filled(5, 5, false);
        assert_eq!(dilate(&z, &StructuringElement::ellipse(5, 5)), z);
    }

    #[test]
    fn asymmetric_element_reflection() {
        // offsets (0,0) and (0,1): dilation reflects, erosion does not
        let k = StructuringElement::from_offsets(1, 3, vec![(0, 0), (0, 1)]).unwrap();
        let mut m = BinaryMask::filled(1, 5, false);
        m.set(0, 2, true);
        assert_eq!(dilate(&m, &k), naive_dilate(&m, &k));
        assert_eq!(dilate(&m, &k).as_slice(), &[false, false, true, true, false]);
        let full = BinaryMask::filled(1, 5, true);
        assert_eq!(erode(&full, &k), naive_erode(&full, &k));
        assert!(StructuringElement::from_offsets(1, 3, vec![(0, 1)]).is_none());
        assert!(StructuringElement::from_offsets(1, 3, vec![(0, 0), (0, 2)]).is_none());
    }

    #[test]
    fn refine_empty_and_thin_stripe() {
        let params = RefineParams::default();
        let z = BinaryMask::filled(64, 64, false);
        assert_eq!(refine_residual(&z, &params), z);
        let stripe = BinaryMask::from_fn(64, 64, |_, j| j == 30 || j == 31);
        assert_eq!(refine_residual(&stripe, &params).count_ones(), 0);
    }

    #[test]
    fn refine_keeps_large_block() {
        let params = RefineParams::default();
        let block = BinaryMask::from_fn(128, 128, |i, j| (30..100).contains(&i) && (40..80).contains(&j));
        let out = refine_residual(&block, &params);
        // the block survives erosion and is re-grown beyond its original extent
        assert!(out.count_ones() > block.count_ones());
        let naive = {
            let mut m = block.clone();
            for _ in 0..2 {
                m = naive_erode(&m, &params.erode_element);
            }
            naive_dilate(&m, &params.dilate_element)
        };
        assert_eq!(out, naive);
    }

    fn random_mask(h: usize, w: usize, density: f64, seed: u64) -> BinaryMask {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        BinaryMask::from_fn(h, w, |_, _| rng.random_bool(density))
    }

    #[test]
    fn large_elements_match_naive() {
        let rect = StructuringElement::rect(25, 7);
        let ell = StructuringElement::ellipse(45, 45);
        for seed in 0..4 {
            let m = random_mask(32, 32, 0.95, seed);
            assert_eq!(erode(&m, &rect), naive_erode(&m, &rect));
            let m = random_mask(32, 32, 0.01, seed + 100);
            assert_eq!(dilate(&m, &ell), naive_dilate(&m, &ell));
        }
    }

    proptest! {
        #[test]
        fn erosion_inside_mask_inside_dilation(
            bits in proptest::collection::vec(any::<bool>(), 12 * 12),
            kh in 1usize..6, kw in 1usize..6, ellipse in any::<bool>()
        ) {
            let m = mask_from_bits(12, 12, &bits);
            let k = if ellipse { StructuringElement::ellipse(kh, kw) } else { StructuringElement::rect(kh, kw) };
            let e = erode(&m, &k);
            let d = dilate(&m, &k);
            for idx in 0..144 {
                prop_assert!(!e.as_slice()[idx] || m.as_slice()[idx]);
                prop_assert!(!m.as_slice()[idx] || d.as_slice()[idx]);
            }
            prop_assert_eq!(e, naive_erode(&m, &k));
            prop_assert_eq!(d, naive_dilate(&m, &k));
        }

        #[test]
        fn erosion_dilation_duality_in_interior(
            bits in proptest::collection::vec(any::<bool>(), 16 * 16),
            kh in 1usize..5, kw in 1usize..5
        ) {
            let m = mask_from_bits(16, 16, &bits);
            let k = StructuringElement::from_offsets(
                kh, kw,
                StructuringElement::ellipse(kh, kw).offsets().iter().copied().filter(|&(a, b)| a >= 0 || b == 0).collect(),
            ).unwrap();
            let d = dilate(&m, &k);
            let dual = erode(&m.complement(), &k.reflect()).complement();
            let margin = kh.max(kw);
            for i in margin..16 - margin {
                for j in margin..16 - margin {
                    prop_assert_eq!(d.get(i, j), dual.get(i, j));
                }
            }
        }
    }
}
