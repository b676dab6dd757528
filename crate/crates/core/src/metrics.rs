//! Confusion-matrix scores, super-pixel accuracy and the connected-component
//! sparsity measure.

use std::fmt::Write as _;

use crate::blobpipe::{count_components, BACKGROUND, FACE};
use crate::error::{dim_err, Error, Result};
use crate::grid::{BinaryMask, Grid, HardMask, LabelMap};
use crate::tensor::Tensor;

/// `K x K` counts; rows are ground truth, columns are prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    /// Count every pixel, or only pixels where `region` is set.
    pub fn from_masks(pred: &HardMask, gt: &LabelMap, k: usize, region: Option<&BinaryMask>) -> Result<Self> {
        let mut cm = Self::new(k);
        cm.accumulate(pred, gt, region)?;
        Ok(cm)
    }

    pub fn accumulate(&mut self, pred: &HardMask, gt: &LabelMap, region: Option<&BinaryMask>) -> Result<()> {
        pred.ensure_same_dims(gt, "prediction vs ground truth")?;
        if let Some(r) = region {
            r.ensure_same_dims(gt, "evaluation region")?;
        }
        for (idx, (&p, &g)) in pred.as_slice().iter().zip(gt.as_slice()).enumerate() {
            if region.is_some_and(|r| !r.as_slice()[idx]) {
                continue;
            }
            let (p, g) = (p as usize, g as usize);
            if p >= self.k || g >= self.k {
                return Err(Error::Invalid(format!("class {} outside 0..{}", p.max(g), self.k)));
            }
            self.counts[g * self.k + p] += 1;
        }
        Ok(())
    }

    pub fn add(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(dim_err!("adding {}-class matrix to {}-class matrix", other.k, self.k));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Face vs everything else: index 0 is non-face, 1 is face.
    pub fn merged_two_class(&self) -> ConfusionMatrix {
        let f = FACE as usize;
        let mut out = ConfusionMatrix::new(2);
        for g in 0..self.k {
            for p in 0..self.k {
                let idx = usize::from(g == f) * 2 + usize::from(p == f);
                out.counts[idx] += self.get(g, p);
            }
        }
        out
    }

    fn tp(&self, c: usize) -> u64 {
        self.get(c, c)
    }

    fn gt_count(&self, c: usize) -> u64 {
        (0..self.k).map(|p| self.get(c, p)).sum()
    }

    fn pred_count(&self, c: usize) -> u64 {
        (0..self.k).map(|g| self.get(g, c)).sum()
    }

    /// True when the class occurs in either the prediction or the ground truth.
    pub fn present(&self, c: usize) -> bool {
        self.gt_count(c) + self.pred_count(c) > 0
    }

    pub fn iou(&self, c: usize) -> Option<f64> {
        let union = self.gt_count(c) + self.pred_count(c) - self.tp(c);
        ratio(self.tp(c), union)
    }

    pub fn recall(&self, c: usize) -> Option<f64> {
        ratio(self.tp(c), self.gt_count(c))
    }

    pub fn precision(&self, c: usize) -> Option<f64> {
        ratio(self.tp(c), self.pred_count(c))
    }

    /// `2 TP / (2 TP + FP + FN)`, equal to `2PR / (P + R)` where both exist.
    pub fn f1(&self, c: usize) -> Option<f64> {
        ratio(2 * self.tp(c), self.gt_count(c) + self.pred_count(c))
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio((0..self.k).map(|c| self.tp(c)).sum(), self.total())
    }

    pub fn scores(&self) -> Scores {
        let per =
            |f: fn(&Self, usize) -> Option<f64>| -> Vec<Option<f64>> { (0..self.k).map(|c| f(self, c)).collect() };
        let iou = per(Self::iou);
        let recall = per(Self::recall);
        let precision = per(Self::precision);
        let f1 = per(Self::f1);
        Scores {
            accuracy: self.accuracy(),
            mean_iou: mean_defined(&iou),
            mean_recall: mean_defined(&recall),
            mean_f1: mean_defined(&f1),
            iou,
            recall,
            precision,
            f1,
        }
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Unweighted mean over the classes where the score is defined.
pub fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Per-class scores; `None` marks a class absent from the relevant counts.
#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub accuracy: Option<f64>,
    pub iou: Vec<Option<f64>>,
    pub recall: Vec<Option<f64>>,
    pub precision: Vec<Option<f64>>,
    pub f1: Vec<Option<f64>>,
    pub mean_iou: Option<f64>,
    pub mean_recall: Option<f64>,
    pub mean_f1: Option<f64>,
}

/// Dense over-segmentation: ids `0..regions`, each one non-empty.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperpixelMap {
    ids: Grid<u32>,
    regions: usize,
}

impl SuperpixelMap {
    pub fn new(ids: Grid<u32>) -> Result<Self> {
        let regions = ids.as_slice().iter().max().map_or(0, |&m| m as usize + 1);
        let mut seen = vec![false; regions];
        for &id in ids.as_slice() {
            seen[id as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Invalid(format!("super-pixel region {missing} is empty")));
        }
        Ok(SuperpixelMap { ids, regions })
    }

    /// From an `H x W` tensor of integer values.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        Self::new(t.to_u32_grid()?)
    }

    pub fn ids(&self) -> &Grid<u32> {
        &self.ids
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    /// Most frequent label per region, ties to the smallest label.
    pub fn region_modes(&self, labels: &LabelMap) -> Result<Vec<u8>> {
        labels.ensure_same_dims(&self.ids, "labels vs super-pixels")?;
        let mut tally = vec![[0u64; 256]; self.regions];
        for (&id, &l) in self.ids.as_slice().iter().zip(labels.as_slice()) {
            tally[id as usize][l as usize] += 1;
        }
        Ok(tally
            .iter()
            .map(|t| {
                let best = *t.iter().max().expect("256 entries");
                t.iter().position(|&c| c == best).expect("max exists") as u8
            })
            .collect())
    }
}

/// Fraction of regions whose mode predicted label equals the region label.
pub fn superpixel_accuracy(pred: &HardMask, region_gt: &[u8], sp: &SuperpixelMap) -> Result<f64> {
    if region_gt.len() != sp.regions() {
        return Err(dim_err!(
            "{} region labels for {} regions",
            region_gt.len(),
            sp.regions()
        ));
    }
    let modes = sp.region_modes(pred)?;
    let correct = modes.iter().zip(region_gt).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / sp.regions() as f64)
}

/// Total 8-connected components summed over every non-background class.
pub fn component_count(mask: &LabelMap) -> usize {
    let mut present = [false; 256];
    mask.as_slice().iter().for_each(|&v| present[v as usize] = true);
    (0..=255u8)
        .filter(|&c| c != BACKGROUND && present[c as usize])
        .map(|c| count_components(mask, &c))
        .sum()
}

/// `(1/N) sum_i |cc(pred_i) - cc(gt_i)|`; 0 for an empty batch.
pub fn sparsity<'a>(pairs: impl IntoIterator<Item = (&'a HardMask, &'a LabelMap)>) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for (pred, gt) in pairs {
        pred.ensure_same_dims(gt, "prediction vs ground truth")?;
        total += (component_count(pred) as f64 - component_count(gt) as f64).abs();
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// One evaluation result row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub split: String,
    pub scores: Scores,
    pub sparsity: f64,
    pub superpixel_accuracy: Option<f64>,
}

impl MetricsRow {
    pub fn csv_header(k: usize) -> String {
        let mut h = String::from("method,split,accuracy");
        for name in ["iou", "recall", "precision", "f1"] {
            for c in 0..k {
                write!(h, ",{name}_{c}").unwrap();
            }
            if name != "precision" {
                write!(h, ",mean_{name}").unwrap();
            }
        }
        h.push_str(",sparsity,superpixel_accuracy");
        h
    }

    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let s = &self.scores;
        let mut row = format!("{},{},{}", self.method, self.split, fmt(s.accuracy));
        for (per, mean) in [
            (&s.iou, Some(s.mean_iou)),
            (&s.recall, Some(s.mean_recall)),
            (&s.precision, None),
            (&s.f1, Some(s.mean_f1)),
        ] {
            for v in per {
                write!(row, ",{}", fmt(*v)).unwrap();
            }
            if let Some(m) = mean {
                write!(row, ",{}", fmt(m)).unwrap();
            }
        }
        write!(row, ",{:.6},{}", self.sparsity, fmt(self.superpixel_accuracy)).unwrap();
        row
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(h: usize, w: usize, v: &[u8]) -> LabelMap {
        Grid::from_vec(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction_is_diagonal_with_unit_scores() {
        let gt = grid(2, 3, &[0, 1, 2, 2, 1, 0]);
        let cm = ConfusionMatrix::from_masks(&gt, &gt, 3, None).unwrap();
        for g in 0..3 {
            for p in 0..3 {
                assert_eq!(cm.get(g, p) > 0, g == p);
            }
        }
        let s = cm.scores();
        assert_eq!(s.accuracy, Some(1.0));
        assert_eq!(s.mean_iou, Some(1.0));
        assert_eq!(s.mean_recall, Some(1.0));
        assert_eq!(s.mean_f1, Some(1.0));
    }

    #[test]
    fn complement_is_anti_diagonal() {
        let gt = grid(1, 4, &[0, 1, 1, 0]);
        let pred = gt.map(|&v| 1 - v);
        let cm = ConfusionMatrix::from_masks(&pred, &gt, 2, None).unwrap();
        assert_eq!((cm.get(0, 0), cm.get(0, 1), cm.get(1, 0), cm.get(1, 1)), (0, 2, 2, 0));
    }

    #[test]
    fn single_error_is_one_off_diagonal() {
        let gt = grid(2, 2, &[0, 1, 1, 1]);
        let pred = grid(2, 2, &[0, 0, 1, 1]);
        let cm = ConfusionMatrix::from_masks(&pred, &gt, 2, None).unwrap();
        assert_eq!(cm.get(1, 0), 1);
        assert_eq!(cm.get(0, 1), 0);
    }

    #[test]
    fn four_pixel_binary_case() {
        // TP = FP = FN = TN = 1 for class 1
        let gt = grid(1, 4, &[1, 1, 0, 0]);
        let pred = grid(1, 4, &[1, 0, 1, 0]);
        let cm = ConfusionMatrix::from_masks(&pred, &gt, 2, None).unwrap();
        assert!((cm.iou(1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(cm.recall(1), Some(0.5));
        assert_eq!(cm.f1(1), Some(0.5));
        assert_eq!(cm.accuracy(), Some(0.5));
    }

    #[test]
    fn missed_class_scores_zero_and_absent_class_is_excluded() {
        let gt = grid(1, 4, &[0, 0, 1, 1]);
        let pred = grid(1, 4, &[0, 0, 0, 0]);
        let cm = ConfusionMatrix::from_masks(&pred, &gt, 3, None).unwrap();
        assert_eq!(cm.iou(1), Some(0.0));
        assert_eq!(cm.recall(1), Some(0.0));
        assert_eq!(cm.precision(1), None);
        assert!(!cm.present(2));
        let s = cm.scores();
        assert_eq!(s.iou[2], None);
        assert_eq!(s.mean_recall, Some(0.5));
    }

    #[test]
    fn out_of_range_class_and_region_mask() {
        let gt = grid(1, 2, &[0, 3]);
        assert!(ConfusionMatrix::from_masks(&gt, &gt, 3, None).is_err());
        let gt = grid(1, 3, &[0, 1, 1]);
        let pred = grid(1, 3, &[1, 1, 0]);
        let region = Grid::from_vec(1, 3, vec![false, true, true]).unwrap();
        let cm = ConfusionMatrix::from_masks(&pred, &gt, 2, Some(&region)).unwrap();
        assert_eq!(cm.total(), 2);
        assert_eq!(cm.get(1, 0), 1);
    }

    #[test]
    fn merged_mode_is_two_by_two() {
        let gt = grid(1, 6, &[0, 1, 2, 2, 1, 0]);
        let pred = grid(1, 6, &[2, 1, 0, 1, 1, 0]);
        let cm = ConfusionMatrix::from_masks(&pred, &gt, 3, None)
            .unwrap()
            .merged_two_class();
        assert_eq!(cm.num_classes(), 2);
        assert_eq!((cm.get(0, 0), cm.get(0, 1), cm.get(1, 0), cm.get(1, 1)), (3, 1, 0, 2));
    }

    #[test]
    fn superpixel_mode_not_fraction() {
        // one region, 3 of 5 pixels predicted 2
        let sp = SuperpixelMap::new(Grid::filled(1, 5, 0)).unwrap();
        let pred = grid(1, 5, &[2, 2, 2, 1, 1]);
        assert_eq!(superpixel_accuracy(&pred, &[2], &sp).unwrap(), 1.0);
        assert_eq!(superpixel_accuracy(&pred, &[1], &sp).unwrap(), 0.0);
        let tie = grid(1, 4, &[2, 2, 1, 1]);
        let sp4 = SuperpixelMap::new(Grid::filled(1, 4, 0)).unwrap();
        assert_eq!(sp4.region_modes(&tie).unwrap(), vec![1]);
    }

    #[test]
    fn superpixel_map_rejects_gaps() {
        let ids = Grid::from_vec(1, 3, vec![0, 2, 2]).unwrap();
        assert!(SuperpixelMap::new(ids).is_err());
    }

    #[test]
    fn superpixel_random_instance_matches_tally() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut ids = Grid::from_fn(16, 16, |_, _| rng.random_range(0..8u32));
        for r in 0..8u32 {
            ids.set(0, r as usize, r);
        }
        let sp = SuperpixelMap::new(ids.clone()).unwrap();
        let pred = Grid::from_fn(16, 16, |_, _| rng.random_range(0..3u8));
        let gt: Vec<u8> = (0..8).map(|_| rng.random_range(0..3u8)).collect();
        // independent tally: counts per (region, class) in a flat array
        let mut counts = [[0usize; 3]; 8];
        for i in 0..16 {
            for j in 0..16 {
                counts[*ids.get(i, j) as usize][*pred.get(i, j) as usize] += 1;
            }
        }
        let mut correct = 0;
        for r in 0..8 {
            let mut best = 0;
            for c in 1..3 {
                if counts[r][c] > counts[r][best] {
                    best = c;
                }
            }
            if best as u8 == gt[r] {
                correct += 1;
            }
        }
        assert_eq!(superpixel_accuracy(&pred, &gt, &sp).unwrap(), correct as f64 / 8.0);
    }

    #[test]
    fn sparsity_examples() {
        let gt = grid(3, 3, &[0, 0, 0, 0, 1, 0, 0, 0, 0]);
        assert_eq!(sparsity([(&gt, &gt)]).unwrap(), 0.0);
        let two = grid(3, 3, &[1, 0, 0, 0, 0, 0, 0, 0, 1]);
        assert_eq!(sparsity([(&two, &gt)]).unwrap(), 1.0);
    }

    #[test]
    fn sparsity_batch_of_three() {
        // deltas 0, 1 and 3
        let gt = grid(3, 5, &[1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 2, 2, 2, 2, 2]);
        let p0 = gt.clone();
        let p1 = grid(3, 5, &[1, 1, 0, 1, 1, 0, 0, 0, 0, 0, 2, 2, 2, 2, 2]);
        let p3 = grid(3, 5, &[1, 0, 1, 0, 1, 0, 0, 0, 0, 0, 2, 2, 0, 2, 2]);
        assert_eq!(component_count(&gt), 2);
        assert_eq!(component_count(&p1), 3);
        assert_eq!(component_count(&p3), 5);
        let s = sparsity([(&p0, &gt), (&p1, &gt), (&p3, &gt)]).unwrap();
        assert!((s - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn csv_row_matches_header() {
        let gt = grid(1, 3, &[0, 1, 2]);
        let cm = ConfusionMatrix::from_masks(&gt, &gt, 3, None).unwrap();
        let row = MetricsRow {
            method: "consensus".into(),
            split: "test".into(),
            scores: cm.scores(),
            sparsity: 0.0,
            superpixel_accuracy: None,
        };
        let header = MetricsRow::csv_header(3);
        assert_eq!(header.split(',').count(), row.to_csv().split(',').count());
        assert!(header.starts_with("method,split,accuracy,iou_0"));
        assert!(header.ends_with("mean_f1,sparsity,superpixel_accuracy"));
    }

    fn mask_strategy() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
        (prop::collection::vec(0u8..3, 36), prop::collection::vec(0u8..3, 36))
    }

    proptest! {
        #[test]
        fn scores_bounded_and_iou_below_recall_precision((p, g) in mask_strategy()) {
            let cm = ConfusionMatrix::from_masks(&grid(6, 6, &p), &grid(6, 6, &g), 3, None).unwrap();
            prop_assert_eq!(cm.total(), 36);
            for c in 0..3 {
                for v in [cm.iou(c), cm.recall(c), cm.precision(c), cm.f1(c)].into_iter().flatten() {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
                if let (Some(i), Some(r)) = (cm.iou(c), cm.recall(c)) { prop_assert!(i <= r); }
                if let (Some(i), Some(pr)) = (cm.iou(c), cm.precision(c)) { prop_assert!(i <= pr); }
            }
        }

        #[test]
        fn permutation_invariance((p, g) in mask_strategy(), perm in Just([2u8, 0, 1])) {
            let a = ConfusionMatrix::from_masks(&grid(6, 6, &p), &grid(6, 6, &g), 3, None).unwrap();
            let pp: Vec<u8> = p.iter().map(|&v| perm[v as usize]).collect();
            let gg: Vec<u8> = g.iter().map(|&v| perm[v as usize]).collect();
            let b = ConfusionMatrix::from_masks(&grid(6, 6, &pp), &grid(6, 6, &gg), 3, None).unwrap();
            let (sa, sb) = (a.scores(), b.scores());
            prop_assert_eq!(sa.accuracy, sb.accuracy);
            for c in 0..3 {
                prop_assert_eq!(sa.iou[c], sb.iou[perm[c] as usize]);
                prop_assert_eq!(sa.recall[c], sb.recall[perm[c] as usize]);
            }
            let close = |x: Option<f64>, y: Option<f64>| match (x, y) {
                (Some(x), Some(y)) => (x - y).abs() < 1e-12,
                (x, y) => x == y,
            };
            prop_assert!(close(sa.mean_iou, sb.mean_iou));
            prop_assert!(close(sa.mean_recall, sb.mean_recall));
        }

        #[test]
        fn split_batches_add_up((p, g) in mask_strategy(), split in 1usize..5) {
            let whole = ConfusionMatrix::from_masks(&grid(6, 6, &p), &grid(6, 6, &g), 3, None).unwrap();
            let cut = split * 6;
            let mut sum = ConfusionMatrix::from_masks(
                &grid(split, 6, &p[..cut]), &grid(split, 6, &g[..cut]), 3, None).unwrap();
            let rest = ConfusionMatrix::from_masks(
                &grid(6 - split, 6, &p[cut..]), &grid(6 - split, 6, &g[cut..]), 3, None).unwrap();
            sum.add(&rest).unwrap();
            prop_assert_eq!(sum, whole);
        }
    }
}
