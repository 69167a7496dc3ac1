//! IoU over centred range windows and the IoU-per-parameter efficiency score.

use crate::error::{Error, Result};
use crate::grid::BevGrid;

/// Evaluation windows reported by default, meters.
pub const DEFAULT_RANGES: [f64; 3] = [100.0, 50.0, 20.0];

/// Intersection over union of the positive cells.
///
/// Two empty masks agree perfectly and score 1.
pub fn iou(pred: &BevGrid<u8>, gt: &BevGrid<u8>) -> Result<f64> {
    pred.check_same_shape(gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, g) in pred.as_slice().iter().zip(gt.as_slice()) {
        let (p, g) = (*p != 0, *g != 0);
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// IoU for one centred `range x range` window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeIou {
    pub range_meters: f64,
    pub iou: f64,
}

/// IoU on the centred window of each range. Ranges must be whole numbers of
/// cells no larger than the grid.
pub fn iou_at_ranges(pred: &BevGrid<u8>, gt: &BevGrid<u8>, ranges: &[f64]) -> Result<Vec<RangeIou>> {
    pred.check_same_shape(gt)?;
    ranges
        .iter()
        .map(|&range_meters| {
            let iou = iou(&pred.crop_centered(range_meters)?, &gt.crop_centered(range_meters)?)?;
            Ok(RangeIou { range_meters, iou })
        })
        .collect()
}

/// IoU at 100 m, 50 m and 20 m, as fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IouReport {
    pub iou_100: f64,
    pub iou_50: f64,
    pub iou_20: f64,
}

impl IouReport {
    pub fn compute(pred: &BevGrid<u8>, gt: &BevGrid<u8>) -> Result<Self> {
        let r = iou_at_ranges(pred, gt, &DEFAULT_RANGES)?;
        Ok(Self {
            iou_100: r[0].iou,
            iou_50: r[1].iou,
            iou_20: r[2].iou,
        })
    }
}

/// IoU in percent per million model parameters.
pub fn eff_score(iou_percent: f64, params_millions: f64) -> Result<f64> {
    if !(params_millions > 0.0 && params_millions.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "parameter count {params_millions} M must be positive"
        )));
    }
    Ok(iou_percent / params_millions)
}

/// 1 where `logit > threshold` (strict), else 0.
pub fn binarize(logits: &BevGrid<f64>, threshold: f64) -> BevGrid<u8> {
    logits.map(|&l| u8::from(l > threshold))
}

/// Fraction rounded to a percentage with one decimal, e.g. 0.3261 -> 32.6.
pub fn percent_1dp(fraction: f64) -> f64 {
    (fraction * 1000.0).round() / 10.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{CellIndex, GridSpec};
    use proptest::prelude::*;

    fn block(spec: GridSpec, r0: usize, c0: usize, h: usize, w: usize) -> BevGrid<u8> {
        BevGrid::from_fn(spec, |c| {
            u8::from((r0..r0 + h).contains(&c.row) && (c0..c0 + w).contains(&c.col))
        })
    }

    #[test]
    fn iou_examples() {
        let spec = GridSpec::from_cells(16, 0.5).unwrap();
        let a = block(spec, 2, 2, 4, 4);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &block(spec, 10, 10, 3, 3)).unwrap(), 0.0);
        // Shifted by two columns: overlap 8, union 24.
        let shifted = block(spec, 2, 4, 4, 4);
        assert!((iou(&a, &shifted).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let empty = BevGrid::filled(spec, 0u8);
        assert_eq!(iou(&empty, &empty).unwrap(), 1.0);
        assert_eq!(iou(&a, &empty).unwrap(), 0.0);
        assert!(iou(&a, &BevGrid::filled(GridSpec::from_cells(8, 0.5).unwrap(), 0)).is_err());
    }

    #[test]
    fn full_range_equals_full_grid() {
        let spec = GridSpec::default();
        let a = block(spec, 30, 40, 50, 20);
        let b = block(spec, 60, 35, 30, 30);
        let r = iou_at_ranges(&a, &b, &[100.0]).unwrap();
        assert_eq!(r[0].iou, iou(&a, &b).unwrap());
    }

    #[test]
    fn twenty_meter_window_uses_rows_80_to_119() {
        let spec = GridSpec::default();
        // One cell just inside each corner of the central 40x40 window.
        let mut gt = BevGrid::filled(spec, 0u8);
        for (r, c) in [(80, 80), (80, 119), (119, 80), (119, 119)] {
            gt.set(CellIndex::new(r, c), 1);
        }
        let mut pred = gt.clone();
        // Cells just outside the window only matter at larger ranges.
        for (r, c) in [(79, 80), (120, 119), (100, 79), (100, 120)] {
            pred.set(CellIndex::new(r, c), 1);
        }
        let report = IouReport::compute(&pred, &gt).unwrap();
        assert_eq!(report.iou_20, 1.0);
        assert_eq!(report.iou_50, 0.5);
        assert_eq!(report.iou_100, 0.5);
    }

    #[test]
    fn empty_window_convention() {
        let spec = GridSpec::default();
        let gt = block(spec, 0, 0, 10, 10);
        let pred = BevGrid::filled(spec, 0u8);
        let report = IouReport::compute(&pred, &gt).unwrap();
        assert_eq!(report.iou_20, 1.0);
        assert_eq!(report.iou_100, 0.0);
    }

    #[test]
    fn bad_ranges() {
        let spec = GridSpec::default();
        let g = BevGrid::filled(spec, 0u8);
        assert!(iou_at_ranges(&g, &g, &[20.3]).is_err());
        assert!(iou_at_ranges(&g, &g, &[150.0]).is_err());
        assert!(iou_at_ranges(&g, &g, &[-20.0]).is_err());
    }

    #[test]
    fn eff_score_table_rows() {
        assert!((eff_score(32.6, 8.40).unwrap() - 3.881).abs() <= 1e-3);
        assert!((eff_score(32.7, 42.04).unwrap() - 0.777).abs() <= 1e-3);
        assert_eq!(eff_score(12.5, 1.0).unwrap(), 12.5);
        assert!(eff_score(30.0, 0.0).is_err());
        assert!(eff_score(30.0, -2.0).is_err());
    }

    #[test]
    fn binarize_is_strict() {
        let spec = GridSpec::from_cells(2, 1.0).unwrap();
        let l = BevGrid::from_vec(spec, vec![-10.0, 0.0, 1e-12, 3.0]).unwrap();
        assert_eq!(binarize(&l, 0.0).as_slice(), &[0, 0, 1, 1]);
        assert!(binarize(&BevGrid::filled(spec, -10.0), 0.0).as_slice().iter().all(|&v| v == 0));
        assert_eq!(binarize(&l, 2.0).as_slice(), &[0, 0, 0, 1]);
    }

    #[test]
    fn percent_formatting() {
        assert_eq!(percent_1dp(0.3261), 32.6);
        assert_eq!(percent_1dp(1.0), 100.0);
        assert_eq!(percent_1dp(0.0), 0.0);
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(
            a in prop::collection::vec(0u8..2, 64),
            b in prop::collection::vec(0u8..2, 64),
        ) {
            let spec = GridSpec::from_cells(8, 0.5).unwrap();
            let a = BevGrid::from_vec(spec, a).unwrap();
            let b = BevGrid::from_vec(spec, b).unwrap();
            let ab = iou(&a, &b).unwrap();
            prop_assert_eq!(ab, iou(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
        }
    }
}
