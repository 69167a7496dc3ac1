//! Focal loss for segmentation, balanced MSE for centerness and L1 for offsets.

use crate::error::{Error, Result};
use crate::grid::BevGrid;

/// Bounds applied to `p_t` before taking its logarithm.
pub const P_T_MIN: f64 = 1e-7;
pub const P_T_MAX: f64 = 1.0 - 1e-7;

/// Focusing parameter of the focal loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalConfig {
    gamma: f64,
}

impl FocalConfig {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!("gamma {gamma} must be >= 0")));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self { gamma: 2.0 }
    }
}

/// Probability assigned to the true class: `p` for positives, `1 - p` otherwise.
pub fn p_t(p: f64, positive: bool) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::ProbabilityDomain(p));
    }
    Ok(if positive { p } else { 1.0 - p })
}

/// `-(1 - p_t)^gamma * ln(p_t)` with `p_t` clamped to `[P_T_MIN, P_T_MAX]`.
pub fn focal_loss(p: f64, positive: bool, cfg: FocalConfig) -> Result<f64> {
    let pt = p_t(p, positive)?.clamp(P_T_MIN, P_T_MAX);
    Ok(-(1.0 - pt).powf(cfg.gamma) * pt.ln())
}

/// Derivative of [`focal_loss`] with respect to `p`.
///
/// Zero where the clamp is active.
pub fn focal_loss_grad(p: f64, positive: bool, cfg: FocalConfig) -> Result<f64> {
    let pt = p_t(p, positive)?;
    if !(P_T_MIN..=P_T_MAX).contains(&pt) {
        return Ok(0.0);
    }
    let q = 1.0 - pt;
    let g = cfg.gamma;
    let modulating = if g == 0.0 { 0.0 } else { g * q.powf(g - 1.0) * pt.ln() };
    let d_pt = modulating - q.powf(g) / pt;
    Ok(if positive { d_pt } else { -d_pt })
}

/// Mean focal loss over all cells. `target` holds 0/1 labels.
pub fn focal_loss_grid(pred: &BevGrid<f64>, target: &BevGrid<u8>, cfg: FocalConfig) -> Result<f64> {
    pred.check_same_shape(target)?;
    let mut sum = 0.0;
    for (p, y) in pred.as_slice().iter().zip(target.as_slice()) {
        sum += focal_loss(*p, *y != 0, cfg)?;
    }
    Ok(sum / pred.as_slice().len() as f64)
}

/// Equal-weight average of the foreground and background mean squared errors.
///
/// An empty partition contributes zero.
pub fn centerness_loss(pred: &BevGrid<f64>, target: &BevGrid<f64>, fg_mask: &BevGrid<u8>) -> Result<f64> {
    pred.check_same_shape(target)?;
    pred.check_same_shape(fg_mask)?;
    let (mut fg_sum, mut fg_n, mut bg_sum, mut bg_n) = (0.0, 0usize, 0.0, 0usize);
    for ((p, t), m) in pred.as_slice().iter().zip(target.as_slice()).zip(fg_mask.as_slice()) {
        let e = (p - t) * (p - t);
        if *m != 0 {
            fg_sum += e;
            fg_n += 1;
        } else {
            bg_sum += e;
            bg_n += 1;
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(0.5 * mean(fg_sum, fg_n) + 0.5 * mean(bg_sum, bg_n))
}

/// Mean over foreground cells of `|dx| + |dy|`; zero without foreground.
pub fn offset_loss(pred: &BevGrid<[f64; 2]>, target: &BevGrid<[f64; 2]>, fg_mask: &BevGrid<u8>) -> Result<f64> {
    pred.check_same_shape(target)?;
    pred.check_same_shape(fg_mask)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for ((p, t), m) in pred.as_slice().iter().zip(target.as_slice()).zip(fg_mask.as_slice()) {
        if *m != 0 {
            sum += (p[0] - t[0]).abs() + (p[1] - t[1]).abs();
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Positive weights of the segmentation, centerness and offset terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskWeights {
    pub segmentation: f64,
    pub centerness: f64,
    pub offset: f64,
}

impl TaskWeights {
    pub fn new(segmentation: f64, centerness: f64, offset: f64) -> Result<Self> {
        for w in [segmentation, centerness, offset] {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidConfig(format!("task weight {w} must be positive")));
            }
        }
        Ok(Self {
            segmentation,
            centerness,
            offset,
        })
    }
}

impl Default for TaskWeights {
    fn default() -> Self {
        Self {
            segmentation: 1.0,
            centerness: 1.0,
            offset: 1.0,
        }
    }
}

/// Weighted sum of the three task losses.
pub fn multi_task_loss(segmentation: f64, centerness: f64, offset: f64, weights: TaskWeights) -> f64 {
    weights.segmentation * segmentation + weights.centerness * centerness + weights.offset * offset
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn g(gamma: f64) -> FocalConfig {
        FocalConfig::new(gamma).unwrap()
    }

    fn spec(n: usize) -> GridSpec {
        GridSpec::from_cells(n, 0.5).unwrap()
    }

    #[test]
    fn p_t_branches() {
        assert_eq!(p_t(0.3, true).unwrap(), 0.3);
        assert_eq!(p_t(0.3, false).unwrap(), 0.7);
        assert_eq!(p_t(0.5, false).unwrap(), 0.5);
        assert_eq!(p_t(0.5, true).unwrap(), 0.5);
        assert!(matches!(p_t(1.2, true), Err(Error::ProbabilityDomain(_))));
        assert!(p_t(-0.1, false).is_err());
        assert!(p_t(f64::NAN, false).is_err());
    }

    #[test]
    fn focal_examples() {
        assert!((focal_loss(0.5, true, g(0.0)).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        // (0.1)^2 * -ln(0.9)
        let expected = 0.01 * -(0.9f64).ln();
        assert!((focal_loss(0.9, true, g(2.0)).unwrap() - expected).abs() < 1e-15);
        assert!((focal_loss(0.9, true, g(2.0)).unwrap() - 1.05361e-3).abs() < 1e-8);
        // Perfect prediction: zero up to the clamp.
        for gamma in [0.0, 0.5, 2.0, 5.0] {
            let l = focal_loss(1.0, true, g(gamma)).unwrap();
            assert!((0.0..=1.0000001e-7).contains(&l), "{gamma}: {l}");
            assert_eq!(focal_loss(0.0, false, g(gamma)).unwrap(), l);
        }
        assert!(focal_loss(0.0, true, g(0.0)).unwrap().is_finite());
    }

    #[test]
    fn gamma_must_be_non_negative() {
        assert!(FocalConfig::new(-0.1).is_err());
        assert!(FocalConfig::new(f64::NAN).is_err());
        assert!(FocalConfig::new(0.0).is_ok());
    }

    #[test]
    fn grid_focal_examples() {
        let s = spec(4);
        let target = BevGrid::from_fn(s, |c| ((c.row + c.col) % 2) as u8);
        let pred = target.map(|&y| f64::from(y));
        assert!(focal_loss_grid(&pred, &target, g(2.0)).unwrap() < 1e-20);
        let half = BevGrid::filled(s, 0.5);
        let l = focal_loss_grid(&half, &target, g(0.0)).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(focal_loss_grid(&BevGrid::filled(spec(3), 0.5), &target, g(0.0)).is_err());
        let mut bad = half.clone();
        bad.as_mut_slice()[3] = 1.5;
        assert!(focal_loss_grid(&bad, &target, g(0.0)).is_err());
    }

    #[test]
    fn grid_focal_matches_scalar_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = spec(8);
        for _ in 0..20 {
            let pred = BevGrid::from_fn(s, |_| rng.random::<f64>());
            let target = BevGrid::from_fn(s, |_| rng.random_range(0..2u8));
            let cfg = g(rng.random_range(0.0..5.0));
            let mut oracle = 0.0;
            for i in 0..64 {
                let p = pred.as_slice()[i];
                let pt = if target.as_slice()[i] == 1 { p } else { 1.0 - p };
                let pt = pt.clamp(1e-7, 1.0 - 1e-7);
                oracle += -(1.0 - pt).powf(cfg.gamma()) * pt.ln();
            }
            oracle /= 64.0;
            let got = focal_loss_grid(&pred, &target, cfg).unwrap();
            assert!((got - oracle).abs() <= 1e-12);
        }
    }

    #[test]
    fn centerness_examples() {
        let s = spec(2);
        let t = BevGrid::from_vec(s, vec![0.1, 0.9, 0.3, 0.0]).unwrap();
        let mask = BevGrid::from_vec(s, vec![1, 0, 0, 0]).unwrap();
        assert_eq!(centerness_loss(&t, &t, &mask).unwrap(), 0.0);

        let pred = t.map(|v| v + 2.0);
        let all_fg = BevGrid::filled(s, 1u8);
        assert!((centerness_loss(&pred, &t, &all_fg).unwrap() - 2.0).abs() < 1e-12);

        let pred = BevGrid::from_vec(s, vec![1.1, 0.9, 0.3, 0.0]).unwrap();
        assert!((centerness_loss(&pred, &t, &mask).unwrap() - 0.5).abs() < 1e-12);
        assert!(centerness_loss(&pred, &t, &BevGrid::filled(spec(3), 0u8)).is_err());
    }

    #[test]
    fn offset_examples() {
        let s = spec(2);
        let zero = BevGrid::filled(s, [0.0, 0.0]);
        let mut mask = BevGrid::filled(s, 0u8);
        assert_eq!(offset_loss(&zero, &zero, &mask).unwrap(), 0.0);
        mask.as_mut_slice()[2] = 1;
        let mut pred = zero.clone();
        pred.as_mut_slice()[2] = [0.75, -0.25];
        // Background error is ignored.
        pred.as_mut_slice()[0] = [9.0, 9.0];
        assert_eq!(offset_loss(&pred, &zero, &mask).unwrap(), 1.0);
        assert_eq!(offset_loss(&pred, &pred, &mask).unwrap(), 0.0);
        assert!(offset_loss(&pred, &BevGrid::filled(spec(1), [0.0; 2]), &mask).is_err());
    }

    #[test]
    fn multi_task_examples() {
        let w = TaskWeights::default();
        assert_eq!(multi_task_loss(1.0, 2.0, 3.0, w), 6.0);
        assert_eq!(multi_task_loss(0.0, 0.0, 0.0, w), 0.0);
        let w = TaskWeights::new(2.0, 0.5, 1.0).unwrap();
        assert_eq!(multi_task_loss(1.0, 4.0, 3.0, w), 7.0);
        assert!(TaskWeights::new(1.0, 0.0, 1.0).is_err());
        assert!(TaskWeights::new(-1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(-10.0) - 4.5398e-5).abs() < 1e-8);
    }

    proptest! {
        #[test]
        fn gamma_zero_is_cross_entropy(p in P_T_MIN..P_T_MAX, positive in any::<bool>()) {
            let pt = if positive { p } else { 1.0 - p };
            prop_assume!((P_T_MIN..=P_T_MAX).contains(&pt));
            let fl = focal_loss(p, positive, g(0.0)).unwrap();
            prop_assert!((fl + pt.ln()).abs() <= 1e-12);
        }

        #[test]
        fn non_increasing_in_gamma(p in 0.0..=1.0f64, positive in any::<bool>(), a in 0.0..6.0f64, b in 0.0..6.0f64) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(focal_loss(p, positive, g(hi)).unwrap() <= focal_loss(p, positive, g(lo)).unwrap());
        }

        #[test]
        fn losses_are_non_negative(p in 0.0..=1.0f64, positive in any::<bool>(), gamma in 0.0..6.0f64) {
            prop_assert!(focal_loss(p, positive, g(gamma)).unwrap() >= 0.0);
        }

        #[test]
        fn gradient_matches_central_difference(p in 0.01..0.99f64, positive in any::<bool>(), gamma in 0.0..5.0f64) {
            let h = 1e-6;
            let cfg = g(gamma);
            let fd = (focal_loss(p + h, positive, cfg).unwrap() - focal_loss(p - h, positive, cfg).unwrap()) / (2.0 * h);
            let an = focal_loss_grad(p, positive, cfg).unwrap();
            prop_assert!((an - fd).abs() <= 1e-5 * an.abs().max(1e-12), "an {} fd {}", an, fd);
        }
    }
}
