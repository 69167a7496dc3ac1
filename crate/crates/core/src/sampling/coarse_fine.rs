//! Two-stage sampling: a sparse coarse pass picks the top-k anchor cells, a
//! fine pass densifies around them, and both are merged into one logit map.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{CoarseSelection, SamplingConfig};
use super::decoder::Decoder;
use super::feature_map::FeatureMap;
use super::pillars::{make_pillars, pull_points, PillarFeatures};
use crate::error::{Error, Result};
use crate::grid::{BevGrid, CellIndex, GridSpec};
use crate::projection::CameraCalibration;

/// Logits for a subset of grid cells, iterated in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseLogits {
    spec: GridSpec,
    values: BTreeMap<CellIndex, f64>,
}

impl SparseLogits {
    pub fn empty(spec: GridSpec) -> Self {
        Self {
            spec,
            values: BTreeMap::new(),
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn get(&self, cell: CellIndex) -> Option<f64> {
        self.values.get(&cell).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (CellIndex, f64)> + '_ {
        self.values.iter().map(|(c, v)| (*c, *v))
    }

    pub fn cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        self.values.keys().copied()
    }
}

/// Result of the coarse pass.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseOutput {
    pub logits: SparseLogits,
    /// Highest-logit cells, best first.
    pub kept: Vec<CellIndex>,
}

/// Everything produced by one coarse-to-fine run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub coarse: SparseLogits,
    pub kept: Vec<CellIndex>,
    pub fine_anchors: Vec<CellIndex>,
    pub fine: SparseLogits,
    /// Dense merged logits.
    pub logits: BevGrid<f64>,
}

/// Stride of the coarse lattice: the largest `s` with `ceil(N/s)^2 >= n_coarse`.
fn coarse_stride(cells_per_side: usize, n_coarse: usize) -> usize {
    let total = (cells_per_side * cells_per_side) as f64;
    let mut s = ((total / n_coarse as f64).sqrt().floor() as usize).max(1);
    // Guard against sqrt rounding in either direction.
    while s > 1 && cells_per_side.div_ceil(s).pow(2) < n_coarse {
        s -= 1;
    }
    while cells_per_side.div_ceil(s + 1).pow(2) >= n_coarse && s < cells_per_side {
        s += 1;
    }
    s
}

/// Coarse anchor cells in row-major order.
pub fn coarse_anchors(cfg: &SamplingConfig, spec: &GridSpec) -> Result<Vec<CellIndex>> {
    cfg.validate(spec)?;
    let n = spec.cells_per_side();
    match cfg.coarse_selection {
        CoarseSelection::Stride => {
            let s = coarse_stride(n, cfg.n_coarse);
            let start = ((n - 1) % s) / 2;
            let lattice: Vec<usize> = (start..n).step_by(s).collect();
            Ok(lattice
                .iter()
                .flat_map(|&r| lattice.iter().map(move |&c| CellIndex::new(r, c)))
                .collect())
        }
        CoarseSelection::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = rand::seq::index::sample(&mut rng, spec.cell_count(), cfg.n_coarse).into_vec();
            picked.sort_unstable();
            Ok(picked.into_iter().map(|i| spec.cell_from_linear(i)).collect())
        }
    }
}

/// Runs the feature-pulling process on `anchors` and decodes one logit each.
///
/// Anchors are processed in parallel; each logit depends only on its own
/// pillar, so the result is identical to a sequential run.
pub fn evaluate_anchors(
    anchors: &[CellIndex],
    fm: &FeatureMap,
    cal: &CameraCalibration,
    cfg: &SamplingConfig,
    spec: &GridSpec,
    decoder: &dyn Decoder,
) -> Result<SparseLogits> {
    decoder.check_channels(fm.channels())?;
    let pillars = make_pillars(anchors, cfg, spec)?;
    let ppp = pillars.points_per_pillar();
    let c = fm.channels();
    let logits: Vec<f64> = (0..pillars.len())
        .into_par_iter()
        .map_init(
            || vec![0.0; ppp * c],
            |buf, i| {
                pull_points(pillars.pillar(i), fm, cal, buf);
                let view = PillarFeatures::new(buf, ppp, c).expect("buffer sized to pillar");
                decoder.decode(view)
            },
        )
        .collect();
    Ok(SparseLogits {
        spec: *spec,
        values: anchors.iter().copied().zip(logits).collect(),
    })
}

/// Orders by logit descending, then row-major cell index ascending.
fn rank(a: &(CellIndex, f64), b: &(CellIndex, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// The `k` highest-logit cells, best first; ties go to the lower row-major index.
pub fn top_k(logits: &SparseLogits, k: usize) -> Result<Vec<CellIndex>> {
    if k > logits.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot keep {k} anchors out of {}",
            logits.len()
        )));
    }
    let mut ranked: Vec<(CellIndex, f64)> = logits.iter().collect();
    if k < ranked.len() && k > 0 {
        ranked.select_nth_unstable_by(k - 1, rank);
    }
    ranked.truncate(k);
    ranked.sort_by(rank);
    Ok(ranked.into_iter().map(|(c, _)| c).collect())
}

/// Samples the coarse anchors and keeps the `k` best.
pub fn coarse_pass(
    fm: &FeatureMap,
    cal: &CameraCalibration,
    cfg: &SamplingConfig,
    spec: &GridSpec,
    decoder: &dyn Decoder,
) -> Result<CoarseOutput> {
    let anchors = coarse_anchors(cfg, spec)?;
    let logits = evaluate_anchors(&anchors, fm, cal, cfg, spec, decoder)?;
    let kept = top_k(&logits, cfg.k)?;
    Ok(CoarseOutput { logits, kept })
}

/// Union of `kept + pattern`, clipped to the grid, row-major and deduplicated.
pub fn fine_anchors(kept: &[CellIndex], pattern: &[(i64, i64)], spec: &GridSpec) -> Vec<CellIndex> {
    let set: BTreeSet<CellIndex> = kept
        .iter()
        .flat_map(|&a| pattern.iter().filter_map(move |&(dr, dc)| spec.offset(a, dr, dc)))
        .collect();
    set.into_iter().collect()
}

/// Samples the neighbourhoods of the kept anchors.
pub fn fine_pass(
    kept: &[CellIndex],
    fm: &FeatureMap,
    cal: &CameraCalibration,
    cfg: &SamplingConfig,
    spec: &GridSpec,
    decoder: &dyn Decoder,
) -> Result<SparseLogits> {
    let anchors = fine_anchors(kept, &cfg.fine_pattern, spec);
    evaluate_anchors(&anchors, fm, cal, cfg, spec, decoder)
}

/// Dense logits: fine value if present, else coarse, else `fill`.
pub fn combine(coarse: &SparseLogits, fine: &SparseLogits, fill: f64) -> Result<BevGrid<f64>> {
    if coarse.spec != fine.spec {
        return Err(Error::ShapeMismatch(
            "coarse and fine logits use different grids".into(),
        ));
    }
    let mut out = BevGrid::filled(coarse.spec, fill);
    for (cell, v) in coarse.iter().chain(fine.iter()) {
        out.set(cell, v);
    }
    Ok(out)
}

/// Coarse pass, fine pass and merge.
pub fn run_pipeline(
    fm: &FeatureMap,
    cal: &CameraCalibration,
    cfg: &SamplingConfig,
    spec: &GridSpec,
    decoder: &dyn Decoder,
) -> Result<PipelineOutput> {
    let CoarseOutput { logits: coarse, kept } = coarse_pass(fm, cal, cfg, spec, decoder)?;
    let fine_anchors = fine_anchors(&kept, &cfg.fine_pattern, spec);
    let fine = evaluate_anchors(&fine_anchors, fm, cal, cfg, spec, decoder)?;
    let logits = combine(&coarse, &fine, cfg.background_logit)?;
    Ok(PipelineOutput {
        coarse,
        kept,
        fine_anchors,
        fine,
        logits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{square_pattern, LinearDecoder};
    use proptest::prelude::*;

    /// Logit 1 for the pillar whose features equal `target`, else 0.
    struct Spotlight {
        target: Vec<f64>,
    }

    impl Decoder for Spotlight {
        fn decode(&self, features: PillarFeatures<'_>) -> f64 {
            if features.as_slice() == self.target.as_slice() {
                1.0
            } else {
                0.0
            }
        }
    }

    fn sparse(spec: GridSpec, values: &[(CellIndex, f64)]) -> SparseLogits {
        SparseLogits {
            spec,
            values: values.iter().copied().collect(),
        }
    }

    #[test]
    fn stride_covers_requested_count() {
        let spec = GridSpec::default();
        for n in [1, 2, 100, 2500, 2501, 10_000, 39_999, 40_000] {
            let cfg = SamplingConfig {
                n_coarse: n,
                k: 0,
                ..SamplingConfig::default()
            };
            let anchors = coarse_anchors(&cfg, &spec).unwrap();
            assert!(anchors.len() >= n, "{n} -> {}", anchors.len());
            assert!(anchors.windows(2).all(|w| w[0] < w[1]));
        }
        let cfg = SamplingConfig::default();
        assert_eq!(coarse_anchors(&cfg, &spec).unwrap().len(), 2500);
        let dense = coarse_anchors(&SamplingConfig::dense(&spec), &spec).unwrap();
        assert_eq!(dense, spec.cells().collect::<Vec<_>>());
    }

    #[test]
    fn random_selection_is_seeded() {
        let spec = GridSpec::from_cells(30, 0.5).unwrap();
        let cfg = SamplingConfig {
            n_coarse: 50,
            k: 3,
            coarse_selection: CoarseSelection::Random { seed: 7 },
            ..SamplingConfig::default()
        };
        let a = coarse_anchors(&cfg, &spec).unwrap();
        assert_eq!(a.len(), 50);
        assert_eq!(a, coarse_anchors(&cfg, &spec).unwrap());
        let other = SamplingConfig {
            coarse_selection: CoarseSelection::Random { seed: 8 },
            ..cfg
        };
        assert_ne!(a, coarse_anchors(&other, &spec).unwrap());
    }

    #[test]
    fn top_one_is_argmax() {
        let spec = GridSpec::from_cells(4, 1.0).unwrap();
        let mut values: Vec<(CellIndex, f64)> = spec.cells().map(|c| (c, 0.0)).collect();
        values[6].1 = 1.0;
        let logits = sparse(spec, &values);
        assert_eq!(top_k(&logits, 1).unwrap(), vec![CellIndex::new(1, 2)]);
        // All equal: lowest row-major index wins.
        let flat = sparse(spec, &spec.cells().map(|c| (c, 0.5)).collect::<Vec<_>>());
        assert_eq!(top_k(&flat, 2).unwrap(), vec![CellIndex::new(0, 0), CellIndex::new(0, 1)]);
        assert!(top_k(&flat, 17).is_err());
        assert!(top_k(&flat, 0).unwrap().is_empty());
    }

    #[test]
    fn fine_anchor_counts() {
        let spec = GridSpec::from_cells(10, 0.5).unwrap();
        let a = CellIndex::new(4, 4);
        assert_eq!(fine_anchors(&[a], &[(0, 0)], &spec), vec![a]);
        assert_eq!(fine_anchors(&[CellIndex::new(0, 0)], &square_pattern(1), &spec).len(), 4);
        assert_eq!(fine_anchors(&[CellIndex::new(9, 9)], &square_pattern(1), &spec).len(), 4);
        assert_eq!(fine_anchors(&[a, CellIndex::new(4, 5)], &square_pattern(1), &spec).len(), 12);
        assert!(fine_anchors(&[], &square_pattern(1), &spec).is_empty());
    }

    #[test]
    fn combine_precedence() {
        let spec = GridSpec::from_cells(3, 1.0).unwrap();
        let c = sparse(spec, &[(CellIndex::new(0, 0), 1.0), (CellIndex::new(1, 1), 2.0)]);
        let f = sparse(spec, &[(CellIndex::new(1, 1), 5.0)]);
        let out = combine(&c, &f, -10.0).unwrap();
        assert_eq!(
            out.as_slice(),
            &[1.0, -10.0, -10.0, -10.0, 5.0, -10.0, -10.0, -10.0, -10.0]
        );
        let out = combine(&c, &SparseLogits::empty(spec), -10.0).unwrap();
        assert_eq!(*out.get(CellIndex::new(1, 1)), 2.0);
        let other = SparseLogits::empty(GridSpec::from_cells(4, 1.0).unwrap());
        assert!(combine(&c, &other, 0.0).is_err());
    }

    #[test]
    fn coarse_pass_finds_single_lit_cell() {
        let spec = GridSpec::from_cells(20, 0.5).unwrap();
        let cal = CameraCalibration::default();
        // Pixel coordinates as features make every pillar's rows distinct.
        let fm = FeatureMap::from_fn(2, 640, 1280, |c, r, col| if c == 0 { col as f64 } else { r as f64 })
            .unwrap();
        let cfg = SamplingConfig {
            n_coarse: 400,
            k: 1,
            ..SamplingConfig::default()
        };
        let target = CellIndex::new(3, 12);
        let pillars = make_pillars(&[target], &cfg, &spec).unwrap();
        let decoder = Spotlight {
            target: crate::sampling::pull_features(&pillars, &fm, &cal).as_slice().to_vec(),
        };
        let out = coarse_pass(&fm, &cal, &cfg, &spec, &decoder).unwrap();
        assert_eq!(out.kept, vec![target]);
        assert_eq!(out.logits.iter().filter(|(_, v)| *v == 1.0).count(), 1);
        let too_many = SamplingConfig { k: 401, ..cfg };
        assert!(coarse_pass(&fm, &cal, &too_many, &spec, &decoder).is_err());
    }

    #[test]
    fn dense_config_evaluates_every_cell() {
        let spec = GridSpec::from_cells(12, 0.5).unwrap();
        let cal = CameraCalibration::default();
        let fm = FeatureMap::from_fn(2, 16, 32, |c, r, col| ((c + 1) * (r + 2 * col)) as f64).unwrap();
        let decoder = LinearDecoder::new(vec![0.1, -0.03], 0.2);
        let out = run_pipeline(&fm, &cal, &SamplingConfig::dense(&spec), &spec, &decoder).unwrap();
        assert_eq!(out.coarse.len(), spec.cell_count());
        assert!(out.kept.is_empty() && out.fine.is_empty());
        for (cell, v) in out.logits.iter() {
            assert_eq!(Some(*v), out.coarse.get(cell));
        }
    }

    proptest! {
        #[test]
        fn top_k_matches_full_sort(values in prop::collection::vec(-3i32..3, 1..120), k in 0usize..12) {
            // Small integer logits force plenty of ties.
            let spec = GridSpec::from_cells(11, 1.0).unwrap();
            let cells: Vec<(CellIndex, f64)> = values
                .iter()
                .enumerate()
                .map(|(i, v)| (spec.cell_from_linear(i), f64::from(*v)))
                .collect();
            let logits = sparse(spec, &cells);
            let k = k.min(cells.len());
            let mut oracle = cells.clone();
            oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let expected: Vec<CellIndex> = oracle.iter().take(k).map(|c| c.0).collect();
            prop_assert_eq!(top_k(&logits, k).unwrap(), expected);
        }

        #[test]
        fn shuffled_anchors_give_same_logits(seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let spec = GridSpec::from_cells(16, 0.5).unwrap();
            let cal = CameraCalibration::default();
            let fm = FeatureMap::from_fn(1, 8, 16, |_, r, c| ((r * 7 + c * 3) % 5) as f64).unwrap();
            let decoder = LinearDecoder::new(vec![1.0], 0.0);
            let cfg = SamplingConfig { n_coarse: 64, k: 6, ..SamplingConfig::default() };
            let anchors = coarse_anchors(&cfg, &spec).unwrap();
            let mut shuffled = anchors.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let a = evaluate_anchors(&anchors, &fm, &cal, &cfg, &spec, &decoder).unwrap();
            let b = evaluate_anchors(&shuffled, &fm, &cal, &cfg, &spec, &decoder).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(top_k(&a, 6).unwrap(), top_k(&b, 6).unwrap());
        }

        #[test]
        fn fine_set_contains_kept_and_grows_with_k(
            values in prop::collection::vec(-5.0..5.0f64, 100),
            k in 0usize..20,
        ) {
            let spec = GridSpec::from_cells(10, 1.0).unwrap();
            let cells: Vec<(CellIndex, f64)> =
                values.iter().enumerate().map(|(i, v)| (spec.cell_from_linear(i), *v)).collect();
            let logits = sparse(spec, &cells);
            let pattern = square_pattern(1);
            let kept = top_k(&logits, k).unwrap();
            let fine: BTreeSet<CellIndex> = fine_anchors(&kept, &pattern, &spec).into_iter().collect();
            prop_assert!(kept.iter().all(|a| fine.contains(a)));
            let more = top_k(&logits, k + 1).unwrap();
            let fine_more: BTreeSet<CellIndex> = fine_anchors(&more, &pattern, &spec).into_iter().collect();
            prop_assert!(fine.is_subset(&fine_more));
        }
    }
}
