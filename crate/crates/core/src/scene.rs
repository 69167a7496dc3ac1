//! Seeded synthetic scenes for end-to-end runs.
//!
//! Boxes are placed uniformly and kept pairwise disjoint. The feature map is
//! built so that a [`LinearDecoder`] reading channel 0 recovers the ground
//! truth: channel 0 is the least-squares image whose bilinear samples,
//! mean-pooled over each cell's pillar, reproduce the 0/1 labels. Remaining
//! channels carry seeded texture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ground_truth::{rasterize, BoundingBox3D, ObjectClass};
use crate::grid::{BevGrid, GridSpec};
use crate::projection::{project, CameraCalibration};
use crate::sampling::{make_pillars, FeatureMap, LinearDecoder, SamplingConfig};

/// Weight of channel 0 in the generated decoder; the bias centres it at 0.5.
const SIGNAL_GAIN: f64 = 8.0;
const TEXTURE_GAIN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_boxes: usize,
    /// Box centres are drawn from `[-placement, placement]^2`, meters.
    pub placement: f64,
    pub length: (f64, f64),
    pub width: (f64, f64),
    pub height: (f64, f64),
    /// Feature map `(C, H, W)`.
    pub feature_map: (usize, usize, usize),
    pub calibration: CameraCalibration,
    pub grid: GridSpec,
    pub sampling: SamplingConfig,
    /// Conjugate-gradient iterations used to fit the feature map.
    pub solver_iterations: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_boxes: 8,
            placement: 45.0,
            length: (3.5, 5.0),
            width: (1.6, 2.0),
            height: (1.4, 1.8),
            feature_map: (4, 320, 640),
            calibration: CameraCalibration::default(),
            grid: GridSpec::default(),
            sampling: SamplingConfig::default(),
            solver_iterations: 300,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi;
        if !(range_ok(self.length) && range_ok(self.width) && range_ok(self.height)) {
            return Err(Error::InvalidConfig("box size ranges must satisfy 0 < min <= max".into()));
        }
        if !(self.placement.is_finite() && self.placement >= 0.0) {
            return Err(Error::InvalidConfig(format!("placement {} must be >= 0", self.placement)));
        }
        let (c, h, w) = self.feature_map;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidConfig(format!("feature map {c}x{h}x{w} must be non-empty")));
        }
        self.calibration.validate()?;
        self.sampling.validate_pillars()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub boxes: Vec<BoundingBox3D>,
    pub ground_truth: BevGrid<u8>,
    pub feature_map: FeatureMap,
    pub calibration: CameraCalibration,
    pub decoder: LinearDecoder,
}

/// Upper bound on placement attempts per box.
const MAX_ATTEMPTS: usize = 10_000;

fn place_boxes(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Vec<BoundingBox3D>> {
    let draw = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if lo == hi { lo } else { rng.random_range(lo..hi) };
    let mut boxes: Vec<BoundingBox3D> = Vec::with_capacity(spec.n_boxes);
    for _ in 0..spec.n_boxes {
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS {
            let x = rng.random_range(-spec.placement..=spec.placement);
            let y = rng.random_range(-spec.placement..=spec.placement);
            let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let size = [draw(rng, spec.length), draw(rng, spec.width), draw(rng, spec.height)];
            let cand = BoundingBox3D::new([x, y, size[2] / 2.0], yaw, size, ObjectClass::Vehicle);
            // Circumscribed discs plus one cell of clearance keep footprints
            // and their rasterizations apart.
            let clear = |b: &BoundingBox3D| {
                let d = (b.center[0] - x).hypot(b.center[1] - y);
                d > circumradius(b) + circumradius(&cand) + 2.0 * spec.grid.resolution()
            };
            if boxes.iter().all(clear) {
                boxes.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InvalidConfig(format!(
                "could not place {} disjoint boxes within ±{} m",
                spec.n_boxes, spec.placement
            )));
        }
    }
    Ok(boxes)
}

fn circumradius(b: &BoundingBox3D) -> f64 {
    0.5 * b.size[0].hypot(b.size[1])
}

/// Sparse rows of the linear map from channel-0 pixels to mean-pooled cell
/// features: `(pixel, weight)` pairs, one row per cell.
struct Sampler {
    offsets: Vec<usize>,
    entries: Vec<(usize, f64)>,
}

impl Sampler {
    fn new(spec: &SceneSpec) -> Result<Self> {
        let (_, h, w) = spec.feature_map;
        let cal = &spec.calibration;
        let su = w as f64 / f64::from(cal.width());
        let sv = h as f64 / f64::from(cal.height());
        let cells: Vec<_> = spec.grid.cells().collect();
        let pillars = make_pillars(&cells, &spec.sampling, &spec.grid)?;
        let share = 1.0 / pillars.points_per_pillar() as f64;
        let mut offsets = Vec::with_capacity(cells.len() + 1);
        let mut entries = Vec::with_capacity(cells.len() * pillars.points_per_pillar() * 4);
        offsets.push(0);
        for i in 0..cells.len() {
            for p in pillars.pillar(i) {
                let px = project(*p, cal);
                // Same clamping and corner weights as bilinear sampling.
                let u = (px.u * su).clamp(0.0, (w - 1) as f64);
                let v = (px.v * sv).clamp(0.0, (h - 1) as f64);
                let x0 = (u.floor() as usize).min(w - 1);
                let y0 = (v.floor() as usize).min(h - 1);
                let x1 = (x0 + 1).min(w - 1);
                let y1 = (y0 + 1).min(h - 1);
                let fx = u - x0 as f64;
                let fy = v - y0 as f64;
                entries.push((y0 * w + x0, share * (1.0 - fx) * (1.0 - fy)));
                entries.push((y0 * w + x1, share * fx * (1.0 - fy)));
                entries.push((y1 * w + x0, share * (1.0 - fx) * fy));
                entries.push((y1 * w + x1, share * fx * fy));
            }
            offsets.push(entries.len());
        }
        Ok(Self { offsets, entries })
    }

    fn apply(&self, image: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            *o = self.entries[self.offsets[i]..self.offsets[i + 1]]
                .iter()
                .map(|&(px, wt)| wt * image[px])
                .sum();
        });
    }

    fn adjoint(&self, cells: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (i, &c) in cells.iter().enumerate() {
            for &(px, wt) in &self.entries[self.offsets[i]..self.offsets[i + 1]] {
                out[px] += wt * c;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Least-squares channel-0 image whose mean-pooled pillar samples match the
/// 0/1 ground truth, by conjugate gradients on the normal equations.
fn solve_signal(spec: &SceneSpec, gt: &BevGrid<u8>) -> Result<Vec<f64>> {
    let (_, h, w) = spec.feature_map;
    let a = Sampler::new(spec)?;
    let mut image = vec![0.0; h * w];
    let mut residual: Vec<f64> = gt.as_slice().iter().map(|&v| f64::from(v)).collect();
    let mut grad = vec![0.0; h * w];
    a.adjoint(&residual, &mut grad);
    let mut dir = grad.clone();
    let mut gamma = dot(&grad, &grad);
    let mut q = vec![0.0; residual.len()];
    for _ in 0..spec.solver_iterations {
        if gamma <= f64::EPSILON {
            break;
        }
        a.apply(&dir, &mut q);
        let qq = dot(&q, &q);
        if qq <= 0.0 {
            break;
        }
        let alpha = gamma / qq;
        image.iter_mut().zip(&dir).for_each(|(x, d)| *x += alpha * d);
        residual.iter_mut().zip(&q).for_each(|(r, q)| *r -= alpha * q);
        a.adjoint(&residual, &mut grad);
        let next = dot(&grad, &grad);
        let beta = next / gamma;
        gamma = next;
        dir.iter_mut().zip(&grad).for_each(|(d, g)| *d = g + beta * *d);
    }
    Ok(image)
}

fn build_feature_map(spec: &SceneSpec, gt: &BevGrid<u8>, rng: &mut ChaCha8Rng) -> Result<FeatureMap> {
    let (c, h, w) = spec.feature_map;
    let mut data = Vec::with_capacity(c * h * w);
    data.extend(solve_signal(spec, gt)?);
    for _ in 1..c {
        data.extend((0..h * w).map(|_| rng.random_range(-1.0..1.0)));
    }
    FeatureMap::new(c, h, w, data)
}

/// Generates a reproducible scene. Identical specs give identical scenes.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let boxes = place_boxes(spec, &mut rng)?;
    let ground_truth = rasterize(&boxes, &spec.grid, Some(ObjectClass::Vehicle));
    let feature_map = build_feature_map(spec, &ground_truth, &mut rng)?;
    let c = spec.feature_map.0;
    let mut weights = vec![TEXTURE_GAIN; c];
    weights[0] = SIGNAL_GAIN;
    Ok(Scene {
        boxes,
        ground_truth,
        feature_map,
        calibration: spec.calibration.clone(),
        decoder: LinearDecoder::new(weights, -0.5 * SIGNAL_GAIN),
    })
}
