use rayon::prelude::*;

use super::config::SamplingConfig;
use super::feature_map::FeatureMap;
use crate::error::{Error, Result};
use crate::grid::{CellIndex, GridSpec};
use crate::projection::{project, CameraCalibration, Point3};

/// Vertical columns of 3D sample points, one per BEV anchor cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PillarSet {
    anchors: Vec<CellIndex>,
    points_per_pillar: usize,
    z_min: f64,
    z_max: f64,
    points: Vec<Point3>,
}

impl PillarSet {
    pub fn anchors(&self) -> &[CellIndex] {
        &self.anchors
    }

    pub fn points_per_pillar(&self) -> usize {
        self.points_per_pillar
    }

    pub fn z_range(&self) -> (f64, f64) {
        (self.z_min, self.z_max)
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Points of pillar `i`, bottom to top.
    pub fn pillar(&self, i: usize) -> &[Point3] {
        let n = self.points_per_pillar;
        &self.points[i * n..(i + 1) * n]
    }

    /// All points, pillar-major.
    pub fn points(&self) -> &[Point3] {
        &self.points
    }
}

/// `n` evenly spaced heights covering `[z_min, z_max]` inclusive.
pub(crate) fn pillar_heights(z_min: f64, z_max: f64, n: usize) -> Vec<f64> {
    let step = (z_max - z_min) / (n - 1) as f64;
    (0..n)
        .map(|i| if i + 1 == n { z_max } else { z_min + step * i as f64 })
        .collect()
}

/// Builds one pillar per anchor at the anchor's cell centre.
pub fn make_pillars(anchors: &[CellIndex], cfg: &SamplingConfig, spec: &GridSpec) -> Result<PillarSet> {
    cfg.validate_pillars()?;
    if let Some(bad) = anchors.iter().find(|a| !spec.contains(**a)) {
        return Err(Error::InvalidConfig(format!(
            "anchor ({}, {}) is outside the {n}x{n} grid",
            bad.row,
            bad.col,
            n = spec.cells_per_side()
        )));
    }
    let heights = pillar_heights(cfg.z_min, cfg.z_max, cfg.points_per_pillar);
    let points = anchors
        .iter()
        .flat_map(|&a| {
            let (x, y) = spec.cell_center(a);
            heights.iter().map(move |&z| Point3::new(x, y, z))
        })
        .collect();
    Ok(PillarSet {
        anchors: anchors.to_vec(),
        points_per_pillar: cfg.points_per_pillar,
        z_min: cfg.z_min,
        z_max: cfg.z_max,
        points,
    })
}

/// Per-anchor `points_per_pillar x C` feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume {
    points_per_pillar: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureVolume {
    pub fn points_per_pillar(&self) -> usize {
        self.points_per_pillar
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn anchor_count(&self) -> usize {
        if self.points_per_pillar == 0 || self.channels == 0 {
            0
        } else {
            self.data.len() / (self.points_per_pillar * self.channels)
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of one anchor as a view.
    pub fn pillar(&self, i: usize) -> PillarFeatures<'_> {
        let n = self.points_per_pillar * self.channels;
        PillarFeatures {
            data: &self.data[i * n..(i + 1) * n],
            points: self.points_per_pillar,
            channels: self.channels,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Borrowed `points x channels` block of one pillar.
#[derive(Debug, Clone, Copy)]
pub struct PillarFeatures<'a> {
    data: &'a [f64],
    points: usize,
    channels: usize,
}

impl<'a> PillarFeatures<'a> {
    pub fn new(data: &'a [f64], points: usize, channels: usize) -> Result<Self> {
        if data.len() != points * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {points} rows of {channels} channels",
                data.len()
            )));
        }
        Ok(Self { data, points, channels })
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Feature row of point `j` (ascending height).
    pub fn row(&self, j: usize) -> &'a [f64] {
        &self.data[j * self.channels..(j + 1) * self.channels]
    }

    pub fn as_slice(&self) -> &'a [f64] {
        self.data
    }
}

/// Pixel scale from calibration image coordinates to feature-map coordinates.
fn pixel_scale(fm: &FeatureMap, cal: &CameraCalibration) -> (f64, f64) {
    (
        fm.width() as f64 / f64::from(cal.width()),
        fm.height() as f64 / f64::from(cal.height()),
    )
}

/// Samples features for one column of points into `out` (`points.len() x C`).
pub(crate) fn pull_points(points: &[Point3], fm: &FeatureMap, cal: &CameraCalibration, out: &mut [f64]) {
    let (su, sv) = pixel_scale(fm, cal);
    for (p, row) in points.iter().zip(out.chunks_exact_mut(fm.channels())) {
        let px = project(*p, cal);
        fm.sample_into(px.u * su, px.v * sv, row);
    }
}

/// Projects every pillar point into the feature map and samples it.
///
/// Pixel coordinates are rescaled from the calibration image size to the
/// feature-map size before sampling.
pub fn pull_features(pillars: &PillarSet, fm: &FeatureMap, cal: &CameraCalibration) -> FeatureVolume {
    let c = fm.channels();
    let block = pillars.points_per_pillar * c;
    let mut data = vec![0.0; pillars.len() * block];
    data.par_chunks_mut(block.max(1))
        .enumerate()
        .for_each(|(i, out)| pull_points(pillars.pillar(i), fm, cal, out));
    FeatureVolume {
        points_per_pillar: pillars.points_per_pillar,
        channels: c,
        data,
    }
}
