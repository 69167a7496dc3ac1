//! BEV ground truth from 3D box annotations.
//!
//! A cell is positive when its centre lies inside the yaw-rotated footprint of
//! a box. Roll and pitch do not affect the footprint.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::grid::{BevGrid, CellIndex, GridSpec};

/// Standard deviation of the centerness Gaussian, meters.
pub const CENTERNESS_SIGMA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Vehicle,
    Pedestrian,
    Bicycle,
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectClass::Vehicle => "vehicle",
            ObjectClass::Pedestrian => "pedestrian",
            ObjectClass::Bicycle => "bicycle",
        })
    }
}

impl FromStr for ObjectClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vehicle" => Ok(ObjectClass::Vehicle),
            "pedestrian" => Ok(ObjectClass::Pedestrian),
            "bicycle" => Ok(ObjectClass::Bicycle),
            other => Err(Error::InvalidConfig(format!("unknown object class {other:?}"))),
        }
    }
}

/// An annotated object in the ego frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox3D {
    /// Box centre `(x, y, z)`, meters.
    pub center: [f64; 3],
    /// Rotation about the X, Y and Z axes, radians.
    pub rotation: [f64; 3],
    /// Length, width, height, meters. Length runs along the box's local x axis.
    pub size: [f64; 3],
    #[serde(rename = "class")]
    pub class_label: ObjectClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensor_distance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point_count: Option<u64>,
}

impl BoundingBox3D {
    pub fn new(center: [f64; 3], yaw: f64, size: [f64; 3], class_label: ObjectClass) -> Self {
        Self {
            center,
            rotation: [0.0, 0.0, yaw],
            size,
            class_label,
            sensor_distance: None,
            point_count: None,
        }
    }

    pub fn yaw(&self) -> f64 {
        self.rotation[2]
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.size.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig(format!(
                "box size {:?} must be positive",
                self.size
            )));
        }
        if self
            .center
            .iter()
            .chain(&self.rotation)
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidConfig("box pose must be finite".into()));
        }
        Ok(())
    }

    /// Whether the metric point `(x, y)` lies in the yaw-rotated footprint
    /// (boundary included).
    pub fn footprint_contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.yaw().sin_cos();
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        let along = c * dx + s * dy;
        let across = -s * dx + c * dy;
        along.abs() <= 0.5 * self.size[0] && across.abs() <= 0.5 * self.size[1]
    }

    /// Half-extents of the axis-aligned bounds of the footprint.
    fn footprint_half_extent(&self) -> (f64, f64) {
        let (s, c) = self.yaw().sin_cos();
        let (hl, hw) = (0.5 * self.size[0], 0.5 * self.size[1]);
        (hl * c.abs() + hw * s.abs(), hl * s.abs() + hw * c.abs())
    }

    /// Cells whose centres may lie in the footprint (a superset).
    fn candidate_cells(&self, spec: &GridSpec) -> impl Iterator<Item = CellIndex> {
        let (ex, ey) = self.footprint_half_extent();
        let half = 0.5 * spec.side_meters();
        let res = spec.resolution();
        let n = spec.cells_per_side() as f64;
        // row centre x = half - (row + 0.5) res, so x in [cx-ex, cx+ex] maps to
        // row in [(half - cx - ex)/res - 0.5, (half - cx + ex)/res - 0.5].
        let span = |c: f64, e: f64| {
            let lo = ((half - c - e) / res - 0.5).floor().max(0.0);
            let hi = ((half - c + e) / res - 0.5).ceil().min(n - 1.0);
            if hi < lo {
                0..0
            } else {
                lo as usize..hi as usize + 1
            }
        };
        let rows = span(self.center[0], ex);
        let cols = span(self.center[1], ey);
        rows.flat_map(move |r| cols.clone().map(move |c| CellIndex::new(r, c)))
    }
}

/// Segmentation, centerness and offset targets on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BevTargets {
    /// 1 inside any selected box footprint, else 0.
    pub segmentation: BevGrid<u8>,
    /// Max over boxes of a Gaussian bump peaking at 1 on the box-centre cell.
    pub centerness: BevGrid<f64>,
    /// `box_center - cell_center` for the owning box; `None` on background.
    pub offset: BevGrid<Option<[f64; 2]>>,
}

impl BevTargets {
    /// Offsets with background cells set to zero.
    pub fn offset_dense(&self) -> BevGrid<[f64; 2]> {
        self.offset.map(|o| o.unwrap_or([0.0, 0.0]))
    }
}

fn selected(
    boxes: &[BoundingBox3D],
    class_filter: Option<ObjectClass>,
) -> impl Iterator<Item = &BoundingBox3D> {
    boxes
        .iter()
        .filter(move |b| class_filter.is_none_or(|c| b.class_label == c))
}

/// Binary label grid. `class_filter = None` keeps every class.
pub fn rasterize(
    boxes: &[BoundingBox3D],
    spec: &GridSpec,
    class_filter: Option<ObjectClass>,
) -> BevGrid<u8> {
    let mut grid = BevGrid::filled(*spec, 0u8);
    for b in selected(boxes, class_filter) {
        for cell in b.candidate_cells(spec) {
            let (x, y) = spec.cell_center(cell);
            if b.footprint_contains(x, y) {
                grid.set(cell, 1);
            }
        }
    }
    grid
}

/// Segmentation, centerness and offset targets.
///
/// A positive cell is owned by the containing box whose centre is nearest the
/// cell centre; ties go to the earlier box.
pub fn build_targets(
    boxes: &[BoundingBox3D],
    spec: &GridSpec,
    class_filter: Option<ObjectClass>,
) -> BevTargets {
    let boxes: Vec<&BoundingBox3D> = selected(boxes, class_filter).collect();
    let mut segmentation = BevGrid::filled(*spec, 0u8);
    let mut offset: BevGrid<Option<[f64; 2]>> = BevGrid::filled(*spec, None);
    // Squared distance from the current owner's centre, per cell.
    let mut owner_d2 = BevGrid::filled(*spec, f64::INFINITY);

    for b in &boxes {
        for cell in b.candidate_cells(spec) {
            let (x, y) = spec.cell_center(cell);
            if !b.footprint_contains(x, y) {
                continue;
            }
            let dx = b.center[0] - x;
            let dy = b.center[1] - y;
            let d2 = dx * dx + dy * dy;
            segmentation.set(cell, 1);
            if d2 < *owner_d2.get(cell) {
                owner_d2.set(cell, d2);
                offset.set(cell, Some([dx, dy]));
            }
        }
    }

    let two_sigma2 = 2.0 * CENTERNESS_SIGMA * CENTERNESS_SIGMA;
    let peaks: Vec<(f64, f64)> = boxes
        .iter()
        .map(|b| {
            // Snap the peak to the centre of the cell holding the box centre so
            // that cell reads exactly 1.
            spec.cell_at(b.center[0], b.center[1])
                .map(|c| spec.cell_center(c))
                .unwrap_or((b.center[0], b.center[1]))
        })
        .collect();
    let centerness = BevGrid::from_fn(*spec, |cell| {
        let (x, y) = spec.cell_center(cell);
        peaks
            .iter()
            .map(|&(px, py)| {
                let d2 = (x - px).powi(2) + (y - py).powi(2);
                (-d2 / two_sigma2).exp()
            })
            .fold(0.0, f64::max)
            .clamp(0.0, 1.0)
    });

    BevTargets {
        segmentation,
        centerness,
        offset,
    }
}
