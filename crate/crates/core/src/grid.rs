//! Square, ego-centred metric grids.
//!
//! Orientation: +x (forward) points to row 0, +y (left) points to column 0.
//! A cell `(row, col)` has its centre at
//! `x = side/2 - (row + 0.5) * res`, `y = side/2 - (col + 0.5) * res`.

use crate::error::{Error, Result};

/// Default grid extent in meters.
pub const DEFAULT_SIDE_METERS: f64 = 100.0;
/// Default cell size in meters.
pub const DEFAULT_RESOLUTION: f64 = 0.5;

/// Geometry of a square BEV grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    side_meters: f64,
    resolution: f64,
    cells: usize,
}

impl GridSpec {
    /// Builds a grid spec; `side_meters / resolution` must be a positive integer.
    pub fn new(side_meters: f64, resolution: f64) -> Result<Self> {
        if !(side_meters.is_finite() && resolution.is_finite() && side_meters > 0.0 && resolution > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "side {side_meters} m and resolution {resolution} m must be positive and finite"
            )));
        }
        let ratio = side_meters / resolution;
        let cells = ratio.round();
        if cells < 1.0 || (ratio - cells).abs() > 1e-9 * cells.max(1.0) {
            return Err(Error::InvalidGrid(format!(
                "side {side_meters} m is not an integer multiple of resolution {resolution} m"
            )));
        }
        Ok(Self {
            side_meters,
            resolution,
            cells: cells as usize,
        })
    }

    /// Grid spec with `cells` cells per side at the given resolution.
    pub fn from_cells(cells: usize, resolution: f64) -> Result<Self> {
        if cells == 0 {
            return Err(Error::InvalidGrid("grid must have at least one cell".into()));
        }
        Self::new(cells as f64 * resolution, resolution)
    }

    pub fn side_meters(&self) -> f64 {
        self.side_meters
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    /// Number of cells along one side.
    pub fn cells_per_side(&self) -> usize {
        self.cells
    }

    pub fn cell_count(&self) -> usize {
        self.cells * self.cells
    }

    /// Metric `(x, y)` of a cell centre.
    pub fn cell_center(&self, cell: CellIndex) -> (f64, f64) {
        let half = 0.5 * self.side_meters;
        (
            half - (cell.row as f64 + 0.5) * self.resolution,
            half - (cell.col as f64 + 0.5) * self.resolution,
        )
    }

    /// The cell containing metric point `(x, y)`, or `None` outside the grid.
    pub fn cell_at(&self, x: f64, y: f64) -> Option<CellIndex> {
        let half = 0.5 * self.side_meters;
        let row = ((half - x) / self.resolution).floor();
        let col = ((half - y) / self.resolution).floor();
        let n = self.cells as f64;
        if row >= 0.0 && row < n && col >= 0.0 && col < n {
            Some(CellIndex::new(row as usize, col as usize))
        } else {
            None
        }
    }

    pub fn contains(&self, cell: CellIndex) -> bool {
        cell.row < self.cells && cell.col < self.cells
    }

    /// Row-major linear index.
    pub fn linear(&self, cell: CellIndex) -> usize {
        cell.row * self.cells + cell.col
    }

    pub fn cell_from_linear(&self, index: usize) -> CellIndex {
        CellIndex::new(index / self.cells, index % self.cells)
    }

    /// All cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        (0..self.cell_count()).map(move |i| self.cell_from_linear(i))
    }

    /// Cell `cell + (d_row, d_col)` if it stays inside the grid.
    pub fn offset(&self, cell: CellIndex, d_row: i64, d_col: i64) -> Option<CellIndex> {
        let row = cell.row as i64 + d_row;
        let col = cell.col as i64 + d_col;
        let n = self.cells as i64;
        if (0..n).contains(&row) && (0..n).contains(&col) {
            Some(CellIndex::new(row as usize, col as usize))
        } else {
            None
        }
    }

    fn same_shape(&self, other: &GridSpec) -> bool {
        self.cells == other.cells && self.resolution == other.resolution
    }
}

impl Default for GridSpec {
    /// 100 m x 100 m at 0.5 m, i.e. 200 x 200 cells.
    fn default() -> Self {
        Self::new(DEFAULT_SIDE_METERS, DEFAULT_RESOLUTION).expect("default grid is valid")
    }
}

/// A `(row, col)` cell address. Ordering is row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellIndex {
    pub row: usize,
    pub col: usize,
}

impl CellIndex {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

/// Dense square grid of per-cell payloads, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BevGrid<T> {
    spec: GridSpec,
    cells: Vec<T>,
}

impl<T: Clone> BevGrid<T> {
    pub fn filled(spec: GridSpec, value: T) -> Self {
        Self {
            spec,
            cells: vec![value; spec.cell_count()],
        }
    }
}

impl<T> BevGrid<T> {
    pub fn from_vec(spec: GridSpec, cells: Vec<T>) -> Result<Self> {
        if cells.len() != spec.cell_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {n}x{n} grid",
                cells.len(),
                n = spec.cells_per_side()
            )));
        }
        Ok(Self { spec, cells })
    }

    pub fn from_fn(spec: GridSpec, mut f: impl FnMut(CellIndex) -> T) -> Self {
        let cells = spec.cells().map(&mut f).collect();
        Self { spec, cells }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn as_slice(&self) -> &[T] {
        &self.cells
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.cells
    }

    pub fn into_vec(self) -> Vec<T> {
        self.cells
    }

    pub fn get(&self, cell: CellIndex) -> &T {
        &self.cells[self.spec.linear(cell)]
    }

    pub fn get_mut(&mut self, cell: CellIndex) -> &mut T {
        let i = self.spec.linear(cell);
        &mut self.cells[i]
    }

    pub fn set(&mut self, cell: CellIndex, value: T) {
        *self.get_mut(cell) = value;
    }

    /// Iterates `(cell, value)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (CellIndex, &T)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .map(move |(i, v)| (self.spec.cell_from_linear(i), v))
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> BevGrid<U> {
        BevGrid {
            spec: self.spec,
            cells: self.cells.iter().map(f).collect(),
        }
    }

    /// Errors unless both grids have the same cell count and resolution.
    pub fn check_same_shape<U>(&self, other: &BevGrid<U>) -> Result<()> {
        if self.spec.same_shape(&other.spec) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{}x{} @ {} m vs {}x{} @ {} m",
                self.spec.cells,
                self.spec.cells,
                self.spec.resolution,
                other.spec.cells,
                other.spec.cells,
                other.spec.resolution
            )))
        }
    }
}

impl<T: Clone> BevGrid<T> {
    /// Centred `range_meters x range_meters` window.
    ///
    /// The window must be a whole number of cells that can be centred exactly,
    /// i.e. `cells_per_side - window_cells` is even.
    pub fn crop_centered(&self, range_meters: f64) -> Result<BevGrid<T>> {
        let res = self.spec.resolution;
        let ratio = range_meters / res;
        let window = ratio.round();
        if range_meters.is_nan() || range_meters <= 0.0 || (ratio - window).abs() > 1e-9 * window.max(1.0) {
            return Err(Error::InvalidGrid(format!(
                "range {range_meters} m is not a whole number of {res} m cells"
            )));
        }
        let window = window as usize;
        let n = self.spec.cells;
        if window > n {
            return Err(Error::InvalidGrid(format!(
                "range {range_meters} m exceeds grid side {} m",
                self.spec.side_meters
            )));
        }
        if !(n - window).is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!(
                "a {window}-cell window cannot be centred in a {n}-cell grid"
            )));
        }
        let start = (n - window) / 2;
        let spec = GridSpec::from_cells(window, res)?;
        let mut cells = Vec::with_capacity(window * window);
        for row in start..start + window {
            let base = row * n + start;
            cells.extend_from_slice(&self.cells[base..base + window]);
        }
        Ok(BevGrid { spec, cells })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_is_200_by_200() {
        let spec = GridSpec::default();
        assert_eq!(spec.cells_per_side(), 200);
        assert_eq!(spec.cell_count(), 40_000);
    }

    #[test]
    fn rejects_non_integer_ratio() {
        assert!(GridSpec::new(100.0, 0.3).is_err());
        assert!(GridSpec::new(0.0, 0.5).is_err());
        assert!(GridSpec::new(10.0, -1.0).is_err());
        assert!(GridSpec::new(0.2, 0.5).is_err());
    }

    #[test]
    fn cell_centers_follow_orientation() {
        let spec = GridSpec::default();
        assert_eq!(spec.cell_center(CellIndex::new(0, 0)), (49.75, 49.75));
        assert_eq!(spec.cell_center(CellIndex::new(99, 99)), (0.25, 0.25));
        assert_eq!(spec.cell_center(CellIndex::new(100, 100)), (-0.25, -0.25));
        assert_eq!(spec.cell_at(0.25, 0.25), Some(CellIndex::new(99, 99)));
        assert_eq!(spec.cell_at(49.9, -49.9), Some(CellIndex::new(0, 199)));
        assert_eq!(spec.cell_at(50.1, 0.0), None);
    }

    #[test]
    fn cell_at_inverts_cell_center() {
        let spec = GridSpec::new(20.0, 0.5).unwrap();
        for cell in spec.cells() {
            let (x, y) = spec.cell_center(cell);
            assert_eq!(spec.cell_at(x, y), Some(cell));
        }
    }

    #[test]
    fn crop_20m_is_central_40_block() {
        let spec = GridSpec::default();
        let grid = BevGrid::from_fn(spec, |c| (c.row, c.col));
        let crop = grid.crop_centered(20.0).unwrap();
        assert_eq!(crop.spec().cells_per_side(), 40);
        assert_eq!(*crop.get(CellIndex::new(0, 0)), (80, 80));
        assert_eq!(*crop.get(CellIndex::new(39, 39)), (119, 119));
        assert!(grid.crop_centered(20.25).is_err());
        assert!(grid.crop_centered(120.0).is_err());
        assert!(grid.crop_centered(0.5).is_err());
    }

    #[test]
    fn offsets_clip_at_edges() {
        let spec = GridSpec::from_cells(4, 1.0).unwrap();
        assert_eq!(spec.offset(CellIndex::new(0, 0), -1, 0), None);
        assert_eq!(spec.offset(CellIndex::new(0, 0), 1, 1), Some(CellIndex::new(1, 1)));
        assert_eq!(spec.offset(CellIndex::new(3, 3), 0, 1), None);
    }

    #[test]
    fn from_vec_checks_length() {
        let spec = GridSpec::from_cells(2, 1.0).unwrap();
        assert!(BevGrid::from_vec(spec, vec![0u8; 3]).is_err());
        assert!(BevGrid::from_vec(spec, vec![0u8; 4]).is_ok());
    }
}
