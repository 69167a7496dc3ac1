use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Logit written to cells neither pass sampled (sigmoid ~ 4.5e-5).
pub const BACKGROUND_LOGIT: f64 = -10.0;

/// How the coarse anchor cells are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoarseSelection {
    /// Regular lattice with the largest stride that still yields at least
    /// `n_coarse` cells, centred in the grid.
    Stride,
    /// `n_coarse` distinct cells drawn with a seeded generator.
    Random { seed: u64 },
}

/// Parameters of the coarse-to-fine sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingConfig {
    /// Requested number of coarse anchors.
    pub n_coarse: usize,
    /// Anchors kept after the coarse pass. Zero disables the fine pass.
    pub k: usize,
    /// `(d_row, d_col)` neighbourhood sampled around each kept anchor.
    pub fine_pattern: Vec<(i64, i64)>,
    pub points_per_pillar: usize,
    pub z_min: f64,
    pub z_max: f64,
    pub coarse_selection: CoarseSelection,
    pub background_logit: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_coarse: 2500,
            k: 500,
            fine_pattern: square_pattern(1),
            points_per_pillar: 8,
            z_min: -1.0,
            z_max: 3.0,
            coarse_selection: CoarseSelection::Stride,
            background_logit: BACKGROUND_LOGIT,
        }
    }
}

/// `{-radius..=radius}^2` offsets, row-major.
pub fn square_pattern(radius: i64) -> Vec<(i64, i64)> {
    (-radius..=radius)
        .flat_map(|dr| (-radius..=radius).map(move |dc| (dr, dc)))
        .collect()
}

impl SamplingConfig {
    /// Single dense pass: every cell is a coarse anchor and nothing is refined.
    pub fn dense(spec: &GridSpec) -> Self {
        Self {
            n_coarse: spec.cell_count(),
            k: 0,
            ..Self::default()
        }
    }

    pub(crate) fn validate_pillars(&self) -> Result<()> {
        if self.points_per_pillar < 2 {
            return Err(Error::InvalidConfig(format!(
                "points_per_pillar must be at least 2, got {}",
                self.points_per_pillar
            )));
        }
        if !(self.z_min.is_finite() && self.z_max.is_finite() && self.z_min < self.z_max) {
            return Err(Error::InvalidConfig(format!(
                "pillar height range [{}, {}] must be finite and increasing",
                self.z_min, self.z_max
            )));
        }
        Ok(())
    }

    pub fn validate(&self, spec: &GridSpec) -> Result<()> {
        self.validate_pillars()?;
        if self.n_coarse == 0 || self.n_coarse > spec.cell_count() {
            return Err(Error::InvalidConfig(format!(
                "n_coarse {} must be in 1..={}",
                self.n_coarse,
                spec.cell_count()
            )));
        }
        if self.k > self.n_coarse {
            return Err(Error::InvalidConfig(format!(
                "k = {} exceeds n_coarse = {}",
                self.k, self.n_coarse
            )));
        }
        if self.fine_pattern.is_empty() {
            return Err(Error::InvalidConfig("fine_pattern must not be empty".into()));
        }
        if !self.background_logit.is_finite() {
            return Err(Error::InvalidConfig("background logit must be finite".into()));
        }
        Ok(())
    }
}
