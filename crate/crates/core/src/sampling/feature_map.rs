use crate::error::{Error, Result};

/// Dense `C x H x W` feature tensor, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidConfig(format!(
                "feature map dimensions {channels}x{height}x{width} must be positive"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {channels}x{height}x{width} feature map",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("feature map values must be finite".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Builds a map from `f(channel, row, col)`.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for r in 0..height {
                for col in 0..width {
                    data.push(f(c, r, col));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn at(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.height + row) * self.width + col]
    }

    /// Bilinear sample at continuous `(u, v)` (column, row), writing one value
    /// per channel into `out`. Coordinates are clamped to the map first.
    pub fn sample_into(&self, u: f64, v: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.channels);
        let u = clamp_coord(u, self.width);
        let v = clamp_coord(v, self.height);
        let x0 = (u.floor() as usize).min(self.width - 1);
        let y0 = (v.floor() as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = u - x0 as f64;
        let fy = v - y0 as f64;
        for (c, o) in out.iter_mut().enumerate() {
            let top = self.at(c, y0, x0) * (1.0 - fx) + self.at(c, y0, x1) * fx;
            let bottom = self.at(c, y1, x0) * (1.0 - fx) + self.at(c, y1, x1) * fx;
            *o = top * (1.0 - fy) + bottom * fy;
        }
    }
}

fn clamp_coord(value: f64, extent: usize) -> f64 {
    if value.is_nan() {
        0.0
    } else {
        value.clamp(0.0, (extent - 1) as f64)
    }
}

/// Bilinear sample of every channel at `(u, v)`.
pub fn bilinear_sample(fm: &FeatureMap, u: f64, v: f64) -> Vec<f64> {
    let mut out = vec![0.0; fm.channels];
    fm.sample_into(u, v, &mut out);
    out
}
