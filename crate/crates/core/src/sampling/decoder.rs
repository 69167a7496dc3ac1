use serde::{Deserialize, Serialize};

use super::pillars::PillarFeatures;
use crate::error::{Error, Result};

/// Maps the feature rows of one pillar to a single BEV logit.
///
/// Implementations must be deterministic.
pub trait Decoder: Sync {
    fn decode(&self, features: PillarFeatures<'_>) -> f64;

    /// Rejects feature maps with a channel count the decoder cannot handle.
    fn check_channels(&self, _channels: usize) -> Result<()> {
        Ok(())
    }
}

/// Mean-pools the pillar rows, then applies `weights . mean + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearDecoder {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearDecoder {
    pub fn new(weights: Vec<f64>, bias: f64) -> Self {
        Self { weights, bias }
    }

    /// Mean over rows, accumulated in ascending row order.
    pub fn mean_pool(features: PillarFeatures<'_>) -> Vec<f64> {
        let mut mean = vec![0.0; features.channels()];
        for j in 0..features.points() {
            for (m, v) in mean.iter_mut().zip(features.row(j)) {
                *m += v;
            }
        }
        let n = features.points() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }
}

impl Decoder for LinearDecoder {
    fn decode(&self, features: PillarFeatures<'_>) -> f64 {
        let mean = Self::mean_pool(features);
        self.weights
            .iter()
            .zip(&mean)
            .fold(self.bias, |acc, (w, m)| acc + w * m)
    }

    fn check_channels(&self, channels: usize) -> Result<()> {
        if self.weights.len() != channels {
            return Err(Error::ShapeMismatch(format!(
                "decoder has {} weights for {channels} feature channels",
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite()) || !self.bias.is_finite() {
            return Err(Error::InvalidConfig("decoder parameters must be finite".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_pool_then_affine() {
        let rows = [1.0, 10.0, 3.0, 20.0];
        let f = PillarFeatures::new(&rows, 2, 2).unwrap();
        let d = LinearDecoder::new(vec![2.0, -0.5], 1.0);
        // mean = (2, 15): 1 + 4 - 7.5
        assert_eq!(d.decode(f), -2.5);
        assert_eq!(d.decode(f), d.decode(f));
    }

    #[test]
    fn channel_check() {
        let d = LinearDecoder::new(vec![1.0; 3], 0.0);
        assert!(d.check_channels(3).is_ok());
        assert!(d.check_channels(4).is_err());
        assert!(LinearDecoder::new(vec![f64::NAN], 0.0).check_channels(1).is_err());
    }

    #[test]
    fn json_schema() {
        let d: LinearDecoder = serde_json::from_str(r#"{"weights":[0.5,-1],"bias":2.0}"#).unwrap();
        assert_eq!(d, LinearDecoder::new(vec![0.5, -1.0], 2.0));
    }
}
