use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoarseMethod {
    /// Candidates are pixels above the box mean.
    PlainThreshold,
    /// Otsu, then closing, wall subtraction and opening.
    Deformable,
}

/// Tunables for the whole 2D/3D pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Maximum dividing-line length in pixels.
    pub alpha: f64,
    /// Minimum nodule area in pixels.
    pub s_m: usize,
    /// Box shrink factor: the correction loop continues while the next box is
    /// smaller than `1/epsilon` of the current one.
    pub epsilon: f64,
    /// Nodule-pixel proportion at which a box counts as tight.
    pub rho: f64,
    /// Maximum coefficient of variation of the 8 sector counts for a ring to
    /// count as evenly distributed.
    pub tau: f64,
    /// Per-side padding of boxes inherited between slices.
    pub margin: usize,
    pub se_radius: usize,
    pub coarse_method: CoarseMethod,
    /// Enables the ground-glass evenness stop in the correction loop.
    pub ggo_stop: bool,
    /// Minimum ring-vs-background contrast, in robust background sigmas,
    /// before a ring may be read as ground-glass.
    pub ggo_min_contrast: f64,
    pub max_iterations: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            alpha: 8.0,
            s_m: 14,
            epsilon: 1.2,
            rho: 0.5,
            tau: 0.5,
            margin: 4,
            se_radius: 2,
            coarse_method: CoarseMethod::PlainThreshold,
            ggo_stop: true,
            ggo_min_contrast: 3.0,
            max_iterations: 32,
        }
    }
}

impl PipelineConfig {
    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.alpha >= 2.0) {
            return bad("alpha must be >= 2");
        }
        if self.s_m < 1 {
            return bad("s_m must be >= 1");
        }
        if !(self.epsilon > 1.0) {
            return bad("epsilon must be > 1");
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad("rho must be in (0, 1)");
        }
        if !(self.tau >= 0.0) {
            return bad("tau must be >= 0");
        }
        if self.se_radius < 1 {
            return bad("se_radius must be >= 1");
        }
        if self.max_iterations < 1 || self.max_iterations > 32 {
            return bad("max_iterations must be in 1..=32");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_out_of_range() {
        for c in [
            PipelineConfig {
                epsilon: 1.0,
                ..PipelineConfig::default()
            },
            PipelineConfig {
                rho: 1.0,
                ..PipelineConfig::default()
            },
            PipelineConfig {
                alpha: 1.5,
                ..PipelineConfig::default()
            },
        ] {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{"alpha": 10, "coarse_method": "deformable"}"#).unwrap();
        assert_eq!(c.alpha, 10.0);
        assert_eq!(c.coarse_method, CoarseMethod::Deformable);
        assert_eq!(c.s_m, 14);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"alpah": 1}"#).is_err());
    }
}
