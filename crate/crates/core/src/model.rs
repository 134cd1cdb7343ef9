//! Proposals, frames, parameters and configuration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StcaError};
use crate::linalg::Matrix;

/// Axis-aligned box in center parameterization: `(cx, cy)` is the box center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub const fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn is_finite(&self) -> bool {
        self.cx.is_finite() && self.cy.is_finite() && self.w.is_finite() && self.h.is_finite()
    }

    /// Uniform scale by `s` about the origin followed by a shift.
    pub fn scale_translate(&self, s: f64, dx: f64, dy: f64) -> Self {
        Self::new(self.cx * s + dx, self.cy * s + dy, self.w * s, self.h * s)
    }
}

/// A candidate object region in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub bbox: BoundingBox,
    pub frame_id: i64,
    pub feature: Vec<f64>,
    pub objectness: f64,
    /// Ground-truth class id (0 is background), when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

/// The fixed-size proposal set of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameProposals {
    pub frame_id: i64,
    pub proposals: Vec<Proposal>,
}

impl FrameProposals {
    pub fn len(&self) -> usize {
        self.proposals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proposals.is_empty()
    }

    /// Labels of every proposal, or `None` if any is unlabeled.
    pub fn labels(&self) -> Option<Vec<usize>> {
        self.proposals.iter().map(|p| p.label).collect()
    }

    /// Copy of this frame re-stamped with another frame id.
    pub fn with_frame_id(&self, frame_id: i64) -> Self {
        let mut out = self.clone();
        out.frame_id = frame_id;
        for p in &mut out.proposals {
            p.frame_id = frame_id;
        }
        out
    }
}

/// Which logit terms enter the fused attention logit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionVariant {
    /// Content logits only.
    Semantic,
    /// Content plus spatial logits.
    Spatial,
    /// Content, spatial and temporal logits.
    Full,
}

impl AttentionVariant {
    pub fn uses_spatial(self) -> bool {
        matches!(self, Self::Spatial | Self::Full)
    }

    pub fn uses_temporal(self) -> bool {
        matches!(self, Self::Full)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Semantic => "semantic",
            Self::Spatial => "spatial",
            Self::Full => "full",
        }
    }
}

impl std::str::FromStr for AttentionVariant {
    type Err = StcaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "semantic" => Ok(Self::Semantic),
            "spatial" | "+spatial" => Ok(Self::Spatial),
            "full" => Ok(Self::Full),
            other => Err(StcaError::InvalidConfig(format!(
                "unknown attention variant `{other}` (expected semantic, +spatial or full)"
            ))),
        }
    }
}

/// Hyperparameters of the operator and of inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StcaConfig {
    /// Feature width.
    pub d_v: usize,
    /// Sinusoid width per geometric scalar.
    pub d_phi: usize,
    /// Proposals per frame.
    pub n_proposals: usize,
    /// Inference window, odd.
    pub window: usize,
    /// Bound on training frame offsets.
    pub tau: usize,
    /// Floor for the offset ratios inside the geometric log.
    pub eps_geom: f64,
    /// Floor for the spatial logit before its log.
    pub eps_spatial: f64,
    pub sinusoid_base: f64,
    pub variant: AttentionVariant,
    /// Temporal distance keeps its sign when true, otherwise `|τ|` is encoded.
    pub signed_tau: bool,
    /// The temporal logit reuses the content query projection when true.
    pub share_query: bool,
}

impl StcaConfig {
    /// Small defaults that keep tests and the CLI fast.
    pub fn desk() -> Self {
        Self {
            d_v: 16,
            d_phi: 8,
            n_proposals: 8,
            window: 5,
            tau: 9,
            eps_geom: 1e-3,
            eps_spatial: 1e-6,
            sinusoid_base: 1000.0,
            variant: AttentionVariant::Full,
            signed_tau: true,
            share_query: true,
        }
    }

    /// Full-scale detector settings.
    pub fn full_scale() -> Self {
        Self {
            d_v: 1024,
            d_phi: 16,
            n_proposals: 300,
            window: 31,
            ..Self::desk()
        }
    }

    /// Half window `K` with `T = 2K + 1`.
    pub fn half_window(&self) -> usize {
        self.window / 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(StcaError::InvalidConfig(msg));
        if self.d_v == 0 || !self.d_v.is_multiple_of(2) {
            return bad(format!("d_v must be positive and even, got {}", self.d_v));
        }
        if self.d_phi == 0 || !self.d_phi.is_multiple_of(2) {
            return bad(format!("d_phi must be positive and even, got {}", self.d_phi));
        }
        if self.n_proposals == 0 {
            return bad("n_proposals must be positive".into());
        }
        if self.window.is_multiple_of(2) {
            return Err(StcaError::EvenWindow(self.window));
        }
        if self.tau == 0 {
            return bad("tau must be positive".into());
        }
        for (name, v) in [
            ("eps_geom", self.eps_geom),
            ("eps_spatial", self.eps_spatial),
            ("sinusoid_base", self.sinusoid_base),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        Ok(())
    }
}

impl Default for StcaConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Learnable matrices of one aggregation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StcaParams {
    /// Query projection, `d_v × d_v`.
    pub w_q: Matrix,
    /// Key projection, `d_v × d_v`.
    pub w_k: Matrix,
    /// Spatial readout, `4·d_phi × 1`.
    pub w_s: Matrix,
    /// Temporal embedding projection, `d_v × d_v`.
    pub w_t: Matrix,
    /// Separate query projection for the temporal logit; only present when
    /// the config does not share the query.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_q_temporal: Option<Matrix>,
}

/// Standard deviation of the initial parameter distribution.
pub const INIT_STD: f64 = 0.01;

impl StcaParams {
    pub fn zeros(config: &StcaConfig) -> Self {
        let d = config.d_v;
        Self {
            w_q: Matrix::zeros(d, d),
            w_k: Matrix::zeros(d, d),
            w_s: Matrix::zeros(4 * config.d_phi, 1),
            w_t: Matrix::zeros(d, d),
            w_q_temporal: (!config.share_query).then(|| Matrix::zeros(d, d)),
        }
    }

    /// Every entry i.i.d. N(0, 0.01²) from a ChaCha stream seeded with `seed`.
    pub fn default_init(config: &StcaConfig, seed: u64) -> Self {
        Self::gaussian(config, seed, INIT_STD)
    }

    pub fn gaussian(config: &StcaConfig, seed: u64, std: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_v;
        let w_q = Matrix::gaussian(d, d, std, &mut rng);
        let w_k = Matrix::gaussian(d, d, std, &mut rng);
        let w_s = Matrix::gaussian(4 * config.d_phi, 1, std, &mut rng);
        let w_t = Matrix::gaussian(d, d, std, &mut rng);
        let w_q_temporal = (!config.share_query).then(|| Matrix::gaussian(d, d, std, &mut rng));
        Self {
            w_q,
            w_k,
            w_s,
            w_t,
            w_q_temporal,
        }
    }

    /// Named parameter blocks in a fixed order.
    pub fn blocks(&self) -> Vec<(&'static str, &Matrix)> {
        let mut out = vec![
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_s", &self.w_s),
            ("w_t", &self.w_t),
        ];
        if let Some(m) = &self.w_q_temporal {
            out.push(("w_q_temporal", m));
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        let mut out = vec![
            ("w_q", &mut self.w_q),
            ("w_k", &mut self.w_k),
            ("w_s", &mut self.w_s),
            ("w_t", &mut self.w_t),
        ];
        if let Some(m) = &mut self.w_q_temporal {
            out.push(("w_q_temporal", m));
        }
        out
    }

    /// The projection used for temporal-logit queries.
    pub fn temporal_query(&self) -> &Matrix {
        self.w_q_temporal.as_ref().unwrap_or(&self.w_q)
    }

    pub fn validate(&self, config: &StcaConfig) -> Result<()> {
        let d = config.d_v;
        let want = |name: &str, m: &Matrix, shape: (usize, usize)| -> Result<()> {
            if m.shape() != shape {
                return Err(StcaError::ShapeMismatch {
                    context: format!("parameter {name}"),
                    lhs: m.shape(),
                    rhs: shape,
                });
            }
            if !m.is_finite() {
                return Err(StcaError::NonFinite(format!("parameter {name}")));
            }
            Ok(())
        };
        want("w_q", &self.w_q, (d, d))?;
        want("w_k", &self.w_k, (d, d))?;
        want("w_s", &self.w_s, (4 * config.d_phi, 1))?;
        want("w_t", &self.w_t, (d, d))?;
        match (&self.w_q_temporal, config.share_query) {
            (None, true) => Ok(()),
            (Some(m), false) => want("w_q_temporal", m, (d, d)),
            (Some(_), true) => Err(StcaError::InvalidConfig(
                "separate temporal query present but share_query is set".into(),
            )),
            (None, false) => Err(StcaError::InvalidConfig(
                "share_query is off but no temporal query projection is present".into(),
            )),
        }
    }
}

/// Checks every proposal invariant of a frame against the config.
pub fn validate_frame(frame: &FrameProposals, config: &StcaConfig) -> Result<()> {
    if frame.proposals.len() != config.n_proposals {
        return Err(StcaError::CountMismatch {
            frame_id: frame.frame_id,
            expected: config.n_proposals,
            found: frame.proposals.len(),
        });
    }
    for (index, p) in frame.proposals.iter().enumerate() {
        if p.frame_id != frame.frame_id {
            return Err(StcaError::FrameIdMismatch {
                index,
                expected: frame.frame_id,
                found: p.frame_id,
            });
        }
        if p.feature.len() != config.d_v {
            return Err(StcaError::DimensionMismatch {
                context: format!("feature of proposal {index} in frame {}", frame.frame_id),
                expected: config.d_v,
                found: p.feature.len(),
            });
        }
        if !p.bbox.is_finite() || p.feature.iter().any(|v| !v.is_finite()) {
            return Err(StcaError::NonFinite(format!(
                "proposal {index} of frame {}",
                frame.frame_id
            )));
        }
        if !(p.bbox.w > 0.0 && p.bbox.h > 0.0) {
            return Err(StcaError::NonPositiveExtent {
                frame_id: frame.frame_id,
                index,
                w: p.bbox.w,
                h: p.bbox.h,
            });
        }
        if !(0.0..=1.0).contains(&p.objectness) {
            return Err(StcaError::ObjectnessOutOfRange {
                frame_id: frame.frame_id,
                index,
                value: p.objectness,
            });
        }
    }
    Ok(())
}

/// Structure-of-arrays view of a proposal list, the operator's input format.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalBlock {
    pub features: Matrix,
    pub boxes: Vec<BoundingBox>,
    pub frames: Vec<i64>,
}

impl ProposalBlock {
    pub fn new(features: Matrix, boxes: Vec<BoundingBox>, frames: Vec<i64>) -> Result<Self> {
        let n = features.rows();
        for (what, len) in [("boxes", boxes.len()), ("frame ids", frames.len())] {
            if len != n {
                return Err(StcaError::DimensionMismatch {
                    context: format!("proposal block {what}"),
                    expected: n,
                    found: len,
                });
            }
        }
        Ok(Self {
            features,
            boxes,
            frames,
        })
    }

    pub fn from_proposals(proposals: &[Proposal]) -> Result<Self> {
        let rows: Vec<&[f64]> = proposals.iter().map(|p| p.feature.as_slice()).collect();
        let features = Matrix::from_rows(&rows)?;
        Ok(Self {
            features,
            boxes: proposals.iter().map(|p| p.bbox).collect(),
            frames: proposals.iter().map(|p| p.frame_id).collect(),
        })
    }

    pub fn from_frame(frame: &FrameProposals) -> Result<Self> {
        Self::from_proposals(&frame.proposals)
    }

    /// Concatenates blocks in order.
    pub fn concat(parts: &[&ProposalBlock]) -> Result<Self> {
        let feats: Vec<&Matrix> = parts.iter().map(|b| &b.features).collect();
        Ok(Self {
            features: Matrix::vstack(&feats)?,
            boxes: parts.iter().flat_map(|b| b.boxes.iter().copied()).collect(),
            frames: parts.iter().flat_map(|b| b.frames.iter().copied()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.features.cols()
    }

    /// Same geometry and frame ids with new features.
    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        Self::new(features, self.boxes.clone(), self.frames.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(n: usize, d: usize) -> FrameProposals {
        FrameProposals {
            frame_id: 4,
            proposals: (0..n)
                .map(|i| Proposal {
                    bbox: BoundingBox::new(10.0 * i as f64, 5.0, 4.0, 3.0),
                    frame_id: 4,
                    feature: vec![0.5; d],
                    objectness: 0.9,
                    label: None,
                })
                .collect(),
        }
    }

    fn cfg(n: usize, d: usize) -> StcaConfig {
        StcaConfig {
            d_v: d,
            n_proposals: n,
            ..StcaConfig::desk()
        }
    }

    #[test]
    fn valid_frame_passes() {
        assert_eq!(validate_frame(&frame(3, 8), &cfg(3, 8)), Ok(()));
    }

    #[test]
    fn short_feature_is_dimension_mismatch() {
        let mut f = frame(3, 8);
        f.proposals[1].feature.pop();
        assert!(matches!(
            validate_frame(&f, &cfg(3, 8)),
            Err(StcaError::DimensionMismatch {
                expected: 8,
                found: 7,
                ..
            })
        ));
    }

    #[test]
    fn zero_width_is_non_positive_extent() {
        let mut f = frame(3, 8);
        f.proposals[2].bbox.w = 0.0;
        assert!(matches!(
            validate_frame(&f, &cfg(3, 8)),
            Err(StcaError::NonPositiveExtent { index: 2, .. })
        ));
    }

    /// Each violation on its own is rejected, and nothing else is.
    #[test]
    fn each_single_violation_is_rejected() {
        let c = cfg(3, 8);
        let mutations: Vec<(&str, Box<dyn Fn(&mut FrameProposals)>)> = vec![
            (
                "count",
                Box::new(|f| {
                    f.proposals.pop();
                }),
            ),
            ("feature length", Box::new(|f| f.proposals[0].feature.push(1.0))),
            ("w", Box::new(|f| f.proposals[0].bbox.w = -1.0)),
            ("h", Box::new(|f| f.proposals[1].bbox.h = 0.0)),
            ("finite box", Box::new(|f| f.proposals[0].bbox.cx = f64::NAN)),
            (
                "finite feature",
                Box::new(|f| f.proposals[2].feature[3] = f64::INFINITY),
            ),
            ("frame id", Box::new(|f| f.proposals[2].frame_id = 5)),
            ("objectness", Box::new(|f| f.proposals[0].objectness = 1.5)),
        ];
        for (name, m) in &mutations {
            let mut f = frame(3, 8);
            m(&mut f);
            assert!(validate_frame(&f, &c).is_err(), "{name} not rejected");
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let c = cfg(3, 4);
        assert_eq!(StcaParams::default_init(&c, 42), StcaParams::default_init(&c, 42));
        assert_ne!(StcaParams::default_init(&c, 42), StcaParams::default_init(&c, 43));
    }

    #[test]
    fn init_moments_match_target_distribution() {
        // d_v = 578 gives 3·578² + 4·d_phi = 1_002_284 entries
        let c = StcaConfig {
            d_v: 578,
            ..StcaConfig::desk()
        };
        let p = StcaParams::default_init(&c, 7);
        let all: Vec<f64> = p.blocks().iter().flat_map(|(_, m)| m.data().to_vec()).collect();
        assert!(all.len() >= 1_000_000);
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-3, "mean {mean}");
        assert!((var.sqrt() - 0.01).abs() < 0.05 * 0.01, "std {}", var.sqrt());
    }

    #[test]
    fn unshared_query_adds_a_block() {
        let c = StcaConfig {
            share_query: false,
            ..cfg(3, 4)
        };
        let p = StcaParams::default_init(&c, 1);
        assert_eq!(p.blocks().len(), 5);
        assert!(p.validate(&c).is_ok());
        assert!(p.validate(&cfg(3, 4)).is_err());
    }

    #[test]
    fn config_rejects_even_window_and_odd_dims() {
        let mut c = StcaConfig::desk();
        c.window = 4;
        assert_eq!(c.validate(), Err(StcaError::EvenWindow(4)));
        let mut c = StcaConfig::desk();
        c.d_phi = 3;
        assert!(c.validate().is_err());
        assert!(StcaConfig::full_scale().validate().is_ok());
        assert_eq!(StcaConfig::full_scale().window, 31);
    }
}
