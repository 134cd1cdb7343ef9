//! The spatio-temporal context aggregation operator.
//!
//! For a target `i` and candidate `j` the fused logit is
//!
//! ```text
//! e_ij = e^c_ij + ln(max(e^s_ij, eps_spatial)) + e^t_ij
//! e^c_ij = (f_i W_q) · (f_j W_k) / √d_v
//! e^s_ij = φ(r(p_i, p_j)) · W_s
//! e^t_ij = (f_i W_q) · (φ(t_j − t_i) W_t) / √d_v
//! ```
//!
//! Rows are normalized with a softmax and the enhanced target feature is the
//! residual sum `f_i + Σ_j w_ij f_j` over raw candidate features. Variants
//! drop the spatial and/or temporal terms from the sum entirely.

use std::collections::BTreeMap;

use crate::error::{check_shape, Result, StcaError};
use crate::exec;
use crate::linalg::{dot, Matrix};
use crate::model::{AttentionVariant, BoundingBox, ProposalBlock, StcaConfig, StcaParams};
use crate::position::{frequencies, geometric_relation, sinusoid_embed, spatial_embed_into};

/// Logit matrices, all `targets × candidates`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLogits {
    pub e_c: Matrix,
    /// Pre-log spatial logits; absent when the variant drops the term.
    pub e_s: Option<Matrix>,
    pub e_t: Option<Matrix>,
    pub e: Matrix,
}

/// Row-stochastic attention weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights(pub Matrix);

impl AttentionWeights {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

/// Pairwise frame distances, deduplicated so each distinct `τ` is embedded once.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalTable {
    /// Distinct distances in ascending order.
    pub taus: Vec<i64>,
    /// Row-major `targets × candidates` index into `taus`.
    pub index: Vec<u32>,
    /// `φ(τ)` per distinct distance, `taus.len() × d_v`.
    pub embed: Matrix,
}

impl TemporalTable {
    pub fn build(target_frames: &[i64], candidate_frames: &[i64], config: &StcaConfig) -> TemporalTable {
        let distance = |ti: i64, tj: i64| {
            let tau = tj - ti;
            if config.signed_tau {
                tau
            } else {
                tau.abs()
            }
        };
        let mut slots: BTreeMap<i64, u32> = BTreeMap::new();
        for &ti in target_frames {
            for &tj in candidate_frames {
                slots.entry(distance(ti, tj)).or_insert(0);
            }
        }
        let taus: Vec<i64> = slots.keys().copied().collect();
        for (k, slot) in slots.values_mut().enumerate() {
            *slot = k as u32;
        }
        let index = target_frames
            .iter()
            .flat_map(|&ti| candidate_frames.iter().map(move |&tj| (ti, tj)))
            .map(|(ti, tj)| slots[&distance(ti, tj)])
            .collect();
        let rows: Vec<Vec<f64>> = taus
            .iter()
            .map(|&t| sinusoid_embed(t as f64, config.d_v, config.sinusoid_base))
            .collect();
        let embed = if rows.is_empty() {
            Matrix::zeros(0, config.d_v)
        } else {
            Matrix::from_rows(&rows).expect("uniform embedding width")
        };
        TemporalTable { taus, index, embed }
    }
}

fn check_width(context: &str, m: &Matrix, d_v: usize) -> Result<()> {
    if m.cols() != d_v {
        return Err(StcaError::DimensionMismatch {
            context: context.to_string(),
            expected: d_v,
            found: m.cols(),
        });
    }
    Ok(())
}

fn scaled_products(q: &Matrix, k: &Matrix, d_v: usize) -> Result<Matrix> {
    let mut e = q.matmul_t(k)?;
    e.scale(1.0 / (d_v as f64).sqrt());
    Ok(e)
}

/// `e^c = (X W_q)(G W_k)ᵀ / √d_v`.
pub fn content_logits(targets: &Matrix, candidates: &Matrix, w_q: &Matrix, w_k: &Matrix, d_v: usize) -> Result<Matrix> {
    check_width("content_logits targets", targets, d_v)?;
    check_width("content_logits candidates", candidates, d_v)?;
    let q = targets.matmul(w_q)?;
    let k = candidates.matmul(w_k)?;
    scaled_products(&q, &k, d_v)
}

/// Pre-log spatial logits `φ(r(p_i, p_j)) · W_s` for every pair.
///
/// The size-ratio entries of `r` are differences of per-box logs, so their
/// sinusoids are expanded with the angle-difference identity and only the
/// offset entries need per-pair transcendentals.
pub fn spatial_logits(
    target_boxes: &[BoundingBox],
    candidate_boxes: &[BoundingBox],
    w_s: &Matrix,
    config: &StcaConfig,
) -> Result<Matrix> {
    let d_phi = config.d_phi;
    check_shape("spatial_logits w_s", w_s.shape(), (4 * d_phi, 1))?;
    let freqs = frequencies(d_phi, config.sinusoid_base);
    let ws = w_s.data();
    let eps = config.eps_geom;
    // Σ_z of the cosine weights: the ratio contribution when both sizes are equal
    let unit: [f64; 2] = [2, 3].map(|e| (0..d_phi / 2).map(|z| ws[e * d_phi + 2 * z + 1]).sum());

    let size_trig = |b: &BoundingBox| -> Vec<(f64, f64)> {
        [b.w.ln(), b.h.ln()]
            .iter()
            .flat_map(|l| freqs.iter().map(move |f| (l * f).sin_cos()))
            .collect()
    };
    let cand_trig: Vec<Vec<(f64, f64)>> = candidate_boxes.iter().map(size_trig).collect();

    let m = candidate_boxes.len();
    let mut out = Matrix::zeros(target_boxes.len(), m);
    exec::for_each_row(out.data_mut(), m, |i, row| {
        let bi = &target_boxes[i];
        // ws_sin·sin(a(Li − Lj)) + ws_cos·cos(a(Li − Lj)) = cos(aLj)·A + sin(aLj)·B
        let coeffs: Vec<(f64, f64)> = size_trig(bi)
            .into_iter()
            .enumerate()
            .map(|(k, (si, ci))| {
                let base = (2 + k / freqs.len()) * d_phi + 2 * (k % freqs.len());
                let (w_sin, w_cos) = (ws[base], ws[base + 1]);
                (w_sin * si + w_cos * ci, w_cos * si - w_sin * ci)
            })
            .collect();
        let (lo, hi) = coeffs.split_at(freqs.len());
        for ((o, bj), trig) in row.iter_mut().zip(candidate_boxes).zip(&cand_trig) {
            let dx = ((bi.cx - bj.cx).abs() / bj.w).max(eps).ln();
            let dy = ((bi.cy - bj.cy).abs() / bj.h).max(eps).ln();
            let mut acc = 0.0;
            for (e, r) in [dx, dy].into_iter().enumerate() {
                for (z, f) in freqs.iter().enumerate() {
                    let (s, c) = (r * f).sin_cos();
                    acc += ws[e * d_phi + 2 * z] * s + ws[e * d_phi + 2 * z + 1] * c;
                }
            }
            let (tw, th) = trig.split_at(freqs.len());
            for (e, (same, part, t)) in [(bi.w == bj.w, lo, tw), (bi.h == bj.h, hi, th)].into_iter().enumerate() {
                if same {
                    acc += unit[e];
                } else {
                    acc += part
                        .iter()
                        .zip(t)
                        .map(|((a, b), (sj, cj))| cj * a + sj * b)
                        .sum::<f64>();
                }
            }
            *o = acc;
        }
    });
    Ok(out)
}

fn temporal_from_projections(qt: &Matrix, table: &TemporalTable, proj: &Matrix, m: usize, d_v: usize) -> Matrix {
    let scale = 1.0 / (d_v as f64).sqrt();
    // qt · projᵀ is at most (targets × distinct τ); gather from it.
    let per_tau = qt.matmul_t(proj).expect("projection widths agree");
    let mut out = Matrix::zeros(qt.rows(), m);
    exec::for_each_row(out.data_mut(), m, |i, row| {
        let idx = &table.index[i * m..(i + 1) * m];
        let src = per_tau.row(i);
        for (o, &u) in row.iter_mut().zip(idx) {
            *o = src[u as usize] * scale;
        }
    });
    out
}

/// `e^t_ij = (f_i W_q)(φ(τ_ij) W_t)ᵀ / √d_v` with `τ_ij = t_j − t_i`.
///
/// `w_q` is whichever projection the temporal pathway uses (the shared
/// content query unless the config unshares it).
pub fn temporal_logits(
    targets: &Matrix,
    target_frames: &[i64],
    candidate_frames: &[i64],
    w_q: &Matrix,
    w_t: &Matrix,
    config: &StcaConfig,
) -> Result<Matrix> {
    check_width("temporal_logits targets", targets, config.d_v)?;
    if target_frames.len() != targets.rows() {
        return Err(StcaError::DimensionMismatch {
            context: "temporal_logits target frames".into(),
            expected: targets.rows(),
            found: target_frames.len(),
        });
    }
    let table = TemporalTable::build(target_frames, candidate_frames, config);
    let qt = targets.matmul(w_q)?;
    let proj = table.embed.matmul(w_t)?;
    Ok(temporal_from_projections(
        &qt,
        &table,
        &proj,
        candidate_frames.len(),
        config.d_v,
    ))
}

/// `e = e^c + ln(max(e^s, eps_spatial)) + e^t`, omitting absent terms.
pub fn fuse_logits(e_c: &Matrix, e_s: Option<&Matrix>, e_t: Option<&Matrix>, eps_spatial: f64) -> Result<Matrix> {
    let mut e = e_c.clone();
    if let Some(es) = e_s {
        check_shape("fuse_logits e_s", e.shape(), es.shape())?;
        for (v, &s) in e.data_mut().iter_mut().zip(es.data()) {
            *v += s.max(eps_spatial).ln();
        }
    }
    if let Some(et) = e_t {
        check_shape("fuse_logits e_t", e.shape(), et.shape())?;
        for (v, &t) in e.data_mut().iter_mut().zip(et.data()) {
            *v += t;
        }
    }
    Ok(e)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(e: &Matrix) -> AttentionWeights {
    let mut w = e.clone();
    let m = w.cols();
    exec::for_each_row(w.data_mut(), m, |_, row| {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    });
    AttentionWeights(w)
}

/// Residual aggregation `X + W G` over raw candidate features.
pub fn aggregate(targets: &Matrix, weights: &AttentionWeights, candidates: &Matrix) -> Result<Matrix> {
    let w = weights.matrix();
    if w.rows() != targets.rows() || w.cols() != candidates.rows() || targets.cols() != candidates.cols() {
        return Err(StcaError::ShapeMismatch {
            context: format!(
                "aggregate (targets {:?}, candidates {:?})",
                targets.shape(),
                candidates.shape()
            ),
            lhs: w.shape(),
            rhs: (targets.rows(), candidates.rows()),
        });
    }
    let mut out = w.matmul(candidates)?;
    out.add_assign(targets)?;
    Ok(out)
}

/// Everything [`stca_backward`] needs from a forward call.
#[derive(Debug, Clone)]
pub struct StcaForwardCache {
    pub config: StcaConfig,
    pub params: StcaParams,
    pub targets: ProposalBlock,
    pub candidates: ProposalBlock,
    /// `X W_q`
    pub queries: Matrix,
    /// `G W_k`
    pub keys: Matrix,
    /// `X W_qt` when the temporal query is unshared.
    pub temporal_queries: Option<Matrix>,
    pub temporal: Option<TemporalTable>,
    /// `φ(τ) W_t` per distinct distance.
    pub temporal_proj: Option<Matrix>,
    pub logits: AttentionLogits,
    pub weights: AttentionWeights,
}

impl StcaForwardCache {
    /// Attention weights of the forward call, `targets × candidates`.
    pub fn attention(&self) -> &Matrix {
        self.weights.matrix()
    }
}

fn check_inputs(
    targets: &ProposalBlock,
    candidates: &ProposalBlock,
    params: &StcaParams,
    config: &StcaConfig,
) -> Result<()> {
    if candidates.is_empty() {
        return Err(StcaError::EmptyCandidateSet);
    }
    check_width("stca targets", &targets.features, config.d_v)?;
    check_width("stca candidates", &candidates.features, config.d_v)?;
    params.validate(config)
}

/// Applies the operator to every target against the candidate set.
///
/// Returns the enhanced target features and the cache for [`stca_backward`].
pub fn stca_forward(
    targets: &ProposalBlock,
    candidates: &ProposalBlock,
    params: &StcaParams,
    config: &StcaConfig,
) -> Result<(Matrix, StcaForwardCache)> {
    check_inputs(targets, candidates, params, config)?;
    let d = config.d_v;
    let variant = config.variant;

    let queries = targets.features.matmul(&params.w_q)?;
    let keys = candidates.features.matmul(&params.w_k)?;
    let e_c = scaled_products(&queries, &keys, d)?;

    let e_s = if variant.uses_spatial() {
        Some(spatial_logits(&targets.boxes, &candidates.boxes, &params.w_s, config)?)
    } else {
        None
    };

    let (temporal_queries, temporal, temporal_proj, e_t) = if variant.uses_temporal() {
        let table = TemporalTable::build(&targets.frames, &candidates.frames, config);
        let tq = match &params.w_q_temporal {
            Some(w) => Some(targets.features.matmul(w)?),
            None => None,
        };
        let proj = table.embed.matmul(&params.w_t)?;
        let e_t = temporal_from_projections(tq.as_ref().unwrap_or(&queries), &table, &proj, candidates.len(), d);
        (tq, Some(table), Some(proj), Some(e_t))
    } else {
        (None, None, None, None)
    };

    let e = fuse_logits(&e_c, e_s.as_ref(), e_t.as_ref(), config.eps_spatial)?;
    let weights = softmax_rows(&e);
    let out = aggregate(&targets.features, &weights, &candidates.features)?;

    let cache = StcaForwardCache {
        config: config.clone(),
        params: params.clone(),
        targets: targets.clone(),
        candidates: candidates.clone(),
        queries,
        keys,
        temporal_queries,
        temporal,
        temporal_proj,
        logits: AttentionLogits { e_c, e_s, e_t, e },
        weights,
    };
    Ok((out, cache))
}

/// Forward pass without keeping the cache.
pub fn stca_enhance(
    targets: &ProposalBlock,
    candidates: &ProposalBlock,
    params: &StcaParams,
    config: &StcaConfig,
) -> Result<Matrix> {
    stca_forward(targets, candidates, params, config).map(|(out, _)| out)
}

/// Gradients of a scalar loss through one operator application.
#[derive(Debug, Clone, PartialEq)]
pub struct StcaGradients {
    /// Sum of the content and (when shared) temporal query pathways.
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_s: Matrix,
    pub w_t: Matrix,
    pub w_q_temporal: Option<Matrix>,
    pub targets: Matrix,
    pub candidates: Matrix,
}

impl StcaGradients {
    /// Parameter gradients shaped like [`StcaParams`].
    pub fn params(&self) -> StcaParams {
        StcaParams {
            w_q: self.w_q.clone(),
            w_k: self.w_k.clone(),
            w_s: self.w_s.clone(),
            w_t: self.w_t.clone(),
            w_q_temporal: self.w_q_temporal.clone(),
        }
    }
}

/// Exact gradients of the forward map given `upstream = ∂L/∂out`.
///
/// The spatial floor is treated as a sub-gradient: pairs with
/// `e^s <= eps_spatial` pass no gradient to `W_s`.
pub fn stca_backward(cache: &StcaForwardCache, upstream: &Matrix) -> Result<StcaGradients> {
    let n = cache.targets.len();
    let m = cache.candidates.len();
    let d = cache.config.d_v;
    if upstream.shape() != (n, d) {
        return Err(StcaError::CacheMismatch(format!(
            "upstream gradient is {:?}, forward produced {:?}",
            upstream.shape(),
            (n, d)
        )));
    }
    let params = &cache.params;
    let x = &cache.targets.features;
    let g = &cache.candidates.features;
    let w = cache.weights.matrix();
    let inv_sqrt = 1.0 / (d as f64).sqrt();

    // residual and aggregation
    let mut d_x = upstream.clone();
    let d_w = upstream.matmul_t(g)?;
    let mut d_g = w.t_matmul(upstream)?;

    // softmax
    let mut d_e = Matrix::zeros(n, m);
    exec::for_each_row(d_e.data_mut(), m, |i, row| {
        let wi = w.row(i);
        let gi = d_w.row(i);
        let inner = dot(wi, gi);
        for ((o, &wij), &gij) in row.iter_mut().zip(wi).zip(gi) {
            *o = wij * (gij - inner);
        }
    });

    // content pathway
    let mut d_q = d_e.matmul(&cache.keys)?;
    d_q.scale(inv_sqrt);
    let mut d_k = d_e.t_matmul(&cache.queries)?;
    d_k.scale(inv_sqrt);
    let mut grad_w_q = x.t_matmul(&d_q)?;
    let grad_w_k = g.t_matmul(&d_k)?;
    d_x.add_assign(&d_q.matmul_t(&params.w_q)?)?;
    d_g.add_assign(&d_k.matmul_t(&params.w_k)?)?;

    // temporal pathway
    let mut grad_w_t = Matrix::zeros(d, d);
    let mut grad_w_qt = params.w_q_temporal.as_ref().map(|_| Matrix::zeros(d, d));
    if let (Some(table), Some(proj)) = (&cache.temporal, &cache.temporal_proj) {
        let tq = cache.temporal_queries.as_ref().unwrap_or(&cache.queries);
        let u = table.taus.len();
        // ∂L/∂(X W_qt · projᵀ), gathered per distinct τ
        let mut d_per_tau = Matrix::zeros(n, u);
        for i in 0..n {
            let idx = &table.index[i * m..(i + 1) * m];
            let de = d_e.row(i);
            let dst = d_per_tau.row_mut(i);
            for (&k, &v) in idx.iter().zip(de) {
                dst[k as usize] += v * inv_sqrt;
            }
        }
        let d_tq = d_per_tau.matmul(proj)?;
        let d_proj = d_per_tau.t_matmul(tq)?;
        grad_w_t = table.embed.t_matmul(&d_proj)?;
        let grad_tq = x.t_matmul(&d_tq)?;
        match (&mut grad_w_qt, &params.w_q_temporal) {
            (Some(gqt), Some(wqt)) => {
                *gqt = grad_tq;
                d_x.add_assign(&d_tq.matmul_t(wqt)?)?;
            }
            _ => {
                grad_w_q.add_assign(&grad_tq)?;
                d_x.add_assign(&d_tq.matmul_t(&params.w_q)?)?;
            }
        }
    }

    // spatial pathway
    let width = 4 * cache.config.d_phi;
    let mut grad_w_s = Matrix::zeros(width, 1);
    if let Some(e_s) = &cache.logits.e_s {
        let eps = cache.config.eps_spatial;
        let eps_geom = cache.config.eps_geom;
        let freqs = frequencies(cache.config.d_phi, cache.config.sinusoid_base);
        let tb = &cache.targets.boxes;
        let cb = &cache.candidates.boxes;
        let partials = exec::map_indices(n, |i| {
            let mut acc = vec![0.0; width];
            let mut phi = vec![0.0; width];
            for j in 0..m {
                let s = e_s.get(i, j);
                if s <= eps {
                    continue;
                }
                let coef = d_e.get(i, j) / s;
                let rel = geometric_relation(&tb[i], &cb[j], eps_geom);
                spatial_embed_into(&rel, &freqs, &mut phi);
                for (a, &p) in acc.iter_mut().zip(&phi) {
                    *a += coef * p;
                }
            }
            acc
        });
        let dst = grad_w_s.data_mut();
        for part in partials {
            for (a, p) in dst.iter_mut().zip(part) {
                *a += p;
            }
        }
    }

    Ok(StcaGradients {
        w_q: grad_w_q,
        w_k: grad_w_k,
        w_s: grad_w_s,
        w_t: grad_w_t,
        w_q_temporal: grad_w_qt,
        targets: d_x,
        candidates: d_g,
    })
}

/// Fraction of attention mass each target places on candidates of each frame.
pub fn attention_by_frame(cache: &StcaForwardCache) -> Vec<BTreeMap<i64, f64>> {
    let w = cache.weights.matrix();
    (0..w.rows())
        .map(|i| {
            let mut acc = BTreeMap::new();
            for (j, &f) in cache.candidates.frames.iter().enumerate() {
                *acc.entry(f).or_insert(0.0) += w.get(i, j);
            }
            acc
        })
        .collect()
}

/// True if any spatial logit sits within `margin` of the floor.
pub fn near_spatial_kink(cache: &StcaForwardCache, margin: f64) -> bool {
    let eps = cache.config.eps_spatial;
    cache
        .logits
        .e_s
        .as_ref()
        .is_some_and(|e_s| e_s.data().iter().any(|&s| (s - eps).abs() < margin))
}

impl AttentionVariant {
    /// Label used in ablation tables.
    pub fn table_label(self) -> &'static str {
        match self {
            Self::Semantic => "semantic",
            Self::Spatial => "+spatial",
            Self::Full => "+spatial+temporal",
        }
    }
}
