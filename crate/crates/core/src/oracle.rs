//! Independent reference implementations used to check the fast paths.
//!
//! Nothing here calls into the matrix kernels, the position codec or the
//! attention module: every quantity is recomputed with explicit scalar loops
//! straight from the defining formulas.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{near_spatial_kink, stca_backward, stca_forward};
use crate::error::{Result, StcaError};
use crate::exec;
use crate::linalg::Matrix;
use crate::model::{AttentionVariant, BoundingBox, FrameProposals, Proposal, ProposalBlock, StcaConfig, StcaParams};
use crate::pipeline::train::{network_loss, network_loss_and_grads, Aggregation, Network};
use crate::pipeline::{HeadParams, TrainingTriplet};

fn naive_sinusoid(r: f64, dim: usize, base: f64) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for z in 0..dim / 2 {
        let wavelength = base.powf(2.0 * z as f64 / dim as f64);
        out[2 * z] = (r / wavelength).sin();
        out[2 * z + 1] = (r / wavelength).cos();
    }
    out
}

fn naive_relation(pi: &BoundingBox, pj: &BoundingBox, eps: f64) -> [f64; 4] {
    let mut dx = (pi.cx - pj.cx).abs() / pj.w;
    let mut dy = (pi.cy - pj.cy).abs() / pj.h;
    if dx < eps {
        dx = eps;
    }
    if dy < eps {
        dy = eps;
    }
    [dx.ln(), dy.ln(), (pi.w / pj.w).ln(), (pi.h / pj.h).ln()]
}

fn project(f: &[f64], w: &Matrix) -> Vec<f64> {
    let cols = w.cols();
    let mut out = vec![0.0; cols];
    for c in 0..cols {
        let mut acc = 0.0;
        for k in 0..f.len() {
            acc += f[k] * w.get(k, c);
        }
        out[c] = acc;
    }
    out
}

/// Scalar-loop re-derivation of the operator for a target and candidate list.
pub fn naive_stca(
    targets: &[Proposal],
    candidates: &[Proposal],
    params: &StcaParams,
    config: &StcaConfig,
) -> Result<Matrix> {
    if candidates.is_empty() {
        return Err(StcaError::EmptyCandidateSet);
    }
    let d = config.d_v;
    for p in targets.iter().chain(candidates) {
        if p.feature.len() != d {
            return Err(StcaError::DimensionMismatch {
                context: "naive_stca feature".into(),
                expected: d,
                found: p.feature.len(),
            });
        }
    }
    params.validate(config)?;
    let root = (d as f64).sqrt();
    let variant = config.variant;
    let wqt = params.w_q_temporal.as_ref().unwrap_or(&params.w_q);

    let mut rows = Vec::with_capacity(targets.len());
    for ti in targets {
        let q = project(&ti.feature, &params.w_q);
        let qt = project(&ti.feature, wqt);
        let mut logits = Vec::with_capacity(candidates.len());
        for cj in candidates {
            let k = project(&cj.feature, &params.w_k);
            let mut e = 0.0;
            for c in 0..d {
                e += q[c] * k[c];
            }
            e /= root;
            if variant != AttentionVariant::Semantic {
                let r = naive_relation(&ti.bbox, &cj.bbox, config.eps_geom);
                let mut es = 0.0;
                for (a, &ra) in r.iter().enumerate() {
                    let phi = naive_sinusoid(ra, config.d_phi, config.sinusoid_base);
                    for (z, v) in phi.iter().enumerate() {
                        es += v * params.w_s.get(a * config.d_phi + z, 0);
                    }
                }
                e += if es > config.eps_spatial {
                    es
                } else {
                    config.eps_spatial
                }
                .ln();
            }
            if variant == AttentionVariant::Full {
                let mut tau = cj.frame_id - ti.frame_id;
                if !config.signed_tau {
                    tau = tau.abs();
                }
                let phi = naive_sinusoid(tau as f64, d, config.sinusoid_base);
                let pt = project(&phi, &params.w_t);
                let mut et = 0.0;
                for c in 0..d {
                    et += qt[c] * pt[c];
                }
                e += et / root;
            }
            logits.push(e);
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|e| (e - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let mut out = ti.feature.clone();
        for (cj, ex) in candidates.iter().zip(&exps) {
            let w = ex / total;
            for c in 0..d {
                out[c] += w * cj.feature[c];
            }
        }
        rows.push(out);
    }
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, d));
    }
    Matrix::from_rows(&rows)
}

fn naive_head(features: &[Vec<f64>], head: &HeadParams) -> Vec<Vec<f64>> {
    features
        .iter()
        .map(|f| {
            (0..head.bias.len())
                .map(|c| {
                    let mut v = head.bias[c];
                    for (k, x) in f.iter().enumerate() {
                        v += x * head.weights.get(k, c);
                    }
                    v
                })
                .collect()
        })
        .collect()
}

/// Stateless per-key-frame output of [`naive_infer`].
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveDetection {
    pub frame_id: i64,
    pub features: Matrix,
    pub logits: Matrix,
}

fn with_features(frame: &[Proposal], m: &Matrix) -> Vec<Proposal> {
    frame
        .iter()
        .enumerate()
        .map(|(r, p)| Proposal {
            feature: m.row(r).to_vec(),
            ..p.clone()
        })
        .collect()
}

/// Recomputes every stage of every key frame from scratch, without buffers.
pub fn naive_infer(sequence: &[FrameProposals], net: &Network, config: &StcaConfig) -> Result<Vec<NaiveDetection>> {
    if sequence.is_empty() {
        return Err(StcaError::EmptySequence);
    }
    if config.window.is_multiple_of(2) {
        return Err(StcaError::EvenWindow(config.window));
    }
    let len = sequence.len() as i64;
    let at = |p: i64| &sequence[p.clamp(0, len - 1) as usize].proposals;
    let k = (config.window / 2) as i64;
    let mut out = Vec::new();
    for c in 0..len {
        let features = match net.aggregation {
            Aggregation::Disabled => at(c).iter().map(|p| p.feature.clone()).collect::<Vec<_>>(),
            Aggregation::TwoStage => {
                let mut enhanced: Vec<Vec<Proposal>> = Vec::new();
                for pos in c - k..=c + k {
                    let candidates: Vec<Proposal> = (pos - k..=pos + k).flat_map(|q| at(q).iter().cloned()).collect();
                    let f = naive_stca(at(pos), &candidates, &net.stage1, config)?;
                    enhanced.push(with_features(at(pos), &f));
                }
                let target = &enhanced[k as usize];
                let candidates: Vec<Proposal> = enhanced.iter().flatten().cloned().collect();
                let f = naive_stca(target, &candidates, &net.stage2, config)?;
                (0..f.rows()).map(|r| f.row(r).to_vec()).collect()
            }
        };
        let logits = naive_head(&features, &net.head);
        out.push(NaiveDetection {
            frame_id: sequence[c as usize].frame_id,
            features: Matrix::from_rows(&features)?,
            logits: Matrix::from_rows(&logits)?,
        });
    }
    Ok(out)
}

/// Finite-difference stencil along one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stencil {
    /// `(L(θ + h) − L(θ − h)) / 2h`, error O(h²).
    Central,
    /// `(−L(θ + 2h) + 8L(θ + h) − 8L(θ − h) + L(θ − 2h)) / 12h`, error O(h⁴).
    FivePoint,
}

impl Stencil {
    /// Offsets in units of `h` and their weights, before division by `h`.
    fn taps(self) -> &'static [(f64, f64)] {
        match self {
            Self::Central => &[(1.0, 0.5), (-1.0, -0.5)],
            Self::FivePoint => &[
                (2.0, -1.0 / 12.0),
                (1.0, 8.0 / 12.0),
                (-1.0, -8.0 / 12.0),
                (-2.0, 1.0 / 12.0),
            ],
        }
    }

    /// Loss evaluations per coordinate.
    pub fn evaluations(self) -> usize {
        self.taps().len()
    }
}

/// Central differences `(L(θ + h e_i) − L(θ − h e_i)) / 2h` for every coordinate.
pub fn fd_gradient<F>(loss_fn: F, theta: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    fd_gradient_with(loss_fn, theta, h, Stencil::Central)
}

/// Finite-difference gradient with the given stencil. Evaluations run in
/// stencil order for each coordinate in turn.
pub fn fd_gradient_with<F>(mut loss_fn: F, theta: &[f64], h: f64, stencil: Stencil) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let mut acc = 0.0;
        for &(offset, weight) in stencil.taps() {
            probe[i] = theta[i] + offset * h;
            let value = loss_fn(&probe);
            if !value.is_finite() {
                return Err(StcaError::NonFinite(format!("loss evaluation at coordinate {i}")));
            }
            acc += weight * value;
        }
        probe[i] = theta[i];
        grad.push(acc / h);
    }
    Ok(grad)
}

/// Tolerances for comparing analytic and finite-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSettings {
    pub h: f64,
    pub stencil: Stencil,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Absolute errors below this always pass.
    pub abs_floor: f64,
    /// Configurations with a spatial logit this close to the floor are skipped.
    pub kink_margin: f64,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        Self {
            h: 1e-5,
            stencil: Stencil::FivePoint,
            tolerance: 1e-5,
            abs_floor: 1e-8,
            kink_margin: 1e-7,
        }
    }
}

impl GradCheckSettings {
    /// `|a − n| / max(|a|, |n|, abs_floor / tolerance)`, so an entry passes
    /// when it is within `tolerance` relatively or `abs_floor` absolutely.
    pub fn relative_error(&self, analytic: f64, numeric: f64) -> f64 {
        let scale = analytic.abs().max(numeric.abs()).max(self.abs_floor / self.tolerance);
        (analytic - numeric).abs() / scale
    }
}

/// One seeded operator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckCase {
    pub seed: u64,
    pub d_v: usize,
    pub targets: usize,
    pub candidates: usize,
    pub share_query: bool,
    pub variant: AttentionVariant,
}

/// The default configuration matrix: `d_v ∈ {4, 8, 16}`, targets `∈ {1, 3}`,
/// candidates `∈ {2, 6, 10}`, each with a shared and an unshared temporal query.
pub fn default_cases(seed: u64) -> Vec<GradCheckCase> {
    let mut cases = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &d_v in &[4, 8, 16] {
        for &targets in &[1, 3] {
            for &candidates in &[2, 6, 10] {
                for &share_query in &[true, false] {
                    cases.push(GradCheckCase {
                        seed: rng.random(),
                        d_v,
                        targets,
                        candidates,
                        share_query,
                        variant: AttentionVariant::Full,
                    });
                }
            }
        }
    }
    cases
}

/// Comparison summary for one parameter or input block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub block: String,
    pub checked: usize,
    /// Coordinates whose finite-difference stencil crossed the spatial floor.
    pub excluded: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// Coordinate of `max_rel_err` within the block (row-major).
    pub argmax: Option<usize>,
    pub analytic_at_max: f64,
    pub numeric_at_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case: GradCheckCase,
    /// True when the configuration sat on the spatial kink and was not compared.
    pub skipped: bool,
    pub blocks: Vec<BlockReport>,
}

/// Analytic-versus-numeric gradient comparison over a set of configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub settings: GradCheckSettings,
    pub cases: Vec<CaseReport>,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// `(case index, block, coordinate)` of the worst entry.
    pub worst: Option<(usize, String, usize)>,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn compared_cases(&self) -> usize {
        self.cases.iter().filter(|c| !c.skipped).count()
    }

    /// Blocks covered by at least one compared case.
    pub fn covered_blocks(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .cases
            .iter()
            .filter(|c| !c.skipped)
            .flat_map(|c| c.blocks.iter().filter(|b| b.checked > 0).map(|b| b.block.clone()))
            .collect();
        names.sort();
        names.dedup();
        names
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "gradient check: {:?} stencil, h={:e} tolerance={:e} abs_floor={:e}",
            self.settings.stencil, self.settings.h, self.settings.tolerance, self.settings.abs_floor
        )?;
        writeln!(
            f,
            "{:>4} {:>4} {:>3} {:>3} {:>6} {:<14} {:>7} {:>4} {:>12} {:>12}",
            "case", "d_v", "n", "m", "shared", "block", "checked", "excl", "max_abs", "max_rel"
        )?;
        for (i, c) in self.cases.iter().enumerate() {
            if c.skipped {
                writeln!(f, "{i:>4} skipped (spatial logit on the clamp kink)")?;
                continue;
            }
            for b in &c.blocks {
                writeln!(
                    f,
                    "{:>4} {:>4} {:>3} {:>3} {:>6} {:<14} {:>7} {:>4} {:>12.3e} {:>12.3e}",
                    i,
                    c.case.d_v,
                    c.case.targets,
                    c.case.candidates,
                    c.case.share_query,
                    b.block,
                    b.checked,
                    b.excluded,
                    b.max_abs_err,
                    b.max_rel_err
                )?;
            }
        }
        write!(
            f,
            "{} of {} cases compared; max relative error {:.3e}",
            self.compared_cases(),
            self.cases.len(),
            self.max_rel_err
        )?;
        if let Some((case, block, coord)) = &self.worst {
            write!(f, " at case {case}, {block}[{coord}]")?;
        }
        write!(f, "\nresult: {}", if self.pass { "PASS" } else { "FAIL" })
    }
}

/// Perturbation added to an analytic gradient entry, for exercising failure reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct GradFault {
    pub case: usize,
    pub block: String,
    pub index: usize,
    pub delta: f64,
}

fn random_proposals(rng: &mut ChaCha8Rng, n: usize, d: usize, frames: i64) -> Vec<Proposal> {
    (0..n)
        .map(|_| Proposal {
            bbox: BoundingBox::new(
                rng.random_range(0.0..50.0),
                rng.random_range(0.0..50.0),
                rng.random_range(2.0..10.0),
                rng.random_range(2.0..10.0),
            ),
            frame_id: rng.random_range(0..frames),
            feature: (0..d).map(|_| rng.random_range(-1.5..1.5)).collect(),
            objectness: 1.0,
            label: None,
        })
        .collect()
}

/// Everything needed to evaluate the scalar loss `Σ R ⊙ STCA(X, G)`.
struct Problem {
    config: StcaConfig,
    params: StcaParams,
    targets: ProposalBlock,
    candidates: ProposalBlock,
    upstream: Matrix,
}

impl Problem {
    fn new(case: &GradCheckCase) -> Result<Self> {
        let config = StcaConfig {
            d_v: case.d_v,
            d_phi: 4,
            share_query: case.share_query,
            variant: case.variant,
            ..StcaConfig::desk()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
        let params = StcaParams::gaussian(&config, rng.random(), 0.3);
        let targets = ProposalBlock::from_proposals(&random_proposals(&mut rng, case.targets, case.d_v, 3))?;
        let candidates = ProposalBlock::from_proposals(&random_proposals(&mut rng, case.candidates, case.d_v, 3))?;
        let upstream = Matrix::gaussian(case.targets, case.d_v, 1.0, &mut rng);
        Ok(Self {
            config,
            params,
            targets,
            candidates,
            upstream,
        })
    }

    fn block_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.params.blocks().iter().map(|(n, _)| n.to_string()).collect();
        names.push("targets".into());
        names.push("candidates".into());
        names
    }

    fn block_data(&self, name: &str) -> Vec<f64> {
        match name {
            "targets" => self.targets.features.data().to_vec(),
            "candidates" => self.candidates.features.data().to_vec(),
            other => self
                .params
                .blocks()
                .into_iter()
                .find(|(n, _)| *n == other)
                .map(|(_, m)| m.data().to_vec())
                .unwrap_or_default(),
        }
    }

    fn with_block(&self, name: &str, values: &[f64]) -> Problem {
        let mut p = Problem {
            config: self.config.clone(),
            params: self.params.clone(),
            targets: self.targets.clone(),
            candidates: self.candidates.clone(),
            upstream: self.upstream.clone(),
        };
        let dst = match name {
            "targets" => p.targets.features.data_mut(),
            "candidates" => p.candidates.features.data_mut(),
            other => p
                .params
                .blocks_mut()
                .into_iter()
                .find(|(n, _)| *n == other)
                .map(|(_, m)| m.data_mut())
                .expect("known block"),
        };
        dst.copy_from_slice(values);
        p
    }

    /// Loss and the sign pattern of `e_s − eps_spatial`.
    fn evaluate(&self) -> Result<(f64, Vec<bool>)> {
        let (out, cache) = stca_forward(&self.targets, &self.candidates, &self.params, &self.config)?;
        let loss = out.data().iter().zip(self.upstream.data()).map(|(a, b)| a * b).sum();
        let mask = cache
            .logits
            .e_s
            .as_ref()
            .map(|e| e.data().iter().map(|&s| s > self.config.eps_spatial).collect())
            .unwrap_or_default();
        Ok((loss, mask))
    }
}

fn analytic_block(grads: &crate::attention::StcaGradients, name: &str) -> Vec<f64> {
    match name {
        "w_q" => grads.w_q.data().to_vec(),
        "w_k" => grads.w_k.data().to_vec(),
        "w_s" => grads.w_s.data().to_vec(),
        "w_t" => grads.w_t.data().to_vec(),
        "w_q_temporal" => grads
            .w_q_temporal
            .as_ref()
            .map(|m| m.data().to_vec())
            .unwrap_or_default(),
        "targets" => grads.targets.data().to_vec(),
        "candidates" => grads.candidates.data().to_vec(),
        _ => Vec::new(),
    }
}

/// Compares analytic and finite-difference gradients for one configuration.
pub fn check_case(case: &GradCheckCase, settings: &GradCheckSettings, fault: Option<&GradFault>) -> Result<CaseReport> {
    let problem = Problem::new(case)?;
    let (_, cache) = stca_forward(&problem.targets, &problem.candidates, &problem.params, &problem.config)?;
    if near_spatial_kink(&cache, settings.kink_margin) {
        return Ok(CaseReport {
            case: case.clone(),
            skipped: true,
            blocks: Vec::new(),
        });
    }
    let grads = stca_backward(&cache, &problem.upstream)?;
    let (_, base_mask) = problem.evaluate()?;

    let mut blocks = Vec::new();
    for name in problem.block_names() {
        let theta = problem.block_data(&name);
        let mut analytic = analytic_block(&grads, &name);
        if let Some(f) = fault.filter(|f| f.block == name) {
            analytic[f.index] += f.delta;
        }
        let taps = settings.stencil.evaluations();
        let mut crossed = Vec::with_capacity(taps * theta.len());
        let mut failure = None;
        let numeric = fd_gradient_with(
            |values| match problem.with_block(&name, values).evaluate() {
                Ok((loss, mask)) => {
                    crossed.push(mask != base_mask);
                    loss
                }
                Err(e) => {
                    failure = Some(e);
                    f64::NAN
                }
            },
            &theta,
            settings.h,
            settings.stencil,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        let numeric = numeric?;
        let mut report = BlockReport {
            block: name.clone(),
            checked: 0,
            excluded: 0,
            max_abs_err: 0.0,
            max_rel_err: 0.0,
            argmax: None,
            analytic_at_max: 0.0,
            numeric_at_max: 0.0,
        };
        for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
            if crossed[taps * i..taps * (i + 1)].iter().any(|&c| c) {
                report.excluded += 1;
                continue;
            }
            report.checked += 1;
            let abs = (a - n).abs();
            let rel = settings.relative_error(a, n);
            report.max_abs_err = report.max_abs_err.max(abs);
            if report.argmax.is_none() || rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.argmax = Some(i);
                report.analytic_at_max = a;
                report.numeric_at_max = n;
            }
        }
        blocks.push(report);
    }
    Ok(CaseReport {
        case: case.clone(),
        skipped: false,
        blocks,
    })
}

/// Runs [`check_case`] over all cases (in parallel when enabled) and summarizes.
pub fn run_gradcheck(
    cases: &[GradCheckCase],
    settings: &GradCheckSettings,
    fault: Option<&GradFault>,
) -> Result<GradCheckReport> {
    let reports = exec::map_indices(cases.len(), |i| {
        check_case(&cases[i], settings, fault.filter(|f| f.case == i))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut max_rel_err = 0.0;
    let mut max_abs_err: f64 = 0.0;
    let mut worst = None;
    for (ci, c) in reports.iter().enumerate() {
        for b in &c.blocks {
            max_abs_err = max_abs_err.max(b.max_abs_err);
            if b.max_rel_err > max_rel_err || worst.is_none() {
                if let Some(arg) = b.argmax {
                    max_rel_err = b.max_rel_err;
                    worst = Some((ci, b.block.clone(), arg));
                }
            }
        }
    }
    let compared = reports.iter().any(|c| !c.skipped);
    Ok(GradCheckReport {
        settings: *settings,
        pass: compared && max_rel_err < settings.tolerance,
        cases: reports,
        max_rel_err,
        max_abs_err,
        worst,
    })
}

/// Result of checking the full training loss against finite differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineCheck {
    /// `(tensor index, entry index, analytic, numeric, relative error)`.
    pub entries: Vec<(usize, usize, f64, f64, f64)>,
    pub max_rel_err: f64,
}

/// Finite-difference check of the two-stage network loss on `count` random
/// parameter entries.
pub fn pipeline_gradcheck(
    triplet: &TrainingTriplet,
    net: &Network,
    config: &StcaConfig,
    count: usize,
    seed: u64,
    settings: &GradCheckSettings,
) -> Result<PipelineCheck> {
    let (_, grads) = network_loss_and_grads(triplet, net, config)?;
    let grad_tensors: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let sizes: Vec<usize> = grad_tensors.iter().map(Vec::len).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(count);
    let mut max_rel_err: f64 = 0.0;
    for _ in 0..count {
        let mut flat = rng.random_range(0..total);
        let mut tensor = 0;
        while flat >= sizes[tensor] {
            flat -= sizes[tensor];
            tensor += 1;
        }
        let mut probe = net.clone();
        let theta = [probe.tensors_mut()[tensor].0[flat]];
        let numeric = fd_gradient_with(
            |v| {
                probe.tensors_mut()[tensor].0[flat] = v[0];
                network_loss(triplet, &probe, config).unwrap_or(f64::NAN)
            },
            &theta,
            settings.h,
            settings.stencil,
        )?[0];
        let analytic = grad_tensors[tensor][flat];
        let rel = settings.relative_error(analytic, numeric);
        max_rel_err = max_rel_err.max(rel);
        entries.push((tensor, flat, analytic, numeric, rel));
    }
    Ok(PipelineCheck { entries, max_rel_err })
}
