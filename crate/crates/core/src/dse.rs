// SPDX-License-Identifier: Apache-2.0
//! Design-space enumeration, evaluation and pareto extraction.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cost::{estimate_cost_at, nominal_tops, CostCoefficients, CostReport, OperatingPoint};
use crate::dbb::{encode_matrix, prune_to_dbb, BlockAxis, DbbFormat};
use crate::sim::{schedule_cycles, simulate_gemm, ArrayMode, StaConfig};
use crate::tensor::Matrix;
use crate::workload::WorkloadSpec;
use crate::{Error, Result};

/// Hardware features of a design, derived from its configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Features {
    pub im2col: bool,
    pub dbb_fixed: bool,
    pub vdbb: bool,
}

impl Features {
    pub fn of(cfg: &StaConfig) -> Self {
        Self {
            im2col: cfg.im2col,
            dbb_fixed: cfg.mode == ArrayMode::StaDbb,
            vdbb: cfg.mode == ArrayMode::StaVdbb,
        }
    }
}

impl fmt::Display for Features {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.dbb_fixed {
            parts.push("DBB");
        }
        if self.vdbb {
            parts.push("VDBB");
        }
        if self.im2col {
            parts.push("IM2C");
        }
        if parts.is_empty() {
            f.write_str("dense")
        } else {
            f.write_str(&parts.join("+"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignPoint {
    pub id: String,
    pub config: String,
    pub cfg: StaConfig,
    pub features: Features,
    pub nominal_tops: f64,
    /// Nominal class differs from the sweep target (explicit lists only).
    pub off_target: bool,
    pub metrics: Option<CostReport>,
}

impl DesignPoint {
    pub fn new(cfg: StaConfig, coeffs: &CostCoefficients, target: Option<f64>) -> Self {
        let (_, class) = nominal_tops(&cfg, coeffs);
        Self {
            id: design_id(&cfg),
            config: cfg.to_string(),
            cfg,
            features: Features::of(&cfg),
            nominal_tops: class,
            off_target: target.is_some_and(|t| t != class),
            metrics: None,
        }
    }

    /// `(power, area)` per effective TOPS; `None` before evaluation.
    pub fn objectives(&self) -> Option<(f64, f64)> {
        self.metrics.as_ref().map(|m| (m.power_per_tops(), m.area_per_tops()))
    }
}

/// First 16 hex digits of SHA-256 over the canonical configuration.
pub fn design_id(cfg: &StaConfig) -> String {
    let canon = format!(
        "{}|sdp={:?}|gating={}|clock={}",
        cfg,
        cfg.sdp_width,
        cfg.act_clock_gating,
        cfg.clock_ghz
    );
    hex::encode(&Sha256::digest(canon.as_bytes())[..8])
}

fn default_clock() -> f64 {
    1.0
}

fn default_bz() -> usize {
    8
}

fn default_modes() -> Vec<ArrayMode> {
    ArrayMode::ALL.to_vec()
}

fn default_im2col() -> Vec<bool> {
    vec![true, false]
}

fn default_op() -> OperatingPoint {
    OperatingPoint::new(3, 0.5, true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub name: String,
    pub target_tops: f64,
    #[serde(default = "default_clock")]
    pub clock_ghz: f64,
    #[serde(default)]
    pub a: Vec<usize>,
    #[serde(default)]
    pub b: Vec<usize>,
    #[serde(default)]
    pub c: Vec<usize>,
    #[serde(default)]
    pub m: Vec<usize>,
    #[serde(default)]
    pub n: Vec<usize>,
    #[serde(default = "default_modes")]
    pub modes: Vec<ArrayMode>,
    #[serde(default = "default_im2col")]
    pub im2col: Vec<bool>,
    /// Weight block size that sparse modes must match with `B`.
    #[serde(default = "default_bz")]
    pub bz: usize,
    #[serde(default = "default_op")]
    pub operating_point: OperatingPoint,
    /// Explicit design list; replaces the range product and keeps designs
    /// whose nominal class misses the target (flagged).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub configs: Option<Vec<String>>,
}

impl SweepSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "detail")]
pub enum ExclusionReason {
    NotPowerOfTwo(String),
    ModeMismatch(String),
    /// Same hardware as a design emitted under another mode.
    Duplicate(String),
    OffTarget(String),
    Invalid(String),
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, detail) = match self {
            Self::NotPowerOfTwo(d) => ("not power of two", d),
            Self::ModeMismatch(d) => ("mode mismatch", d),
            Self::Duplicate(d) => ("duplicate", d),
            Self::OffTarget(d) => ("off target", d),
            Self::Invalid(d) => ("invalid", d),
        };
        write!(f, "{kind}: {detail}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exclusion {
    pub config: String,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Enumeration {
    /// Sorted by id.
    pub points: Vec<DesignPoint>,
    pub excluded: Vec<Exclusion>,
}

impl Enumeration {
    pub fn exclusion_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for e in &self.excluded {
            let key = e.reason.to_string();
            let key = key.split(':').next().unwrap_or_default().to_string();
            *out.entry(key).or_insert(0) += 1;
        }
        out
    }
}

fn build(
    mode: ArrayMode,
    (a, b, c, m, n): (usize, usize, usize, usize, usize),
    bz: usize,
) -> std::result::Result<StaConfig, ExclusionReason> {
    let label = format!("{a}x{b}x{c}_{m}x{n}_{mode}");
    if let Some(v) = [a, b, c, m, n].into_iter().find(|v| !v.is_power_of_two()) {
        return Err(ExclusionReason::NotPowerOfTwo(format!("{label}: dimension {v}")));
    }
    let cfg = match mode {
        ArrayMode::Sa if (a, b, c) != (1, 1, 1) => {
            return Err(ExclusionReason::ModeMismatch(format!("{label}: SA needs a 1x1x1 TPE")))
        }
        ArrayMode::Sa => StaConfig::sa(m, n).with_gating(true),
        ArrayMode::Sta if (a, b, c) == (1, 1, 1) => {
            return Err(ExclusionReason::Duplicate(format!("{label}: same as SA")))
        }
        ArrayMode::Sta => StaConfig::sta(a, b, c, m, n),
        ArrayMode::StaDbb | ArrayMode::StaVdbb if b != bz => {
            return Err(ExclusionReason::ModeMismatch(format!("{label}: B={b} but BZ={bz}")))
        }
        ArrayMode::StaDbb => StaConfig::dbb(a, b, c, m, n, b / 2)
            .map_err(|e| ExclusionReason::Invalid(e.to_string()))?,
        ArrayMode::StaVdbb => StaConfig::vdbb(a, b, c, m, n)
            .map_err(|e| ExclusionReason::Invalid(e.to_string()))?
            .with_gating(true),
    };
    cfg.validate().map_err(|e| ExclusionReason::Invalid(e.to_string()))?;
    Ok(cfg)
}

/// Valid designs of `spec`, unevaluated and sorted by id.
pub fn enumerate(spec: &SweepSpec, coeffs: &CostCoefficients) -> Result<Enumeration> {
    if !(spec.clock_ghz > 0.0) || !(spec.target_tops > 0.0) {
        return Err(Error::Validation("clock and target TOPS must be positive".into()));
    }
    let mut points = Vec::new();
    let mut excluded = Vec::new();
    if let Some(list) = &spec.configs {
        for s in list {
            match s.parse::<StaConfig>() {
                Ok(cfg) => {
                    let cfg = cfg
                        .with_clock(spec.clock_ghz)
                        .with_gating(cfg.mode.supports_act_gating());
                    points.push(DesignPoint::new(cfg, coeffs, Some(spec.target_tops)));
                }
                Err(e) => excluded.push(Exclusion {
                    config: s.clone(),
                    reason: ExclusionReason::Invalid(e.to_string()),
                }),
            }
        }
    } else {
        for &mode in &spec.modes {
            for &a in &spec.a {
                for &b in &spec.b {
                    for &c in &spec.c {
                        for &m in &spec.m {
                            for &n in &spec.n {
                                for &im in &spec.im2col {
                                    let label = format!(
                                        "{a}x{b}x{c}_{m}x{n}_{mode}{}",
                                        if im { "_IM2C" } else { "" }
                                    );
                                    let cfg = match build(mode, (a, b, c, m, n), spec.bz) {
                                        Ok(cfg) => cfg.with_im2col(im).with_clock(spec.clock_ghz),
                                        Err(reason) => {
                                            excluded.push(Exclusion { config: label, reason });
                                            continue;
                                        }
                                    };
                                    let p = DesignPoint::new(cfg, coeffs, Some(spec.target_tops));
                                    if p.off_target {
                                        excluded.push(Exclusion {
                                            config: p.config,
                                            reason: ExclusionReason::OffTarget(format!(
                                                "nominal {} TOPS",
                                                p.nominal_tops
                                            )),
                                        });
                                    } else {
                                        points.push(p);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if points.is_empty() {
        return Err(Error::EmptySpace(format!(
            "sweep {} yields no valid design ({} combinations excluded)",
            spec.name,
            excluded.len()
        )));
    }
    points.sort_by(|x, y| x.id.cmp(&y.id));
    points.dedup_by(|x, y| x.id == y.id);
    Ok(Enumeration { points, excluded })
}

/// Operating point as seen by `cfg`: dense designs ignore weight sparsity
/// and designs without the unit cannot enable it.
pub fn point_for(cfg: &StaConfig, op: &OperatingPoint) -> OperatingPoint {
    OperatingPoint {
        weight_nnz: if cfg.mode.is_sparse() { op.weight_nnz.min(cfg.b) } else { op.weight_nnz },
        im2col_enabled: op.im2col_enabled && cfg.im2col,
        ..*op
    }
}

/// Evaluates every point in parallel; output order is by id.
pub fn evaluate(
    points: Vec<DesignPoint>,
    coeffs: &CostCoefficients,
    op: &OperatingPoint,
) -> Result<Vec<DesignPoint>> {
    let mut out: Vec<DesignPoint> = points
        .into_par_iter()
        .map(|mut p| {
            p.metrics = Some(estimate_cost_at(&p.cfg, coeffs, &point_for(&p.cfg, op))?);
            Ok(p)
        })
        .collect::<Result<_>>()?;
    out.sort_by(|x, y| x.id.cmp(&y.id));
    Ok(out)
}

/// Indices of the non-dominated points (minimising both objectives).
/// Points equal on both objectives do not dominate each other.
pub fn pareto_indices(objs: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..objs.len()).collect();
    order.sort_by(|&i, &j| {
        objs[i].0.total_cmp(&objs[j].0).then(objs[i].1.total_cmp(&objs[j].1))
    });
    let mut keep = Vec::new();
    let mut best_y = f64::INFINITY;
    let mut g = 0;
    while g < order.len() {
        let v = objs[order[g]];
        let mut end = g;
        while end < order.len() && objs[order[end]] == v {
            end += 1;
        }
        if v.1 < best_y {
            keep.extend_from_slice(&order[g..end]);
            best_y = v.1;
        }
        g = end.max(g + 1);
    }
    keep.sort_unstable();
    keep
}

/// Frontier of evaluated points under (power, area) per effective TOPS,
/// ordered by id. Unevaluated points are ignored.
pub fn pareto(points: &[DesignPoint]) -> Vec<DesignPoint> {
    let evaluated: Vec<&DesignPoint> = points.iter().filter(|p| p.metrics.is_some()).collect();
    let objs: Vec<(f64, f64)> = evaluated.iter().map(|p| p.objectives().unwrap()).collect();
    let mut front: Vec<DesignPoint> =
        pareto_indices(&objs).into_iter().map(|i| evaluated[i].clone()).collect();
    front.sort_by(|x, y| x.id.cmp(&y.id));
    front
}

/// How per-layer cycle counts are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CycleSource {
    Analytic,
    /// Cycle-accurate simulation on synthetic operands drawn from `seed`
    /// with each layer's sparsity statistics.
    Simulated { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerResult {
    pub name: String,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub weight_nnz: usize,
    pub act_sparsity: f64,
    pub im2col_active: bool,
    pub magnification: f64,
    pub cycles: u64,
    pub power_mw: f64,
    pub energy_uj: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelResult {
    pub config: String,
    pub model: String,
    pub layers: Vec<LayerResult>,
    pub total_cycles: u64,
    /// Cycle-weighted mean power.
    pub avg_power_mw: f64,
    pub energy_uj: f64,
}

impl ModelResult {
    /// Relative power saving of `self` over `baseline`.
    pub fn power_reduction(&self, baseline: &ModelResult) -> f64 {
        1.0 - self.avg_power_mw / baseline.avg_power_mw
    }
}

fn synthetic(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    zero_prob: f64,
) -> Matrix<i8> {
    Matrix::from_fn(rows, cols, |_, _| {
        if rng.gen_bool(zero_prob) {
            0
        } else {
            let v: i8 = rng.gen_range(1..=127);
            if rng.gen_bool(0.5) { -v } else { v }
        }
    })
}

/// Splits a column-blocked matrix into passes holding at most `per_pass`
/// non-zeros per block, in position order. The passes sum to `m`.
fn split_passes(m: &Matrix<i8>, bz: usize, per_pass: usize) -> Vec<Matrix<i8>> {
    let mut rank = Matrix::<i8>::zeros(m.rows(), m.cols());
    let mut passes = 1;
    for c in 0..m.cols() {
        for r0 in (0..m.rows()).step_by(bz) {
            let mut seen = 0;
            for r in r0..(r0 + bz).min(m.rows()) {
                if m.get(r, c) != 0 {
                    let p = seen / per_pass;
                    rank.set(r, c, p as i8);
                    passes = passes.max(p + 1);
                    seen += 1;
                }
            }
        }
    }
    (0..passes)
        .map(|p| {
            Matrix::from_fn(m.rows(), m.cols(), |r, c| {
                if m.get(r, c) != 0 && rank.get(r, c) as usize == p { m.get(r, c) } else { 0 }
            })
        })
        .collect()
}

/// Costs `workload` layer by layer on `cfg` and aggregates the model.
pub fn layer_sweep(
    cfg: &StaConfig,
    coeffs: &CostCoefficients,
    workload: &WorkloadSpec,
    source: CycleSource,
) -> Result<ModelResult> {
    cfg.validate()?;
    let layers = workload.resolved()?;
    let results: Vec<LayerResult> = layers
        .par_iter()
        .enumerate()
        .map(|(idx, l)| {
            let g = l.gemm;
            let nnz = if cfg.mode.is_sparse() {
                if l.dense {
                    cfg.b
                } else if l.weight_bz != cfg.b {
                    return Err(Error::ModeMismatch(format!(
                        "layer {} has BZ={} but {} has B={}",
                        l.name, l.weight_bz, cfg, cfg.b
                    )));
                } else {
                    l.weight_nnz
                }
            } else {
                l.weight_nnz
            };
            let im2col_active = cfg.im2col;
            let magnification = if im2col_active { g.magnification } else { 1.0 };
            let op = OperatingPoint {
                weight_nnz: nnz,
                act_sparsity: l.act_sparsity,
                im2col_enabled: im2col_active,
                magnification,
            };
            let report = estimate_cost_at(cfg, coeffs, &op)?;
            let cycles = match source {
                CycleSource::Analytic => schedule_cycles(cfg, g.m, g.k, g.n, nnz)?.total,
                CycleSource::Simulated { seed } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (idx as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
                    let act = synthetic(&mut rng, g.m, g.k, l.act_sparsity);
                    let dense = synthetic(&mut rng, g.k, g.n, 0.0);
                    if cfg.mode.is_sparse() {
                        let pruned = prune_to_dbb(&dense, DbbFormat::new(cfg.b, nnz)?, BlockAxis::Rows);
                        let (per_pass, run) = match cfg.dbb_fmt {
                            Some(f) if cfg.mode == ArrayMode::StaDbb => (f.nnz(), None),
                            _ => (nnz, Some(nnz)),
                        };
                        let fmt = DbbFormat::new(cfg.b, per_pass)?;
                        let mut cycles = 0;
                        for part in split_passes(&pruned, cfg.b, per_pass) {
                            let enc = encode_matrix(&part, fmt, BlockAxis::Rows)?;
                            cycles += simulate_gemm(cfg, &act, &enc, run)?.cycles_total;
                        }
                        cycles
                    } else {
                        simulate_gemm(cfg, &act, &dense, None)?.cycles_total
                    }
                }
            };
            Ok(LayerResult {
                name: l.name.clone(),
                m: g.m,
                k: g.k,
                n: g.n,
                weight_nnz: nnz,
                act_sparsity: l.act_sparsity,
                im2col_active,
                magnification,
                cycles,
                power_mw: report.power_mw.total,
                energy_uj: report.power_mw.total * cycles as f64 / (cfg.clock_ghz * 1e6),
            })
        })
        .collect::<Result<_>>()?;
    let total_cycles: u64 = results.iter().map(|r| r.cycles).sum();
    let weighted: f64 = results.iter().map(|r| r.power_mw * r.cycles as f64).sum();
    Ok(ModelResult {
        config: cfg.to_string(),
        model: workload.model.clone(),
        total_cycles,
        avg_power_mw: weighted / total_cycles as f64,
        energy_uj: results.iter().map(|r| r.energy_uj).sum(),
        layers: results,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanRow {
    pub weight_nnz: usize,
    pub weight_sparsity: f64,
    pub effective_tops: f64,
    pub power_mw: f64,
    pub tops_per_w: f64,
}

/// Effective throughput and efficiency over weight NNZ `1..=bz`.
pub fn sparsity_scan(
    cfg: &StaConfig,
    coeffs: &CostCoefficients,
    bz: usize,
    act_sparsity: f64,
) -> Result<Vec<ScanRow>> {
    (1..=bz)
        .map(|nnz| {
            let op = point_for(cfg, &OperatingPoint::new(nnz, act_sparsity, true));
            let rep = estimate_cost_at(cfg, coeffs, &op)?;
            Ok(ScanRow {
                weight_nnz: nnz,
                weight_sparsity: 1.0 - nnz as f64 / bz as f64,
                effective_tops: rep.effective_tops,
                power_mw: rep.power_mw.total,
                tops_per_w: rep.tops_per_w,
            })
        })
        .collect()
}

/// The twelve designs compared at 4 TOPS, with and without IM2COL.
pub const COMPARISON_CONFIGS: [&str; 12] = [
    "1x1x1_32x64",
    "1x1x1_32x64_IM2C",
    "2x8x2_8x8",
    "2x8x2_8x8_IM2C",
    "8x1x8_4x8",
    "8x1x8_4x8_IM2C",
    "4x8x4_4x8",
    "4x8x4_4x8_IM2C",
    "4x8x4_4x8_DBB",
    "4x8x4_4x8_DBB_IM2C",
    "4x8x8_4x8_VDBB",
    "4x8x8_4x8_VDBB_IM2C",
];

/// The full 4-TOPS space at 3/8 weights and 50% activation sparsity.
pub fn default_sweep_4tops() -> SweepSpec {
    SweepSpec {
        name: "4tops".into(),
        target_tops: 4.0,
        clock_ghz: 1.0,
        a: vec![1, 2, 4, 8, 16],
        b: vec![1, 2, 4, 8, 16, 32],
        c: vec![1, 2, 4, 8, 16],
        m: vec![1, 2, 4, 8, 16, 32, 64],
        n: vec![1, 2, 4, 8, 16, 32, 64],
        modes: default_modes(),
        im2col: default_im2col(),
        bz: 8,
        operating_point: default_op(),
        configs: None,
    }
}

pub fn comparison_sweep() -> SweepSpec {
    SweepSpec {
        name: "comparison".into(),
        a: vec![],
        b: vec![],
        c: vec![],
        m: vec![],
        n: vec![],
        configs: Some(COMPARISON_CONFIGS.iter().map(|s| s.to_string()).collect()),
        ..default_sweep_4tops()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dbb::check_dbb;
    use crate::workload::{Defaults, LayerShape};
    use proptest::prelude::*;

    fn coeffs() -> CostCoefficients {
        CostCoefficients::reference()
    }

    #[test]
    fn pareto_examples() {
        assert_eq!(pareto_indices(&[(3.0, 3.0)]), vec![0]);
        assert_eq!(pareto_indices(&[(1.0, 2.0), (2.0, 1.0), (2.0, 2.0)]), vec![0, 1]);
        assert_eq!(pareto_indices(&[(1.0, 1.0), (1.0, 1.0), (1.0, 2.0)]), vec![0, 1]);
        assert!(pareto_indices(&[]).is_empty());
    }

    fn brute(objs: &[(f64, f64)]) -> Vec<usize> {
        (0..objs.len())
            .filter(|&i| {
                !objs.iter().any(|o| {
                    o.0 <= objs[i].0 && o.1 <= objs[i].1 && (o.0 < objs[i].0 || o.1 < objs[i].1)
                })
            })
            .collect()
    }

    proptest! {
        #[test]
        fn pareto_matches_brute_force(pts in prop::collection::vec((0u8..12, 0u8..12), 0..60)) {
            let objs: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x as f64, y as f64)).collect();
            prop_assert_eq!(pareto_indices(&objs), brute(&objs));
        }
    }

    #[test]
    fn enumerate_dense_4tops() {
        let spec = SweepSpec { modes: vec![ArrayMode::Sa, ArrayMode::Sta], ..default_sweep_4tops() };
        let e = enumerate(&spec, &coeffs()).unwrap();
        assert!(e.points.iter().all(|p| p.cfg.physical_macs() == 2048 && p.nominal_tops == 4.0));
        assert!(e.points.iter().any(|p| p.config == "1x1x1_32x64"));
        let ids: Vec<&str> = e.points.iter().map(|p| p.id.as_str()).collect();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn vdbb_block_mismatch_is_reported() {
        let spec = SweepSpec {
            a: vec![4],
            b: vec![4, 8],
            c: vec![8],
            m: vec![4],
            n: vec![8],
            modes: vec![ArrayMode::StaVdbb],
            im2col: vec![true],
            ..default_sweep_4tops()
        };
        let e = enumerate(&spec, &coeffs()).unwrap();
        assert_eq!(e.points.len(), 1);
        assert!(matches!(e.excluded[0].reason, ExclusionReason::ModeMismatch(_)));
    }

    #[test]
    fn empty_ranges() {
        let spec = SweepSpec { a: vec![], ..default_sweep_4tops() };
        assert!(matches!(enumerate(&spec, &coeffs()), Err(Error::EmptySpace(_))));
    }

    #[test]
    fn comparison_list_has_twelve_points() {
        let e = enumerate(&comparison_sweep(), &coeffs()).unwrap();
        assert_eq!(e.points.len(), 12);
        let off: Vec<&str> =
            e.points.iter().filter(|p| p.off_target).map(|p| p.config.as_str()).collect();
        assert_eq!(off.len(), 2, "{off:?}");
        assert!(off.iter().all(|c| c.starts_with("4x8x4_4x8") && !c.contains("DBB")));
    }

    #[test]
    fn frontier_is_vdbb_im2col() {
        let spec = default_sweep_4tops();
        let e = enumerate(&spec, &coeffs()).unwrap();
        let pts = evaluate(e.points, &coeffs(), &spec.operating_point).unwrap();
        let front = pareto(&pts);
        assert!(!front.is_empty());
        assert!(front.iter().all(|p| p.features.vdbb && p.features.im2col), "{front:?}");
    }

    #[test]
    fn evaluation_is_order_independent() {
        let spec = comparison_sweep();
        let e = enumerate(&spec, &coeffs()).unwrap();
        let mut rev = e.points.clone();
        rev.reverse();
        let a = evaluate(e.points, &coeffs(), &spec.operating_point).unwrap();
        let b = evaluate(rev, &coeffs(), &spec.operating_point).unwrap();
        assert_eq!(a, b);
    }

    fn one_layer(layers: Vec<LayerShape>) -> WorkloadSpec {
        WorkloadSpec::new("t", Defaults { bz: 8, nnz: 3, act_sparsity: 0.0 }, layers).unwrap()
    }

    #[test]
    fn single_layer_aggregate() {
        let cfg: StaConfig = "4x8x8_4x8_VDBB_IM2C".parse().unwrap();
        let w = one_layer(vec![LayerShape::conv("pw", 14, 64, 64, 1, 1, 0)]);
        let r = layer_sweep(&cfg, &coeffs(), &w, CycleSource::Analytic).unwrap();
        let rep = estimate_cost_at(&cfg, &coeffs(), &OperatingPoint::new(3, 0.0, true).with_magnification(1.0)).unwrap();
        assert_eq!(r.avg_power_mw, rep.power_mw.total);
        assert_eq!(r.total_cycles, r.layers[0].cycles);
    }

    #[test]
    fn identical_layers_add_cycles() {
        let cfg: StaConfig = "4x8x4_4x8_DBB".parse().unwrap();
        let l = LayerShape::conv("c", 14, 32, 64, 3, 1, 1);
        let one = layer_sweep(&cfg, &coeffs(), &one_layer(vec![l.clone()]), CycleSource::Analytic).unwrap();
        let two = layer_sweep(&cfg, &coeffs(), &one_layer(vec![l.clone(), l]), CycleSource::Analytic).unwrap();
        assert_eq!(two.total_cycles, 2 * one.total_cycles);
    }

    #[test]
    fn simulated_cycles_match_analytic() {
        let w = one_layer(vec![
            LayerShape::conv("a", 6, 16, 16, 3, 1, 1),
            LayerShape::conv("b", 4, 24, 8, 1, 1, 0),
        ]);
        for s in ["2x8x2_2x2", "1x1x1_4x4", "2x8x2_2x2_DBB", "2x8x4_2x2_VDBB_IM2C"] {
            let cfg: StaConfig = s.parse().unwrap();
            let a = layer_sweep(&cfg, &coeffs(), &w, CycleSource::Analytic).unwrap();
            let b = layer_sweep(&cfg, &coeffs(), &w, CycleSource::Simulated { seed: 7 }).unwrap();
            assert_eq!(a, b, "{s}");
        }
    }

    #[test]
    fn split_passes_partition_blocks() {
        let m = Matrix::from_fn(16, 5, |r, c| if (r + c) % 3 == 0 { 0 } else { (r * 5 + c) as i8 - 30 });
        let parts = split_passes(&m, 8, 2);
        assert_eq!(parts.len(), 3);
        for p in &parts {
            assert!(check_dbb(p, DbbFormat::new(8, 2).unwrap(), BlockAxis::Rows).is_empty());
        }
        let sum = Matrix::from_fn(16, 5, |r, c| parts.iter().map(|p| p.get(r, c)).sum::<i8>());
        assert_eq!(sum, m);
    }

    #[test]
    fn dense_layer_on_fixed_dbb_array_simulates() {
        let mut dense = LayerShape::conv("d", 6, 16, 16, 3, 1, 1);
        dense.dbb_exempt = true;
        let w = one_layer(vec![dense]);
        let cfg: StaConfig = "2x8x2_2x2_DBB".parse().unwrap();
        let a = layer_sweep(&cfg, &coeffs(), &w, CycleSource::Analytic).unwrap();
        let b = layer_sweep(&cfg, &coeffs(), &w, CycleSource::Simulated { seed: 3 }).unwrap();
        assert_eq!(a.layers[0].weight_nnz, 8);
        // Each extra pass pays its own fill and drain.
        let slack = (cfg.m - 1 + cfg.n - 1 + cfg.m - 1) as u64;
        assert!(b.total_cycles >= a.total_cycles && b.total_cycles <= a.total_cycles + slack);
    }

    #[test]
    fn scan_shapes() {
        let c = coeffs();
        let flat = sparsity_scan(&"1x1x1_32x64".parse().unwrap(), &c, 8, 0.5).unwrap();
        assert!(flat.iter().all(|r| r.effective_tops == 4.0));
        let step = sparsity_scan(&"4x8x4_4x8_DBB".parse().unwrap(), &c, 8, 0.5).unwrap();
        assert!(step.iter().all(|r| r.effective_tops == if r.weight_nnz <= 4 { 8.0 } else { 4.0 }));
        let v = sparsity_scan(&"4x8x8_4x8_VDBB_IM2C".parse().unwrap(), &c, 8, 0.5).unwrap();
        assert!(v.iter().all(|r| r.effective_tops == 32.0 / r.weight_nnz as f64));
        assert!(v.windows(2).all(|w| w[0].tops_per_w > w[1].tops_per_w));
    }

    #[test]
    fn ids_are_stable() {
        let cfg: StaConfig = "4x8x8_4x8_VDBB_IM2C".parse().unwrap();
        assert_eq!(design_id(&cfg), design_id(&cfg.clone()));
        assert_ne!(design_id(&cfg), design_id(&cfg.with_im2col(false)));
        assert_eq!(design_id(&cfg).len(), 16);
    }
}
