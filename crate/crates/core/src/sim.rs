// SPDX-License-Identifier: Apache-2.0
//! Cycle-level model of output-stationary systolic tensor arrays.
//!
//! An `AxBxC_MxN` array is an `M x N` grid of tensor PEs. Each TPE owns an
//! `A x C` tile of output accumulators and consumes an `A x B` activation
//! tensor from the left and a `B x C` weight tensor (or its compressed form)
//! from the top on every K step.
//!
//! Timing convention:
//!
//! * TPE `(i, j)` sees its first operands at cycle `i + j * occ`, where `occ`
//!   is the number of cycles a TPE spends on one K step (1 for SA, STA and
//!   STA-DBB, the run NNZ for STA-VDBB). Weights skew one cycle per row;
//!   activations are held for `occ` cycles in each column.
//! * Output tiles are issued back to back, so fill `(M-1) + (N-1)*occ` and
//!   drain `M-1` (accumulators shift out down each column) are exposed once
//!   per GEMM call. Steady state is `passes * k_steps * occ`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::dbb::{BlockAxis, DbbFormat, DbbMatrix};
use crate::tensor::{Matrix, MAX_REDUCTION};
use crate::{BlockCoord, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ArrayMode {
    #[serde(rename = "SA")]
    Sa,
    #[serde(rename = "STA")]
    Sta,
    #[serde(rename = "STA_DBB")]
    StaDbb,
    #[serde(rename = "STA_VDBB")]
    StaVdbb,
}

impl ArrayMode {
    pub const ALL: [ArrayMode; 4] = [ArrayMode::Sa, ArrayMode::Sta, ArrayMode::StaDbb, ArrayMode::StaVdbb];

    pub fn label(self) -> &'static str {
        match self {
            ArrayMode::Sa => "SA",
            ArrayMode::Sta => "STA",
            ArrayMode::StaDbb => "STA_DBB",
            ArrayMode::StaVdbb => "STA_VDBB",
        }
    }

    pub fn is_sparse(self) -> bool {
        matches!(self, ArrayMode::StaDbb | ArrayMode::StaVdbb)
    }

    /// Whether zero activations can clock-gate a MAC. Wide dot products
    /// would need every input to be zero.
    pub fn supports_act_gating(self) -> bool {
        matches!(self, ArrayMode::Sa | ArrayMode::StaVdbb)
    }
}

impl fmt::Display for ArrayMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ArrayMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "SA" => Ok(ArrayMode::Sa),
            "STA" => Ok(ArrayMode::Sta),
            "STA_DBB" | "DBB" => Ok(ArrayMode::StaDbb),
            "STA_VDBB" | "VDBB" => Ok(ArrayMode::StaVdbb),
            _ => Err(Error::InvalidConfig(format!("unknown array mode '{s}'"))),
        }
    }
}

/// Array geometry, mode and feature flags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaConfig {
    pub a: usize,
    pub b: usize,
    pub c: usize,
    pub m: usize,
    pub n: usize,
    pub mode: ArrayMode,
    /// Required for the sparse modes; `bz` must equal `b`.
    pub dbb_fmt: Option<DbbFormat>,
    /// MACs per sparse dot product (STA-DBB only).
    pub sdp_width: Option<usize>,
    pub act_clock_gating: bool,
    pub im2col: bool,
    pub clock_ghz: f64,
}

impl StaConfig {
    pub fn sa(m: usize, n: usize) -> Self {
        Self::dense(ArrayMode::Sa, 1, 1, 1, m, n)
    }

    pub fn sta(a: usize, b: usize, c: usize, m: usize, n: usize) -> Self {
        Self::dense(ArrayMode::Sta, a, b, c, m, n)
    }

    fn dense(mode: ArrayMode, a: usize, b: usize, c: usize, m: usize, n: usize) -> Self {
        Self {
            a,
            b,
            c,
            m,
            n,
            mode,
            dbb_fmt: None,
            sdp_width: None,
            act_clock_gating: false,
            im2col: false,
            clock_ghz: 1.0,
        }
    }

    /// Fixed-DBB array with `sdp` MACs per sparse dot product; `b` is the
    /// block size.
    pub fn dbb(a: usize, b: usize, c: usize, m: usize, n: usize, sdp: usize) -> Result<Self> {
        let fmt = DbbFormat::new(b, sdp)?;
        Ok(Self {
            mode: ArrayMode::StaDbb,
            dbb_fmt: Some(fmt),
            sdp_width: Some(sdp),
            ..Self::dense(ArrayMode::StaDbb, a, b, c, m, n)
        })
    }

    /// Variable-DBB array; `b` is the block size.
    pub fn vdbb(a: usize, b: usize, c: usize, m: usize, n: usize) -> Result<Self> {
        let fmt = DbbFormat::new(b, b)?;
        Ok(Self {
            mode: ArrayMode::StaVdbb,
            dbb_fmt: Some(fmt),
            ..Self::dense(ArrayMode::StaVdbb, a, b, c, m, n)
        })
    }

    pub fn with_gating(mut self, on: bool) -> Self {
        self.act_clock_gating = on;
        self
    }

    pub fn with_im2col(mut self, on: bool) -> Self {
        self.im2col = on;
        self
    }

    pub fn with_clock(mut self, ghz: f64) -> Self {
        self.clock_ghz = ghz;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if [self.a, self.b, self.c, self.m, self.n].contains(&0) {
            return bad(format!("{self}: every dimension must be >= 1"));
        }
        if !(self.clock_ghz.is_finite() && self.clock_ghz > 0.0) {
            return bad(format!("clock {} GHz must be positive", self.clock_ghz));
        }
        match self.mode {
            ArrayMode::Sa if (self.a, self.b, self.c) != (1, 1, 1) => {
                return bad(format!("SA mode requires a 1x1x1 TPE, got {}x{}x{}", self.a, self.b, self.c));
            }
            ArrayMode::Sa | ArrayMode::Sta => {
                if self.dbb_fmt.is_some() || self.sdp_width.is_some() {
                    return Err(Error::ModeMismatch(format!(
                        "{} mode takes no DBB format",
                        self.mode
                    )));
                }
            }
            ArrayMode::StaDbb => {
                let fmt = self.sparse_format()?;
                if fmt.bz() != self.b {
                    return Err(Error::ModeMismatch(format!(
                        "STA_DBB needs B == BZ, got B={} BZ={}",
                        self.b,
                        fmt.bz()
                    )));
                }
                if self.sdp_width != Some(fmt.nnz()) {
                    return Err(Error::ModeMismatch(format!(
                        "STA_DBB needs sdp width == NNZ {}, got {:?}",
                        fmt.nnz(),
                        self.sdp_width
                    )));
                }
            }
            ArrayMode::StaVdbb => {
                let fmt = self.sparse_format()?;
                if fmt.bz() != self.b {
                    return Err(Error::ModeMismatch(format!(
                        "STA_VDBB needs B == BZ, got B={} BZ={}",
                        self.b,
                        fmt.bz()
                    )));
                }
                if self.sdp_width.is_some() {
                    return Err(Error::ModeMismatch("STA_VDBB has no fixed sdp width".into()));
                }
            }
        }
        if self.act_clock_gating && !self.mode.supports_act_gating() {
            return bad(format!("{} mode cannot clock-gate on activations", self.mode));
        }
        Ok(())
    }

    fn sparse_format(&self) -> Result<DbbFormat> {
        self.dbb_fmt
            .ok_or_else(|| Error::InvalidConfig(format!("{} mode requires a DBB format", self.mode)))
    }

    pub fn tpes(&self) -> usize {
        self.m * self.n
    }

    /// Multipliers in one TPE.
    pub fn macs_per_tpe(&self) -> usize {
        match self.mode {
            ArrayMode::Sa => 1,
            ArrayMode::Sta => self.a * self.b * self.c,
            ArrayMode::StaDbb => self.a * self.sdp_width.unwrap_or(self.b) * self.c,
            ArrayMode::StaVdbb => self.a * self.c,
        }
    }

    pub fn physical_macs(&self) -> usize {
        self.macs_per_tpe() * self.tpes()
    }

    /// Reduction elements consumed per TPE step.
    pub fn k_step(&self) -> usize {
        self.b
    }

    /// Output tile covered by one pass, `(A*M, C*N)`.
    pub fn tile(&self) -> (usize, usize) {
        (self.a * self.m, self.c * self.n)
    }
}

impl fmt::Display for StaConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}_{}x{}", self.a, self.b, self.c, self.m, self.n)?;
        match self.mode {
            ArrayMode::StaDbb => f.write_str("_DBB")?,
            ArrayMode::StaVdbb => f.write_str("_VDBB")?,
            _ => {}
        }
        if self.im2col {
            f.write_str("_IM2C")?;
        }
        Ok(())
    }
}

/// Parses `AxBxC_MxN[_DBB|_VDBB][_IM2C]`; `×` and `x` are both accepted.
/// A `1x1x1` tensor without a suffix is a plain SA. `_DBB` uses a `B/2`
/// sparse dot product.
impl FromStr for StaConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("malformed config string '{s}'"));
        let norm = s.trim().replace('×', "x").replace('X', "x");
        let mut parts = norm.split('_');
        let dims = |p: Option<&str>, want: usize| -> Result<Vec<usize>> {
            let v = p
                .ok_or_else(bad)?
                .split('x')
                .map(|d| d.parse::<usize>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            if v.len() != want || v.contains(&0) {
                return Err(bad());
            }
            Ok(v)
        };
        let t = dims(parts.next(), 3)?;
        let g = dims(parts.next(), 2)?;
        let (mut sparse, mut im2col) = (None, false);
        for suffix in parts {
            match suffix.to_ascii_uppercase().as_str() {
                "DBB" | "VDBB" if sparse.is_none() && !im2col => {
                    sparse = Some(suffix.to_ascii_uppercase())
                }
                "IM2C" | "IM2COL" if !im2col => im2col = true,
                _ => return Err(bad()),
            }
        }
        let (a, b, c, m, n) = (t[0], t[1], t[2], g[0], g[1]);
        let cfg = match sparse.as_deref() {
            Some("DBB") => StaConfig::dbb(a, b, c, m, n, (b / 2).max(1))?,
            Some(_) => StaConfig::vdbb(a, b, c, m, n)?,
            None if (a, b, c) == (1, 1, 1) => StaConfig::sa(m, n),
            None => StaConfig::sta(a, b, c, m, n),
        };
        let cfg = cfg.with_im2col(im2col);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Counted hardware events of one simulation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounters {
    pub mac_cycles_active: u64,
    /// `gated_act + gated_padding`.
    pub mac_cycles_gated: u64,
    /// Gated because the muxed activation was zero.
    pub gated_act: u64,
    /// Gated because the weight slot was block padding.
    pub gated_padding: u64,
    pub edge_reads_act_bytes: u64,
    pub edge_reads_wt_bytes: u64,
    pub edge_reads_mask_bytes: u64,
    /// Operand bytes entering TPEs, summed over every TPE (masks excluded).
    pub tpe_operand_bytes: u64,
    pub acc_writes: u64,
    /// Cycles spent per block, keyed by occupancy, counted per TPE.
    pub occupancy_histogram: BTreeMap<usize, u64>,
}

impl EventCounters {
    pub fn mac_cycles(&self) -> u64 {
        self.mac_cycles_active + self.mac_cycles_gated
    }

    pub fn edge_operand_bytes(&self) -> u64 {
        self.edge_reads_act_bytes + self.edge_reads_wt_bytes
    }
}

/// Cycle totals for one GEMM call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleBreakdown {
    pub total: u64,
    pub fill: u64,
    pub steady: u64,
    pub drain: u64,
    pub passes: u64,
    pub k_steps: u64,
    pub occupancy: u64,
}

/// One per-TPE event of the optional trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TraceEvent {
    pub cycle: u64,
    pub tpe_row: usize,
    pub tpe_col: usize,
    pub event: TraceKind,
    pub active: u32,
    pub gated: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Mac,
    AccWrite,
}

/// Trace CSV header; one [`TraceEvent`] per line.
pub const TRACE_CSV_HEADER: &str = "cycle,tpe_row,tpe_col,event,active,gated";

impl TraceEvent {
    pub fn csv_line(&self) -> String {
        let kind = match self.event {
            TraceKind::Mac => "mac",
            TraceKind::AccWrite => "acc_write",
        };
        format!(
            "{},{},{},{},{},{}",
            self.cycle, self.tpe_row, self.tpe_col, kind, self.active, self.gated
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub output: Matrix<i32>,
    pub cycles_total: u64,
    pub cycles_fill: u64,
    pub cycles_steady: u64,
    pub cycles_drain: u64,
    pub passes: u64,
    pub k_steps: u64,
    pub occupancy: u64,
    /// Logical GEMM shape `(M, K, N)`.
    pub gemm: (usize, usize, usize),
    pub counters: EventCounters,
    pub trace: Option<Vec<TraceEvent>>,
}

impl SimResult {
    pub fn breakdown(&self) -> CycleBreakdown {
        CycleBreakdown {
            total: self.cycles_total,
            fill: self.cycles_fill,
            steady: self.cycles_steady,
            drain: self.cycles_drain,
            passes: self.passes,
            k_steps: self.k_steps,
            occupancy: self.occupancy,
        }
    }
}

/// Weight operand of a GEMM call.
#[derive(Debug, Clone, Copy)]
pub enum WeightOperand<'a> {
    Dense(&'a Matrix<i8>),
    Dbb(&'a DbbMatrix),
}

impl<'a> From<&'a Matrix<i8>> for WeightOperand<'a> {
    fn from(m: &'a Matrix<i8>) -> Self {
        WeightOperand::Dense(m)
    }
}

impl<'a> From<&'a DbbMatrix> for WeightOperand<'a> {
    fn from(m: &'a DbbMatrix) -> Self {
        WeightOperand::Dbb(m)
    }
}

impl WeightOperand<'_> {
    fn dims(&self) -> (usize, usize) {
        match self {
            WeightOperand::Dense(m) => (m.rows(), m.cols()),
            WeightOperand::Dbb(m) => (m.rows(), m.cols()),
        }
    }
}

/// Expanded view of one weight block: stored values and their positions.
#[derive(Clone, Copy, Default)]
struct Slots {
    count: u8,
    pos: [u8; 16],
    val: [i8; 16],
}

fn block_slots(w: &DbbMatrix) -> Vec<Slots> {
    w.blocks()
        .iter()
        .map(|blk| {
            let mut s = Slots::default();
            for (q, (p, &v)) in blk.positions().zip(&blk.values).enumerate() {
                s.pos[q] = p as u8;
                s.val[q] = v;
            }
            s.count = blk.popcount() as u8;
            s
        })
        .collect()
}

fn analytic(cfg: &StaConfig, m: usize, k: usize, n: usize, occ: usize) -> CycleBreakdown {
    let (tr, tc) = cfg.tile();
    let passes = (m.div_ceil(tr) * n.div_ceil(tc)) as u64;
    let k_steps = k.div_ceil(cfg.k_step()) as u64;
    let occ = occ as u64;
    let fill = (cfg.m as u64 - 1) + (cfg.n as u64 - 1) * occ;
    let steady = passes * k_steps * occ;
    let drain = cfg.m as u64 - 1;
    CycleBreakdown {
        total: fill + steady + drain,
        fill,
        steady,
        drain,
        passes,
        k_steps,
        occupancy: occ,
    }
}

/// Closed-form cycle count for an `m x k` by `k x n` GEMM whose weights
/// carry `weight_nnz` non-zeros per block (ignored by the dense modes).
/// A fixed-DBB array handles blocks denser than its SDP width by taking
/// `ceil(nnz / b)` cycles per block.
pub fn schedule_cycles(
    cfg: &StaConfig,
    m: usize,
    k: usize,
    n: usize,
    weight_nnz: usize,
) -> Result<CycleBreakdown> {
    cfg.validate()?;
    if m == 0 || k == 0 || n == 0 {
        return Err(Error::DimensionMismatch(format!("empty GEMM {m}x{k}x{n}")));
    }
    let occ = match cfg.mode {
        ArrayMode::Sa | ArrayMode::Sta => 1,
        ArrayMode::StaDbb | ArrayMode::StaVdbb => {
            if weight_nnz == 0 || weight_nnz > cfg.b {
                return Err(Error::InvalidConfig(format!(
                    "weight nnz {weight_nnz} outside 1..={}",
                    cfg.b
                )));
            }
            match cfg.mode {
                ArrayMode::StaDbb => weight_nnz.div_ceil(cfg.sdp_width.unwrap_or(cfg.b)),
                _ => weight_nnz,
            }
        }
    };
    Ok(analytic(cfg, m, k, n, occ))
}

/// Peak MACs per cycle, physical and effective (dense-equivalent).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Throughput {
    pub physical: u64,
    pub effective: Ratio<u64>,
}

pub fn steady_state_throughput(cfg: &StaConfig, run_nnz: Option<usize>) -> Result<Throughput> {
    cfg.validate()?;
    let physical = cfg.physical_macs() as u64;
    let dense = (cfg.a * cfg.b * cfg.c * cfg.tpes()) as u64;
    let effective = match cfg.mode {
        ArrayMode::Sa | ArrayMode::Sta | ArrayMode::StaDbb => {
            if run_nnz.is_some() {
                return Err(Error::ModeMismatch(format!("run nnz given to {} mode", cfg.mode)));
            }
            Ratio::from_integer(dense)
        }
        ArrayMode::StaVdbb => {
            let nnz = run_nnz.unwrap_or(cfg.b);
            if nnz == 0 || nnz > cfg.b {
                return Err(Error::InvalidConfig(format!("run nnz {nnz} outside 1..={}", cfg.b)));
            }
            Ratio::new(physical * cfg.b as u64, nnz as u64)
        }
    };
    Ok(Throughput { physical, effective })
}

/// MAC-cycle occupancy over `physical_macs * cycles_steady`.
pub fn utilization(res: &SimResult, cfg: &StaConfig) -> f64 {
    let denom = cfg.physical_macs() as u64 * res.cycles_steady;
    if denom == 0 {
        return 0.0;
    }
    res.counters.mac_cycles() as f64 / denom as f64
}

/// Dense-equivalent MACs of the GEMM per physical MAC-cycle spent in steady
/// state; the weight-sparsity speedup actually realised.
pub fn effective_speedup(res: &SimResult, cfg: &StaConfig) -> f64 {
    let (m, k, n) = res.gemm;
    let denom = cfg.physical_macs() as u64 * res.cycles_steady;
    if denom == 0 {
        return 0.0;
    }
    (m * k * n) as f64 / denom as f64
}

pub fn simulate_gemm<'a>(
    cfg: &StaConfig,
    act: &Matrix<i8>,
    wt: impl Into<WeightOperand<'a>>,
    run_nnz: Option<usize>,
) -> Result<SimResult> {
    Simulator::new(cfg, act, wt.into(), run_nnz, false)?.run()
}

/// As [`simulate_gemm`], additionally recording a per-TPE event trace.
pub fn simulate_gemm_traced<'a>(
    cfg: &StaConfig,
    act: &Matrix<i8>,
    wt: impl Into<WeightOperand<'a>>,
    run_nnz: Option<usize>,
) -> Result<SimResult> {
    Simulator::new(cfg, act, wt.into(), run_nnz, true)?.run()
}

enum Weights<'a> {
    Dense(&'a Matrix<i8>),
    Blocks { slots: Vec<Slots>, mask_bytes: usize },
}

struct Simulator<'a> {
    cfg: StaConfig,
    act: &'a Matrix<i8>,
    wt: Weights<'a>,
    k: usize,
    n: usize,
    occ: usize,
    gating: bool,
    trace: Option<Vec<TraceEvent>>,
}

impl<'a> Simulator<'a> {
    fn new(
        cfg: &StaConfig,
        act: &'a Matrix<i8>,
        wt: WeightOperand<'a>,
        run_nnz: Option<usize>,
        trace: bool,
    ) -> Result<Self> {
        cfg.validate()?;
        let (k, n) = wt.dims();
        if act.cols() != k {
            return Err(Error::DimensionMismatch(format!(
                "activations are {}x{}, weights are {}x{}",
                act.rows(),
                act.cols(),
                k,
                n
            )));
        }
        if act.rows() == 0 || k == 0 || n == 0 {
            return Err(Error::DimensionMismatch("empty GEMM".into()));
        }
        if k > MAX_REDUCTION {
            return Err(Error::DimensionMismatch(format!(
                "reduction length {k} exceeds the INT32-safe bound {MAX_REDUCTION}"
            )));
        }
        if run_nnz.is_some() && cfg.mode != ArrayMode::StaVdbb {
            return Err(Error::ModeMismatch(format!("run nnz given to {} mode", cfg.mode)));
        }
        let (weights, occ) = match (cfg.mode, wt) {
            (ArrayMode::Sa | ArrayMode::Sta, WeightOperand::Dense(w)) => (Weights::Dense(w), 1),
            (ArrayMode::Sa | ArrayMode::Sta, WeightOperand::Dbb(_)) => {
                return Err(Error::ModeMismatch(format!(
                    "{} mode takes dense weights; decode the DBB matrix first",
                    cfg.mode
                )))
            }
            (_, WeightOperand::Dense(_)) => {
                return Err(Error::ModeMismatch(format!(
                    "{} mode takes DBB-encoded weights",
                    cfg.mode
                )))
            }
            (mode, WeightOperand::Dbb(w)) => {
                if w.axis() != BlockAxis::Rows {
                    return Err(Error::ModeMismatch(
                        "weights must be blocked along the reduction (row) axis".into(),
                    ));
                }
                if w.format().bz() != cfg.b {
                    return Err(Error::ModeMismatch(format!(
                        "weight block size {} differs from TPE depth B={}",
                        w.format().bz(),
                        cfg.b
                    )));
                }
                let bound = if mode == ArrayMode::StaDbb {
                    cfg.sdp_width.unwrap_or(cfg.b)
                } else {
                    let r = run_nnz.unwrap_or(w.format().nnz());
                    if r == 0 || r > cfg.b {
                        return Err(Error::InvalidConfig(format!(
                            "run nnz {r} outside 1..={}",
                            cfg.b
                        )));
                    }
                    r
                };
                let (_, gc) = w.grid_dims();
                if let Some(idx) = w.blocks().iter().position(|b| b.popcount() > bound) {
                    return Err(Error::DensityViolation {
                        block: BlockCoord { row: idx / gc, col: idx % gc },
                        count: w.blocks()[idx].popcount(),
                        bound,
                    });
                }
                let weights = Weights::Blocks {
                    slots: block_slots(w),
                    mask_bytes: w.format().mask_bytes(),
                };
                (weights, if mode == ArrayMode::StaVdbb { bound } else { 1 })
            }
        };
        Ok(Self {
            cfg: *cfg,
            act,
            wt: weights,
            k,
            n,
            occ,
            gating: cfg.act_clock_gating,
            trace: trace.then(Vec::new),
        })
    }

    #[inline]
    fn a_at(&self, r: usize, k: usize) -> i8 {
        if r < self.act.rows() && k < self.k {
            self.act.get(r, k)
        } else {
            0
        }
    }

    #[inline]
    fn slots(&self, t: usize, col: usize) -> Slots {
        match &self.wt {
            Weights::Blocks { slots, .. } if col < self.n => slots[t * self.n + col],
            _ => Slots::default(),
        }
    }

    fn run(mut self) -> Result<SimResult> {
        let cfg = self.cfg;
        let mr = self.act.rows();
        let bd = analytic(&cfg, mr, self.k, self.n, self.occ);
        let (tr, tc) = cfg.tile();
        let row_tiles = mr.div_ceil(tr);
        let col_tiles = self.n.div_ceil(tc);
        let k_steps = bd.k_steps as usize;
        let occ = self.occ;
        let mut out = Matrix::<i32>::zeros(mr, self.n);
        let mut ctr = EventCounters::default();
        let mut acc = vec![0i32; cfg.a * cfg.c];
        let mut last_mac_cycle = 0u64;

        for rt in 0..row_tiles {
            for ct in 0..col_tiles {
                let pass = (rt * col_tiles + ct) as u64;
                let base = pass * bd.k_steps * occ as u64;
                for i in 0..cfg.m {
                    for j in 0..cfg.n {
                        let r0 = rt * tr + i * cfg.a;
                        let c0 = ct * tc + j * cfg.c;
                        acc.iter_mut().for_each(|v| *v = 0);
                        let start = base + (i + j * occ) as u64;
                        for t in 0..k_steps {
                            let cycle0 = start + (t * occ) as u64;
                            self.step(&mut ctr, &mut acc, i, j, r0, c0, t, cycle0);
                            last_mac_cycle = last_mac_cycle.max(cycle0 + occ as u64 - 1);
                        }
                        *ctr.occupancy_histogram.entry(occ).or_insert(0) += k_steps as u64;
                        ctr.acc_writes += (cfg.a * cfg.c) as u64;
                        if let Some(tr) = self.trace.as_mut() {
                            tr.push(TraceEvent {
                                cycle: start + (k_steps * occ) as u64,
                                tpe_row: i,
                                tpe_col: j,
                                event: TraceKind::AccWrite,
                                active: 0,
                                gated: 0,
                            });
                        }
                        for a in 0..cfg.a {
                            for c in 0..cfg.c {
                                let (r, col) = (r0 + a, c0 + c);
                                if r < mr && col < self.n {
                                    out.set(r, col, acc[a * cfg.c + c]);
                                }
                            }
                        }
                    }
                }
            }
        }

        let cycles_total = last_mac_cycle + 1 + bd.drain;
        debug_assert_eq!(cycles_total, bd.total);
        let mut trace = self.trace.take();
        if let Some(t) = trace.as_mut() {
            t.sort_by_key(|e| (e.cycle, e.tpe_row, e.tpe_col));
        }
        Ok(SimResult {
            output: out,
            cycles_total,
            cycles_fill: bd.fill,
            cycles_steady: bd.steady,
            cycles_drain: bd.drain,
            passes: bd.passes,
            k_steps: bd.k_steps,
            occupancy: bd.occupancy,
            gemm: (mr, self.k, self.n),
            counters: ctr,
            trace,
        })
    }

    /// One K step of TPE `(i, j)`: `occ` cycles starting at `cycle0`.
    #[allow(clippy::too_many_arguments)]
    fn step(
        &mut self,
        ctr: &mut EventCounters,
        acc: &mut [i32],
        i: usize,
        j: usize,
        r0: usize,
        c0: usize,
        t: usize,
        cycle0: u64,
    ) {
        let cfg = self.cfg;
        let (a_dim, b_dim, c_dim) = (cfg.a, cfg.b, cfg.c);
        let k0 = t * b_dim;
        let act_bytes = (a_dim * b_dim) as u64;
        let mut per_cycle: [(u32, u32); 16] = [(0, 0); 16];
        match &self.wt {
            Weights::Dense(w) => {
                let (wr, wc) = (w.rows(), w.cols());
                let mut active = 0u64;
                let mut gated = 0u64;
                for a in 0..a_dim {
                    for kk in 0..b_dim {
                        let av = self.a_at(r0 + a, k0 + kk);
                        for c in 0..c_dim {
                            let (k, col) = (k0 + kk, c0 + c);
                            let wv = if k < wr && col < wc { w.get(k, col) } else { 0 };
                            acc[a * c_dim + c] += i32::from(av) * i32::from(wv);
                        }
                        // Only a single-MAC PE can gate; validate() rejects
                        // gating for wide dot products.
                        if self.gating && av == 0 {
                            gated += c_dim as u64;
                        } else {
                            active += c_dim as u64;
                        }
                    }
                }
                ctr.mac_cycles_active += active;
                ctr.gated_act += gated;
                ctr.mac_cycles_gated += gated;
                if j == 0 {
                    ctr.edge_reads_act_bytes += act_bytes;
                }
                if i == 0 {
                    ctr.edge_reads_wt_bytes += (b_dim * c_dim) as u64;
                }
                ctr.tpe_operand_bytes += act_bytes + (b_dim * c_dim) as u64;
                per_cycle[0] = (active as u32, gated as u32);
            }
            Weights::Blocks { mask_bytes, .. } if cfg.mode == ArrayMode::StaDbb => {
                let mask_bytes = *mask_bytes as u64;
                let sdp = cfg.sdp_width.unwrap_or(b_dim);
                for c in 0..c_dim {
                    let s = self.slots(t, c0 + c);
                    for q in 0..(s.count as usize).min(sdp) {
                        let (p, wv) = (s.pos[q] as usize, s.val[q]);
                        for a in 0..a_dim {
                            acc[a * c_dim + c] += i32::from(self.a_at(r0 + a, k0 + p)) * i32::from(wv);
                        }
                    }
                }
                let macs = (a_dim * sdp * c_dim) as u64;
                ctr.mac_cycles_active += macs;
                if j == 0 {
                    ctr.edge_reads_act_bytes += act_bytes;
                }
                if i == 0 {
                    ctr.edge_reads_wt_bytes += (sdp * c_dim) as u64;
                    ctr.edge_reads_mask_bytes += c_dim as u64 * mask_bytes;
                }
                ctr.tpe_operand_bytes += act_bytes + (sdp * c_dim) as u64;
                per_cycle[0] = (macs as u32, 0);
            }
            Weights::Blocks { mask_bytes, .. } => {
                let mask_bytes = *mask_bytes as u64;
                let occ = self.occ;
                for c in 0..c_dim {
                    let s = self.slots(t, c0 + c);
                    for (q, cyc) in per_cycle.iter_mut().enumerate().take(occ) {
                        if q >= s.count as usize {
                            // Padded slot: the MAC sees a zero weight.
                            if self.gating {
                                ctr.gated_padding += a_dim as u64;
                                cyc.1 += a_dim as u32;
                            } else {
                                ctr.mac_cycles_active += a_dim as u64;
                                cyc.0 += a_dim as u32;
                            }
                            continue;
                        }
                        let (p, wv) = (s.pos[q] as usize, s.val[q]);
                        for a in 0..a_dim {
                            let av = self.a_at(r0 + a, k0 + p);
                            if self.gating && av == 0 {
                                ctr.gated_act += 1;
                                cyc.1 += 1;
                            } else {
                                acc[a * c_dim + c] += i32::from(av) * i32::from(wv);
                                ctr.mac_cycles_active += 1;
                                cyc.0 += 1;
                            }
                        }
                    }
                }
                ctr.mac_cycles_gated = ctr.gated_act + ctr.gated_padding;
                if j == 0 {
                    ctr.edge_reads_act_bytes += act_bytes;
                }
                if i == 0 {
                    ctr.edge_reads_wt_bytes += (occ * c_dim) as u64;
                    ctr.edge_reads_mask_bytes += c_dim as u64 * mask_bytes;
                }
                ctr.tpe_operand_bytes += act_bytes + (occ * c_dim) as u64;
            }
        }
        if let Some(tr) = self.trace.as_mut() {
            for (q, &(active, gated)) in per_cycle.iter().enumerate().take(self.occ) {
                tr.push(TraceEvent {
                    cycle: cycle0 + q as u64,
                    tpe_row: i,
                    tpe_col: j,
                    event: TraceKind::Mac,
                    active,
                    gated,
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dbb::{encode_matrix, prune_to_dbb};
    use crate::tensor::gemm_ref;
    use proptest::prelude::*;

    fn lcg_matrix(rows: usize, cols: usize, seed: u64) -> Matrix<i8> {
        let mut s = seed.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
        Matrix::from_fn(rows, cols, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 56) as i8
        })
    }

    fn dbb_weights(k: usize, n: usize, bz: usize, nnz: usize, seed: u64) -> DbbMatrix {
        let fmt = DbbFormat::new(bz, nnz).unwrap();
        let w = prune_to_dbb(&lcg_matrix(k, n, seed), fmt, BlockAxis::Rows);
        encode_matrix(&w, fmt, BlockAxis::Rows).unwrap()
    }

    #[test]
    fn config_string_round_trip() {
        for s in ["1x1x1_32x64", "4x8x4_4x8", "4x8x4_4x8_DBB", "4x8x8_4x8_VDBB_IM2C", "2x8x2_8x8_IM2C"] {
            assert_eq!(s.parse::<StaConfig>().unwrap().to_string(), s);
        }
        let c: StaConfig = "4×8×8_4×8_VDBB_IM2C".parse().unwrap();
        assert_eq!((c.a, c.b, c.c, c.m, c.n, c.mode, c.im2col), (4, 8, 8, 4, 8, ArrayMode::StaVdbb, true));
        let d: StaConfig = "4x8x4_4x8_DBB".parse().unwrap();
        assert_eq!(d.sdp_width, Some(4));
        for bad in ["", "4x8_4x8", "4x8x4_4", "4x8x4_4x8_FOO", "4x8x4_4x8_IM2C_VDBB", "0x1x1_1x1", "4x6x4_4x4_VDBB"] {
            assert!(bad.parse::<StaConfig>().is_err(), "{bad}");
        }
    }

    #[test]
    fn validation_rules() {
        assert!(StaConfig::sta(1, 2, 1, 1, 1).with_gating(true).validate().is_err());
        assert!(StaConfig::dbb(2, 4, 2, 2, 2, 2).unwrap().with_gating(true).validate().is_err());
        assert!(StaConfig::vdbb(2, 8, 2, 2, 2).unwrap().with_gating(true).validate().is_ok());
        let mut sa = StaConfig::sa(2, 2);
        sa.b = 2;
        assert!(sa.validate().is_err());
        let mut v = StaConfig::vdbb(2, 8, 2, 2, 2).unwrap();
        v.b = 4;
        assert!(matches!(v.validate(), Err(Error::ModeMismatch(_))));
    }

    #[test]
    fn small_dbb_case_five_cycles() {
        let cfg = StaConfig::dbb(2, 4, 2, 2, 2, 2).unwrap();
        let act = lcg_matrix(4, 8, 1);
        let w = dbb_weights(8, 4, 4, 2, 2);
        let r = simulate_gemm(&cfg, &act, &w, None).unwrap();
        assert_eq!(r.cycles_total, 5);
        assert_eq!(r.output, gemm_ref(&act, &w.decode().unwrap()).unwrap());
    }

    #[test]
    fn small_vdbb_case_eight_cycles() {
        let cfg = StaConfig::vdbb(2, 8, 4, 2, 2).unwrap();
        let act = lcg_matrix(4, 16, 3);
        let w = dbb_weights(16, 8, 8, 2, 4);
        let r = simulate_gemm(&cfg, &act, &w, None).unwrap();
        assert_eq!((r.cycles_fill, r.cycles_steady, r.cycles_drain), (3, 4, 1));
        assert_eq!(r.cycles_total, 8);
        assert_eq!(r.output, gemm_ref(&act, &w.decode().unwrap()).unwrap());
        assert_eq!(r.counters.occupancy_histogram.keys().copied().collect::<Vec<_>>(), vec![2]);
    }

    #[test]
    fn degenerate_sa() {
        let a = Matrix::from_vec(1, 1, vec![-7i8]).unwrap();
        let w = Matrix::from_vec(1, 1, vec![9i8]).unwrap();
        let r = simulate_gemm(&StaConfig::sa(1, 1), &a, &w, None).unwrap();
        assert_eq!(r.output.data(), &[-63]);
        assert_eq!(r.cycles_total, 1);
        assert_eq!(r.counters.edge_operand_bytes(), 2);
    }

    #[test]
    fn traced_run_matches_cycles() {
        let cfg = StaConfig::vdbb(2, 8, 4, 2, 2).unwrap().with_gating(true);
        let act = lcg_matrix(4, 16, 5);
        let w = dbb_weights(16, 8, 8, 2, 6);
        let r = simulate_gemm_traced(&cfg, &act, &w, None).unwrap();
        let trace = r.trace.as_ref().unwrap();
        let last_mac = trace.iter().filter(|e| e.event == TraceKind::Mac).map(|e| e.cycle).max().unwrap();
        assert_eq!(last_mac + 1 + r.cycles_drain, r.cycles_total);
        let total: u64 = trace.iter().map(|e| u64::from(e.active + e.gated)).sum();
        assert_eq!(total, r.counters.mac_cycles());
        assert_eq!(trace[0].csv_line().split(',').count(), TRACE_CSV_HEADER.split(',').count());
    }

    #[test]
    fn mode_mismatches() {
        let act = lcg_matrix(4, 16, 1);
        let dense = lcg_matrix(16, 8, 2);
        let w = dbb_weights(16, 8, 8, 2, 3);
        let vd = StaConfig::vdbb(2, 8, 4, 2, 2).unwrap();
        assert!(matches!(simulate_gemm(&vd, &act, &dense, None), Err(Error::ModeMismatch(_))));
        let sta = StaConfig::sta(2, 8, 4, 2, 2);
        assert!(matches!(simulate_gemm(&sta, &act, &w, None), Err(Error::ModeMismatch(_))));
        assert!(matches!(simulate_gemm(&sta, &act, &dense, Some(2)), Err(Error::ModeMismatch(_))));
        assert!(matches!(simulate_gemm(&vd, &act, &w, Some(1)), Err(Error::DensityViolation { .. })));
        let short = lcg_matrix(4, 15, 1);
        assert!(matches!(simulate_gemm(&vd, &short, &w, None), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn throughput_examples() {
        assert_eq!(steady_state_throughput(&StaConfig::sa(4, 4), None).unwrap().physical, 16);
        let v = StaConfig::vdbb(2, 8, 4, 2, 2).unwrap();
        let t = steady_state_throughput(&v, Some(2)).unwrap();
        assert_eq!((t.physical, t.effective), (32, Ratio::from_integer(128)));
        let t8 = steady_state_throughput(&v, Some(8)).unwrap();
        assert_eq!(t8.effective, Ratio::from_integer(t8.physical));
        let d = StaConfig::dbb(4, 8, 4, 4, 8, 4).unwrap();
        let td = steady_state_throughput(&d, None).unwrap();
        assert_eq!((td.physical, td.effective), (2048, Ratio::from_integer(4096)));
    }

    #[test]
    fn fixed_dbb_speedup_caps_at_design_ratio() {
        let cfg = StaConfig::dbb(2, 8, 2, 2, 2, 4).unwrap();
        let act = lcg_matrix(16, 64, 9);
        let w28 = dbb_weights(64, 16, 8, 2, 10);
        let w48 = w28.reformat(DbbFormat::new(8, 4).unwrap()).unwrap();
        let r1 = simulate_gemm(&cfg, &act, &w28, None).unwrap();
        let r2 = simulate_gemm(&cfg, &act, &w48, None).unwrap();
        assert_eq!(r1.cycles_total, r2.cycles_total);
        assert_eq!(effective_speedup(&r1, &cfg), 2.0);
        assert_eq!(effective_speedup(&r2, &cfg), 2.0);
        assert_eq!(r1.output, r2.output);
    }

    #[test]
    fn schedule_matches_simulation() {
        let cfg = StaConfig::vdbb(2, 8, 2, 2, 3).unwrap();
        let act = lcg_matrix(9, 40, 4);
        let w = dbb_weights(40, 13, 8, 3, 5);
        let r = simulate_gemm(&cfg, &act, &w, None).unwrap();
        assert_eq!(schedule_cycles(&cfg, 9, 40, 13, 3).unwrap(), r.breakdown());
        let d = StaConfig::dbb(2, 8, 2, 2, 2, 4).unwrap();
        assert_eq!(schedule_cycles(&d, 8, 64, 8, 8).unwrap().occupancy, 2);
    }

    #[test]
    fn gating_splits_act_and_padding() {
        let cfg = StaConfig::vdbb(1, 8, 1, 1, 1).unwrap().with_gating(true);
        let act = Matrix::from_vec(1, 8, vec![0, 3, 0, 0, 0, 0, 0, 0]).unwrap();
        let w = encode_matrix(
            &Matrix::from_vec(8, 1, vec![5, 2, 0, 0, 0, 0, 0, 0]).unwrap(),
            DbbFormat::new(8, 3).unwrap(),
            BlockAxis::Rows,
        )
        .unwrap();
        let r = simulate_gemm(&cfg, &act, &w, None).unwrap();
        assert_eq!(r.output.data(), &[6]);
        let c = &r.counters;
        assert_eq!((c.mac_cycles_active, c.gated_act, c.gated_padding), (1, 1, 1));
        assert_eq!(utilization(&r, &cfg), 1.0);
    }

    fn arb_vdbb() -> impl Strategy<Value = (StaConfig, Matrix<i8>, DbbMatrix, usize)> {
        (1usize..4, 1usize..4, 1usize..4, 1usize..4, 1usize..=8, 1usize..12, 1usize..40, 1usize..12, any::<u64>(), any::<bool>())
            .prop_map(|(a, c, m, n, nnz, rows, k, cols, seed, gating)| {
                let cfg = StaConfig::vdbb(a, 8, c, m, n).unwrap().with_gating(gating);
                let act = lcg_matrix(rows, k, seed);
                let w = dbb_weights(k, cols, 8, nnz, seed ^ 0x5555);
                (cfg, act, w, nnz)
            })
    }

    proptest! {
        #[test]
        fn vdbb_matches_gemm_ref((cfg, act, w, nnz) in arb_vdbb()) {
            let r = simulate_gemm(&cfg, &act, &w, Some(nnz)).unwrap();
            prop_assert_eq!(&r.output, &gemm_ref(&act, &w.decode().unwrap()).unwrap());
            prop_assert_eq!(r.cycles_total, r.cycles_fill + r.cycles_steady + r.cycles_drain);
            prop_assert_eq!(r.counters.mac_cycles(), cfg.physical_macs() as u64 * r.cycles_steady);
        }

        #[test]
        fn sta_matches_gemm_ref(a in 1usize..4, b in 1usize..5, c in 1usize..4, m in 1usize..4, n in 1usize..4,
                                rows in 1usize..10, k in 1usize..30, cols in 1usize..10, seed in any::<u64>()) {
            let cfg = if (a, b, c) == (1, 1, 1) { StaConfig::sa(m, n) } else { StaConfig::sta(a, b, c, m, n) };
            let act = lcg_matrix(rows, k, seed);
            let w = lcg_matrix(k, cols, !seed);
            let r = simulate_gemm(&cfg, &act, &w, None).unwrap();
            prop_assert_eq!(r.output, gemm_ref(&act, &w).unwrap());
        }

        #[test]
        fn simulation_is_deterministic((cfg, act, w, nnz) in arb_vdbb()) {
            let r1 = simulate_gemm_traced(&cfg, &act, &w, Some(nnz)).unwrap();
            let r2 = simulate_gemm_traced(&cfg, &act, &w, Some(nnz)).unwrap();
            prop_assert_eq!(r1, r2);
        }
    }
}
