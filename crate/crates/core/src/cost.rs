// SPDX-License-Identifier: Apache-2.0
//! Reuse metrics, power/area estimation and efficiency figures.
//!
//! Power model, in mW at the reference clock:
//!
//! ```text
//! array    = p_array_base * U(cfg, s) / U(ref, s_ref)
//!          + slope * act_bytes(cfg, n) / act_bytes(ref, BZ)
//! act_sram = p_act_sram_no_im2col / magnification   (IM2COL active)
//!          = p_act_sram_no_im2col                    (otherwise)
//! total    = array + wt_sram + act_sram + mcu + im2col
//! ```
//!
//! `U` is a weighted count of MACs, accumulators, operand registers and
//! muxes in which a gated MAC costs `gated_mac_cost` of an active one.
//! `act_bytes` is the activation register traffic per cycle, which for
//! STA-VDBB grows as the block occupancy shrinks; at the reference design it
//! equals `BZ / NNZ`.

use std::path::Path;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::sim::{ArrayMode, EventCounters, SimResult, StaConfig};
use crate::{Error, Result};

/// Reuse figures of one array, as exact rationals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReuseMetrics {
    pub macs_per_tpe: Ratio<u64>,
    pub accs_per_tpe: Ratio<u64>,
    pub oprs_per_tpe: Ratio<u64>,
    pub inter_tpe_reuse: Ratio<u64>,
    pub intra_tpe_reuse: Ratio<u64>,
    pub acc_reuse: Ratio<u64>,
}

fn r(n: usize) -> Ratio<u64> {
    Ratio::from_integer(n as u64)
}

/// Closed forms of the array trade-offs table. `run_nnz` is the block NNZ
/// `n` and only matters for STA-VDBB (defaults to `B`).
pub fn reuse_metrics(cfg: &StaConfig, run_nnz: Option<usize>) -> Result<ReuseMetrics> {
    cfg.validate()?;
    let (a, b, c, m, n) = (cfg.a, cfg.b, cfg.c, cfg.m, cfg.n);
    let out = match cfg.mode {
        ArrayMode::Sa => ReuseMetrics {
            macs_per_tpe: r(1),
            accs_per_tpe: r(1),
            oprs_per_tpe: r(2),
            inter_tpe_reuse: Ratio::new((m * n) as u64, (m + n) as u64),
            intra_tpe_reuse: Ratio::new(1, 2),
            acc_reuse: r(1),
        },
        ArrayMode::Sta => ReuseMetrics {
            macs_per_tpe: r(a * b * c),
            accs_per_tpe: r(a * c),
            oprs_per_tpe: r(b * (a + c)),
            inter_tpe_reuse: Ratio::new((a * m * c * n) as u64, (a * m + c * n) as u64),
            intra_tpe_reuse: Ratio::new((a * c) as u64, (a + c) as u64),
            acc_reuse: r(b),
        },
        ArrayMode::StaDbb => {
            let sb = cfg.sdp_width.unwrap_or(b);
            ReuseMetrics {
                macs_per_tpe: r(a * sb * c),
                accs_per_tpe: r(a * c),
                oprs_per_tpe: r(a * b + sb * c),
                inter_tpe_reuse: Ratio::new(
                    (a * sb * c * m * n) as u64,
                    (a * b * m + c * sb * n) as u64,
                ),
                intra_tpe_reuse: Ratio::new((a * sb * c) as u64, (a * b + sb * c) as u64),
                acc_reuse: r(sb),
            }
        }
        ArrayMode::StaVdbb => {
            let nn = run_nnz.unwrap_or(b);
            if nn == 0 || nn > b {
                return Err(Error::InvalidConfig(format!("run nnz {nn} outside 1..={b}")));
            }
            ReuseMetrics {
                macs_per_tpe: r(a * c),
                accs_per_tpe: r(a * c),
                oprs_per_tpe: r(a * b + nn * c),
                inter_tpe_reuse: Ratio::new(
                    (a * nn * c * m * n) as u64,
                    (a * b * m + c * nn * n) as u64,
                ),
                intra_tpe_reuse: Ratio::new((a * nn * c) as u64, (a * b + nn * c) as u64),
                acc_reuse: r(1),
            }
        }
    };
    if run_nnz.is_some() && cfg.mode != ArrayMode::StaVdbb {
        return Err(Error::ModeMismatch(format!("run nnz given to {} mode", cfg.mode)));
    }
    Ok(out)
}

/// The same figures measured from simulator counters. Requires an ungated
/// run so that every MAC-cycle is counted as active work.
pub fn counted_reuse(cfg: &StaConfig, res: &SimResult) -> Result<ReuseMetrics> {
    let ctr: &EventCounters = &res.counters;
    let steps = res.passes * res.k_steps * cfg.tpes() as u64;
    if steps == 0 || ctr.tpe_operand_bytes == 0 || ctr.edge_operand_bytes() == 0 {
        return Err(Error::DivisionByZero("simulation recorded no operand traffic"));
    }
    let macs = ctr.mac_cycles();
    let tpe_cycles = res.cycles_steady * cfg.tpes() as u64;
    let macs_per_tpe = Ratio::new(macs, tpe_cycles);
    let accs_per_tpe = Ratio::new(ctr.acc_writes, res.passes * cfg.tpes() as u64);
    Ok(ReuseMetrics {
        macs_per_tpe,
        accs_per_tpe,
        oprs_per_tpe: Ratio::new(ctr.tpe_operand_bytes, steps),
        inter_tpe_reuse: Ratio::new(macs, ctr.edge_operand_bytes()),
        intra_tpe_reuse: Ratio::new(macs, ctr.tpe_operand_bytes),
        acc_reuse: macs_per_tpe / accs_per_tpe,
    })
}

/// Relative cost of one hardware unit of each kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitWeights {
    pub mac: f64,
    pub acc: f64,
    pub opr: f64,
    pub mux: f64,
}

/// Hardware unit counts of a whole array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnitCounts {
    pub mac: f64,
    pub acc: f64,
    pub opr: f64,
    pub mux: f64,
}

impl UnitCounts {
    pub fn of(cfg: &StaConfig) -> Self {
        let (a, b, c) = (cfg.a as f64, cfg.b as f64, cfg.c as f64);
        let t = cfg.tpes() as f64;
        let mask = (cfg.b as f64 / 8.0).ceil();
        match cfg.mode {
            ArrayMode::Sa => Self { mac: t, acc: t, opr: 2.0 * t, mux: 0.0 },
            ArrayMode::Sta => Self {
                mac: a * b * c * t,
                acc: a * c * t,
                opr: b * (a + c) * t,
                mux: 0.0,
            },
            ArrayMode::StaDbb => {
                let sb = cfg.sdp_width.unwrap_or(cfg.b) as f64;
                Self {
                    mac: a * sb * c * t,
                    acc: a * c * t,
                    opr: (a * b + sb * c + c * mask) * t,
                    mux: a * sb * c * t,
                }
            }
            ArrayMode::StaVdbb => Self {
                mac: a * c * t,
                acc: a * c * t,
                opr: (a * b + c + c * mask) * t,
                mux: a * c * t,
            },
        }
    }

    fn weighted(&self, w: &UnitWeights, mac_factor: f64) -> f64 {
        w.mac * self.mac * mac_factor + w.acc * self.acc + w.opr * self.opr + w.mux * self.mux
    }
}

/// The operating point the reference anchors were measured at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub config: String,
    pub weight_nnz: usize,
    pub act_sparsity: f64,
    pub clock_ghz: f64,
    pub mcu_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostCoefficients {
    /// Array power at the reference point minus the activation-path term.
    pub p_array_base: f64,
    /// mW per unit of `BZ / NNZ` at the reference design; `None` until
    /// calibrated.
    pub p_act_path_slope: Option<f64>,
    pub p_wt_sram: f64,
    pub p_act_sram: f64,
    pub p_act_sram_no_im2col: f64,
    /// All MCUs of the reference design.
    pub p_mcu: f64,
    pub p_im2col: f64,
    pub area_array: f64,
    pub area_wt_sram: f64,
    pub area_act_sram: f64,
    pub area_mcu: f64,
    pub area_im2col: f64,
    /// Activation SRAM capacity multiplier for designs that hold lowered
    /// (duplicated) activations because they lack the IM2COL unit.
    pub act_sram_area_factor_no_im2col: f64,
    pub power_units: UnitWeights,
    pub area_units: UnitWeights,
    /// Cost of a gated MAC-cycle relative to an active one.
    pub gated_mac_cost: f64,
    /// Nominal MACs credited per physical MAC of a time-unrolled array.
    pub vdbb_mac_credit: f64,
    pub reference: ReferencePoint,
}

impl CostCoefficients {
    /// Component table of the published reference design with the slope
    /// fitted to the published TOPS/W sparsity sweep.
    pub fn reference() -> Self {
        let slope = anchor_slope();
        Self {
            p_array_base: 317.5 - slope * 8.0 / 3.0,
            p_act_path_slope: Some(slope),
            ..Self::uncalibrated_reference()
        }
    }

    /// Component table without a fitted activation-path slope.
    pub fn uncalibrated_reference() -> Self {
        Self {
            p_array_base: 317.5,
            p_act_path_slope: None,
            p_wt_sram: 78.5,
            p_act_sram: 31.0,
            p_act_sram_no_im2col: 93.0,
            p_mcu: 50.5,
            p_im2col: 10.0,
            area_array: 0.732,
            area_wt_sram: 0.54,
            area_act_sram: 2.16,
            area_mcu: 0.30,
            area_im2col: 0.01,
            act_sram_area_factor_no_im2col: 3.0,
            power_units: UnitWeights { mac: 1.0, acc: 0.5, opr: 0.5, mux: 0.1 },
            area_units: UnitWeights { mac: 1.0, acc: 0.8, opr: 0.2, mux: 0.15 },
            gated_mac_cost: 0.1,
            vdbb_mac_credit: 2.0,
            reference: ReferencePoint {
                config: "4x8x8_4x8_VDBB_IM2C".into(),
                weight_nnz: 3,
                act_sparsity: 0.5,
                clock_ghz: 1.0,
                mcu_count: 4,
            },
        }
    }

    pub fn slope(&self) -> Result<f64> {
        self.p_act_path_slope.ok_or_else(|| {
            Error::UncalibratedModel("activation-path slope has not been fitted".into())
        })
    }

    pub fn reference_config(&self) -> Result<StaConfig> {
        self.reference.config.parse()
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("p_array_base", self.p_array_base),
            ("p_wt_sram", self.p_wt_sram),
            ("p_act_sram", self.p_act_sram),
            ("p_act_sram_no_im2col", self.p_act_sram_no_im2col),
            ("p_mcu", self.p_mcu),
            ("p_im2col", self.p_im2col),
            ("area_array", self.area_array),
            ("area_wt_sram", self.area_wt_sram),
            ("area_act_sram", self.area_act_sram),
            ("area_mcu", self.area_mcu),
            ("area_im2col", self.area_im2col),
            ("act_sram_area_factor_no_im2col", self.act_sram_area_factor_no_im2col),
            ("gated_mac_cost", self.gated_mac_cost),
            ("vdbb_mac_credit", self.vdbb_mac_credit),
            ("p_act_path_slope", self.p_act_path_slope.unwrap_or(0.0)),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::NegativeCoefficient { name, value: v });
            }
        }
        if self.reference.mcu_count == 0 || self.reference.clock_ghz <= 0.0 {
            return Err(Error::Validation("reference MCU count and clock must be positive".into()));
        }
        self.reference_config()?;
        Ok(())
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let coeffs = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)?
        } else {
            Self::from_toml(&text)?
        };
        Ok(coeffs)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| {
            let (line, column) = e
                .span()
                .map(|s| line_col(text, s.start))
                .unwrap_or((0, 0));
            Error::Parse { line, column, message: e.message().to_string() }
        })?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("coefficients serialize")
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

/// Published TOPS/W of the reference design at NNZ = 4, 3, 2 and 1 of 8.
pub const REFERENCE_TOPS_PER_W: [(usize, f64); 4] = [(4, 16.8), (3, 21.9), (2, 31.3), (1, 55.7)];

/// Implied power (mW) of each published TOPS/W point: effective TOPS over
/// TOPS/W, where effective TOPS is `4 * 8 / nnz`. The 3/8 point uses the
/// component-table total.
pub fn reference_anchors() -> Vec<Anchor> {
    REFERENCE_TOPS_PER_W
        .iter()
        .map(|&(nnz, tpw)| Anchor {
            config: "4x8x8_4x8_VDBB_IM2C".into(),
            weight_nnz: nnz,
            act_sparsity: 0.5,
            tops_per_w: (nnz != 3).then_some(tpw),
            power_mw: (nnz == 3).then_some(487.5),
        })
        .collect()
}

fn anchor_slope() -> f64 {
    let pts: Vec<(f64, f64)> = reference_anchors()
        .iter()
        .map(|a| {
            let eff = 4.0 * 8.0 / a.weight_nnz as f64;
            let p = a.power_mw.unwrap_or_else(|| eff / a.tops_per_w.unwrap() * 1000.0);
            (8.0 / a.weight_nnz as f64, p)
        })
        .collect();
    least_squares(&pts).1
}

/// `(intercept, slope)` of the ordinary least-squares line.
fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

/// Conditions a design is evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    /// Non-zeros per weight block; `BZ` means dense weights.
    pub weight_nnz: usize,
    pub act_sparsity: f64,
    /// Whether an IM2COL unit, if fitted, is in use.
    pub im2col_enabled: bool,
    /// Activation-SRAM read reduction while the unit is in use.
    pub magnification: f64,
}

impl OperatingPoint {
    pub fn new(weight_nnz: usize, act_sparsity: f64, im2col_enabled: bool) -> Self {
        Self { weight_nnz, act_sparsity, im2col_enabled, magnification: 3.0 }
    }

    pub fn with_magnification(mut self, m: f64) -> Self {
        self.magnification = m;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerBreakdown {
    pub array_core: f64,
    pub array_act_path: f64,
    pub array: f64,
    pub wt_sram: f64,
    pub act_sram: f64,
    pub mcu: f64,
    pub im2col: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AreaBreakdown {
    pub array: f64,
    pub wt_sram: f64,
    pub act_sram: f64,
    pub mcu: f64,
    pub im2col: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub config: String,
    pub power_mw: PowerBreakdown,
    pub area_mm2: AreaBreakdown,
    pub physical_macs: usize,
    /// Unrounded `2 * nominal MACs * clock`.
    pub nominal_tops_exact: f64,
    /// Nearest power-of-two throughput class.
    pub nominal_tops: f64,
    pub nominal_rounded: bool,
    pub effective_tops: f64,
    pub tops_per_w: f64,
    pub tops_per_mm2: f64,
    pub mcu_count: usize,
    pub weight_nnz: usize,
    pub act_sparsity: f64,
}

impl CostReport {
    /// Power per effective TOPS (mW/TOPS), the iso-throughput power metric.
    pub fn power_per_tops(&self) -> f64 {
        self.power_mw.total / self.effective_tops
    }

    /// Area per effective TOPS (mm^2/TOPS).
    pub fn area_per_tops(&self) -> f64 {
        self.area_mm2.total / self.effective_tops
    }
}

/// MACs counted towards the nominal rating.
pub fn nominal_macs(cfg: &StaConfig, coeffs: &CostCoefficients) -> f64 {
    let phys = cfg.physical_macs() as f64;
    if cfg.mode == ArrayMode::StaVdbb {
        phys * coeffs.vdbb_mac_credit
    } else {
        phys
    }
}

/// `(exact, class)` nominal TOPS; the class is the nearest power of two.
pub fn nominal_tops(cfg: &StaConfig, coeffs: &CostCoefficients) -> (f64, f64) {
    let exact = 2.0 * nominal_macs(cfg, coeffs) * cfg.clock_ghz / 1000.0;
    (exact, 2f64.powi(exact.log2().round() as i32))
}

/// Weight-sparsity speedup over the nominal rate.
pub fn sparsity_speedup(cfg: &StaConfig, weight_nnz: usize) -> Ratio<u64> {
    let bz = cfg.b as u64;
    let n = weight_nnz as u64;
    match cfg.mode {
        ArrayMode::Sa | ArrayMode::Sta => Ratio::from_integer(1),
        ArrayMode::StaVdbb => Ratio::new(bz, n),
        ArrayMode::StaDbb => {
            let sb = cfg.sdp_width.unwrap_or(cfg.b) as u64;
            Ratio::new(bz, sb * n.div_ceil(sb))
        }
    }
}

fn mcu_count(nominal_class: f64) -> usize {
    if nominal_class <= 2.0 {
        2
    } else if nominal_class <= 4.0 {
        4
    } else {
        8
    }
}

/// Activation register bytes moved per cycle.
fn act_path_bytes(cfg: &StaConfig, weight_nnz: usize) -> f64 {
    let t = cfg.tpes() as f64;
    match cfg.mode {
        ArrayMode::Sa => t,
        ArrayMode::Sta | ArrayMode::StaDbb => (cfg.a * cfg.b) as f64 * t,
        ArrayMode::StaVdbb => (cfg.a * cfg.b) as f64 * t / weight_nnz as f64,
    }
}

fn gate_factor(cfg: &StaConfig, coeffs: &CostCoefficients, act_sparsity: f64) -> f64 {
    if cfg.mode.supports_act_gating() {
        1.0 - act_sparsity * (1.0 - coeffs.gated_mac_cost)
    } else {
        1.0
    }
}

pub fn estimate_cost(
    cfg: &StaConfig,
    coeffs: &CostCoefficients,
    weight_nnz: usize,
    act_sparsity: f64,
    im2col_enabled: bool,
) -> Result<CostReport> {
    estimate_cost_at(cfg, coeffs, &OperatingPoint::new(weight_nnz, act_sparsity, im2col_enabled))
}

pub fn estimate_cost_at(
    cfg: &StaConfig,
    coeffs: &CostCoefficients,
    op: &OperatingPoint,
) -> Result<CostReport> {
    cfg.validate()?;
    let slope = coeffs.slope()?;
    let refc = coeffs.reference_config()?;
    let max_nnz = if cfg.mode.is_sparse() { cfg.b } else { 16 };
    if op.weight_nnz == 0 || op.weight_nnz > max_nnz {
        return Err(Error::Validation(format!(
            "weight nnz {} outside 1..={max_nnz}",
            op.weight_nnz
        )));
    }
    if !(0.0..=1.0).contains(&op.act_sparsity) {
        return Err(Error::Validation(format!(
            "activation sparsity {} outside [0, 1]",
            op.act_sparsity
        )));
    }
    if !(op.magnification >= 1.0) {
        return Err(Error::Validation(format!("magnification {} below 1", op.magnification)));
    }
    let clock = cfg.clock_ghz / coeffs.reference.clock_ghz;

    let pu = &coeffs.power_units;
    let u_ref = UnitCounts::of(&refc)
        .weighted(pu, gate_factor(&refc, coeffs, coeffs.reference.act_sparsity));
    let u = UnitCounts::of(cfg).weighted(pu, gate_factor(cfg, coeffs, op.act_sparsity));
    let array_core = coeffs.p_array_base * u / u_ref * clock;
    let ref_bytes = act_path_bytes(&refc, refc.b);
    let array_act_path = slope * act_path_bytes(cfg, op.weight_nnz) / ref_bytes * clock;

    let im2col_active = cfg.im2col && op.im2col_enabled;
    let act_sram = if im2col_active {
        coeffs.p_act_sram_no_im2col / op.magnification
    } else {
        coeffs.p_act_sram_no_im2col
    } * clock;
    let (nominal_exact, nominal_class) = nominal_tops(cfg, coeffs);
    let mcus = mcu_count(nominal_class);
    let mcu_scale = mcus as f64 / coeffs.reference.mcu_count as f64;
    let power = {
        let array = array_core + array_act_path;
        let wt_sram = coeffs.p_wt_sram * clock;
        let mcu = coeffs.p_mcu * mcu_scale * clock;
        let im2col = if im2col_active { coeffs.p_im2col * clock } else { 0.0 };
        PowerBreakdown {
            array_core,
            array_act_path,
            array,
            wt_sram,
            act_sram,
            mcu,
            im2col,
            total: array + wt_sram + act_sram + mcu + im2col,
        }
    };

    let au = &coeffs.area_units;
    let area = {
        let array = coeffs.area_array * UnitCounts::of(cfg).weighted(au, 1.0)
            / UnitCounts::of(&refc).weighted(au, 1.0);
        let act_sram = if cfg.im2col {
            coeffs.area_act_sram
        } else {
            coeffs.area_act_sram * coeffs.act_sram_area_factor_no_im2col
        };
        let mcu = coeffs.area_mcu * mcu_scale;
        let im2col = if cfg.im2col { coeffs.area_im2col } else { 0.0 };
        AreaBreakdown {
            array,
            wt_sram: coeffs.area_wt_sram,
            act_sram,
            mcu,
            im2col,
            total: array + coeffs.area_wt_sram + act_sram + mcu + im2col,
        }
    };

    let speedup = sparsity_speedup(cfg, op.weight_nnz);
    let effective_tops = nominal_class * *speedup.numer() as f64 / *speedup.denom() as f64;
    Ok(CostReport {
        config: cfg.to_string(),
        physical_macs: cfg.physical_macs(),
        nominal_tops_exact: nominal_exact,
        nominal_tops: nominal_class,
        nominal_rounded: (nominal_exact - nominal_class).abs() > 1e-12,
        effective_tops,
        tops_per_w: effective_tops / (power.total / 1000.0),
        tops_per_mm2: effective_tops / area.total,
        mcu_count: mcus,
        weight_nnz: op.weight_nnz,
        act_sparsity: op.act_sparsity,
        power_mw: power,
        area_mm2: area,
    })
}

/// A measured point used to fit the activation-path slope. Exactly one of
/// `tops_per_w` and `power_mw` is expected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub config: String,
    pub weight_nnz: usize,
    pub act_sparsity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tops_per_w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_mw: Option<f64>,
}

/// Reads a JSON array of anchors.
pub fn load_anchors(path: &Path) -> Result<Vec<Anchor>> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Residual {
    pub weight_nnz: usize,
    pub measured_power_mw: f64,
    pub predicted_power_mw: f64,
    pub measured_tops_per_w: f64,
    pub predicted_tops_per_w: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub coeffs: CostCoefficients,
    /// Intercept of the free least-squares line (for reference only; the
    /// array base is pinned by the component table).
    pub fit_intercept: f64,
    pub residuals: Vec<Residual>,
}

/// Fits the activation-path slope to `anchors` by least squares and pins
/// `p_array_base` so that the reference operating point reproduces the
/// component table of `table` exactly. All anchors must share one design.
pub fn calibrate(table: &CostCoefficients, anchors: &[Anchor]) -> Result<Calibration> {
    let first = anchors.first().ok_or(Error::InsufficientAnchors { needed: 2, got: 0 })?;
    let cfg: StaConfig = first.config.parse()?;
    if anchors.iter().any(|a| a.config.parse::<StaConfig>().ok() != Some(cfg)) {
        return Err(Error::InvalidConfig("anchors must share a single design".into()));
    }
    let refc = table.reference_config()?;
    let ref_bytes = act_path_bytes(&refc, refc.b);
    let probe = CostCoefficients {
        p_act_path_slope: Some(0.0),
        ..table.clone()
    };
    let mut pts = Vec::with_capacity(anchors.len());
    for a in anchors {
        let op = OperatingPoint::new(a.weight_nnz, a.act_sparsity, true);
        let eff = estimate_cost_at(&cfg, &probe, &op)?.effective_tops;
        let p = match (a.power_mw, a.tops_per_w) {
            (Some(p), _) => p,
            (None, Some(t)) if t > 0.0 => eff / t * 1000.0,
            _ => {
                return Err(Error::Validation(format!(
                    "anchor at nnz {} has neither power nor TOPS/W",
                    a.weight_nnz
                )))
            }
        };
        pts.push((act_path_bytes(&cfg, a.weight_nnz) / ref_bytes, p, eff, a.weight_nnz));
    }
    let mut xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 2 {
        return Err(Error::InsufficientAnchors { needed: 2, got: xs.len() });
    }
    let xy: Vec<(f64, f64)> = pts.iter().map(|p| (p.0, p.1)).collect();
    let (intercept, mut slope) = least_squares(&xy);
    if slope.abs() < 1e-9 {
        slope = 0.0;
    }
    if slope < 0.0 {
        return Err(Error::NegativeCoefficient { name: "p_act_path_slope", value: slope });
    }
    let x_ref = act_path_bytes(&refc, table.reference.weight_nnz) / ref_bytes;
    let array_ref = table.p_array_base + table.p_act_path_slope.unwrap_or(0.0) * x_ref;
    let base = array_ref - slope * x_ref;
    if base < 0.0 {
        return Err(Error::NegativeCoefficient { name: "p_array_base", value: base });
    }
    let coeffs = CostCoefficients {
        p_array_base: base,
        p_act_path_slope: Some(slope),
        ..table.clone()
    };
    let mut residuals = Vec::with_capacity(pts.len());
    for (a, &(_, measured, eff, nnz)) in anchors.iter().zip(&pts) {
        let rep = estimate_cost_at(&cfg, &coeffs, &OperatingPoint::new(nnz, a.act_sparsity, true))?;
        residuals.push(Residual {
            weight_nnz: nnz,
            measured_power_mw: measured,
            predicted_power_mw: rep.power_mw.total,
            measured_tops_per_w: eff / measured * 1000.0,
            predicted_tops_per_w: rep.tops_per_w,
            relative_error: (rep.power_mw.total - measured) / measured,
        });
    }
    Ok(Calibration { coeffs, fit_intercept: intercept, residuals })
}

/// Baseline over optimised ratios of power and area per effective TOPS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Comparison {
    pub power_ratio: f64,
    pub area_ratio: f64,
}

pub fn baseline_comparison(opt: &CostReport, baseline: &CostReport) -> Comparison {
    Comparison {
        power_ratio: baseline.power_per_tops() / opt.power_per_tops(),
        area_ratio: baseline.area_per_tops() / opt.area_per_tops(),
    }
}

/// Evaluates both designs at `op` (the baseline ignores weight sparsity it
/// cannot exploit) and compares them.
pub fn compare_configs(
    opt: &StaConfig,
    baseline: &StaConfig,
    coeffs: &CostCoefficients,
    op: &OperatingPoint,
) -> Result<Comparison> {
    let clamp = |cfg: &StaConfig| OperatingPoint {
        weight_nnz: if cfg.mode.is_sparse() { op.weight_nnz.min(cfg.b) } else { op.weight_nnz },
        ..*op
    };
    let o = estimate_cost_at(opt, coeffs, &clamp(opt))?;
    let b = estimate_cost_at(baseline, coeffs, &clamp(baseline))?;
    Ok(baseline_comparison(&o, &b))
}
