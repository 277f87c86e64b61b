// SPDX-License-Identifier: Apache-2.0
//! `vdbb` command-line tool.
//!
//! Exit codes: 0 ok, 2 data violation, 3 self-check failure, 4 empty result,
//! 64 usage error.

mod manifest;
mod sweep;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use vdbb::cost::{
    calibrate, estimate_cost_at, load_anchors, reuse_metrics, CostCoefficients, OperatingPoint,
};
use vdbb::dbb::{
    check_dbb, compression_ratio, encode_matrix, prune_to_dbb, read_dbb, write_dbb, BlockAxis,
    DbbFormat, DbbMatrix,
};
use vdbb::dse::{layer_sweep, point_for, CycleSource};
use vdbb::im2col_unit::{bypass, expected_magnification, magnification, stream_feature_map};
use vdbb::sim::{
    effective_speedup, simulate_gemm, simulate_gemm_traced, utilization, ArrayMode, SimResult,
    StaConfig, WeightOperand, TRACE_CSV_HEADER,
};
use vdbb::tensor::{gemm_ref, im2col_lower, read_matrix, write_matrix, ConvGeometry, FeatureMap, Matrix};
use vdbb::workload::load_workload;

use manifest::{sha256_hex, RunManifest};

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    SelfCheck(String),
    Empty(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 64,
            Failure::Data(_) => 2,
            Failure::SelfCheck(_) => 3,
            Failure::Empty(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::SelfCheck(m) | Failure::Empty(m) => m,
        }
    }
}

impl From<vdbb::Error> for Failure {
    fn from(e: vdbb::Error) -> Self {
        match e {
            vdbb::Error::EmptySpace(_) => Failure::Empty(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, Failure>;

#[derive(Parser)]
#[command(name = "vdbb", version, about = "DBB codec, systolic tensor array simulator and accelerator cost model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a dense int8 matrix into DBB blocks.
    Encode(EncodeArgs),
    /// Expand a DBB file back into a dense matrix.
    Decode(DecodeArgs),
    /// Keep the largest-magnitude NNZ values of every block.
    Prune(PruneArgs),
    /// Report blocks that exceed the density bound.
    Check(CheckArgs),
    /// Run a GEMM on the cycle-level array model.
    Simulate(SimulateArgs),
    /// Stream a feature map through the IM2COL unit.
    Im2colBench(BenchArgs),
    /// Enumerate, cost and rank a design space.
    Sweep(sweep::SweepArgs),
    /// Fit the activation-path coefficient to measured anchors.
    Calibrate(CalibrateArgs),
    /// Cost one design, optionally over a workload.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Rows,
    Cols,
}

impl From<AxisArg> for BlockAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Rows => BlockAxis::Rows,
            AxisArg::Cols => BlockAxis::Cols,
        }
    }
}

fn parse_bz(s: &str) -> Result<usize, String> {
    match s.parse() {
        Ok(b @ (2 | 4 | 8 | 16)) => Ok(b),
        _ => Err(format!("block size must be 2, 4, 8 or 16, got '{s}'")),
    }
}

#[derive(Args)]
struct FormatArgs {
    /// Block size.
    #[arg(long, value_parser = parse_bz)]
    bz: usize,
    /// Maximum non-zeros per block.
    #[arg(long)]
    nnz: usize,
    /// Blocks run down columns (rows) or along rows (cols).
    #[arg(long, value_enum, default_value = "rows")]
    axis: AxisArg,
}

impl FormatArgs {
    fn format(&self) -> CliResult<DbbFormat> {
        if self.nnz == 0 || self.nnz > self.bz {
            return Err(Failure::Usage(format!("--nnz must be in 1..={}", self.bz)));
        }
        DbbFormat::new(self.bz, self.nnz).map_err(|e| Failure::Usage(e.to_string()))
    }
}

#[derive(Args)]
struct EncodeArgs {
    input: PathBuf,
    #[command(flatten)]
    fmt: FormatArgs,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct PruneArgs {
    input: PathBuf,
    #[command(flatten)]
    fmt: FormatArgs,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    input: PathBuf,
    #[command(flatten)]
    fmt: FormatArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Sa,
    Sta,
    Dbb,
    Vdbb,
}

/// `MxK` or `MxKxN`.
#[derive(Clone, Copy, Debug)]
struct Dims(usize, usize, Option<usize>);

fn parse_dims(s: &str) -> Result<Dims, String> {
    let v: Vec<usize> = s
        .split(['x', 'X', '×'])
        .map(|d| d.parse().map_err(|_| format!("bad dimension list '{s}'")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [m, k] if m > 0 && k > 0 => Ok(Dims(m, k, None)),
        [m, k, n] if m > 0 && k > 0 && n > 0 => Ok(Dims(m, k, Some(n))),
        _ => Err(format!("expected MxK or MxKxN, got '{s}'")),
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Array configuration, e.g. 4x8x8_4x8_VDBB_IM2C.
    #[arg(long)]
    config: String,
    /// Override the mode implied by the configuration string.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Block NNZ the sparse array runs at (random weights are pruned to it).
    #[arg(long)]
    nnz: Option<usize>,
    /// Activation matrix file (int8 VMAT).
    #[arg(long, conflicts_with = "random")]
    act: Option<PathBuf>,
    /// Weight matrix file (int8 VMAT or DBB1).
    #[arg(long, requires = "act")]
    wt: Option<PathBuf>,
    /// Random operands of the given shape; N defaults to 16.
    #[arg(long, value_parser = parse_dims)]
    random: Option<Dims>,
    /// Fraction of zero activations in random operands.
    #[arg(long, default_value_t = 0.0)]
    act_sparsity: f64,
    #[arg(long)]
    gating: bool,
    #[arg(long)]
    im2col: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also run this many random GEMMs against the reference.
    #[arg(long)]
    self_check: Option<usize>,
    /// Per-TPE event trace (CSV).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the JSON result here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 0)]
    pad: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Component table (TOML or JSON); any slope in it is replaced.
    #[arg(long)]
    table: PathBuf,
    /// JSON list of anchors.
    #[arg(long)]
    anchors: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    config: String,
    /// Coefficient file; defaults to $VDBB_COEFFS, then built-in values.
    #[arg(long)]
    coeffs: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    nnz: usize,
    #[arg(long, default_value_t = 0.5)]
    act_sparsity: f64,
    /// Keep a fitted IM2COL unit idle.
    #[arg(long)]
    im2col_off: bool,
    /// Also cost this workload layer by layer.
    #[arg(long)]
    workload: Option<PathBuf>,
    /// Design the workload power is compared against.
    #[arg(long, default_value = "1x1x1_32x64")]
    baseline: String,
}

pub fn parse_config(s: &str) -> CliResult<StaConfig> {
    s.parse::<StaConfig>()
        .map_err(|e| Failure::Usage(format!("config '{s}': {e}")))
}

/// Gating follows what the mode supports.
pub fn parse_design(s: &str) -> CliResult<StaConfig> {
    let cfg = parse_config(s)?;
    Ok(cfg.with_gating(cfg.mode.supports_act_gating()))
}

pub fn load_coeffs(flag: Option<&Path>, manifest: &mut RunManifest) -> CliResult<CostCoefficients> {
    let path = flag
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os("VDBB_COEFFS").map(PathBuf::from));
    match path {
        Some(p) => {
            manifest.input(&p)?;
            Ok(CostCoefficients::load(&p)?)
        }
        None => Ok(CostCoefficients::reference()),
    }
}

fn read_vmat(path: &Path) -> CliResult<Matrix<i8>> {
    Ok(read_matrix::<i8, _>(BufReader::new(File::open(path)?))?)
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> vdbb::Result<()>) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn encode(args: EncodeArgs) -> CliResult<()> {
    let fmt = args.fmt.format()?;
    let mut man = RunManifest::new(0);
    man.input(&args.input)?;
    let dense = read_vmat(&args.input)?;
    let enc = encode_matrix(&dense, fmt, args.fmt.axis.into())?;
    write_file(&args.output, |w| write_dbb(&enc, w))?;
    man.write_beside(&args.output)?;
    let r = compression_ratio(fmt);
    println!(
        "ratio={:.3} blocks={} pad={} bits={}",
        *r.numer() as f64 / *r.denom() as f64,
        enc.blocks().len(),
        enc.pad_count(),
        enc.encoded_bits()
    );
    Ok(())
}

fn decode(args: DecodeArgs) -> CliResult<()> {
    let mut man = RunManifest::new(0);
    man.input(&args.input)?;
    let enc = read_dbb(BufReader::new(File::open(&args.input)?))?;
    let dense = enc.decode()?;
    write_file(&args.output, |w| write_matrix(&dense, w))?;
    man.write_beside(&args.output)?;
    println!("rows={} cols={} format={}", dense.rows(), dense.cols(), enc.format());
    Ok(())
}

fn magnitude(m: &Matrix<i8>) -> u64 {
    m.data().iter().map(|&v| (v as i32).unsigned_abs() as u64).sum()
}

fn prune(args: PruneArgs) -> CliResult<()> {
    let fmt = args.fmt.format()?;
    let mut man = RunManifest::new(0);
    man.input(&args.input)?;
    let dense = read_vmat(&args.input)?;
    let pruned = prune_to_dbb(&dense, fmt, args.fmt.axis.into());
    write_file(&args.output, |w| write_matrix(&pruned, w))?;
    man.write_beside(&args.output)?;
    let total = magnitude(&dense);
    let kept = magnitude(&pruned);
    let frac = if total == 0 { 1.0 } else { kept as f64 / total as f64 };
    println!(
        "retained={frac:.6} kept_magnitude={kept} total_magnitude={total} nonzeros={}",
        pruned.count_nonzero()
    );
    Ok(())
}

fn check(args: CheckArgs) -> CliResult<()> {
    let fmt = args.fmt.format()?;
    let dense = read_vmat(&args.input)?;
    let v = check_dbb(&dense, fmt, args.fmt.axis.into());
    if v.is_empty() {
        println!("ok: every block within {fmt}");
        return Ok(());
    }
    for x in v.iter().take(20) {
        println!("block {}: {} non-zeros > {}", x.block, x.count, fmt.nnz());
    }
    Err(Failure::Data(format!("{} blocks exceed {fmt}", v.len())))
}

fn with_mode(cfg: StaConfig, mode: Option<ModeArg>) -> CliResult<StaConfig> {
    let Some(mode) = mode else { return Ok(cfg) };
    let (a, b, c, m, n) = (cfg.a, cfg.b, cfg.c, cfg.m, cfg.n);
    let out = match mode {
        ModeArg::Sa if (a, b, c) == (1, 1, 1) => StaConfig::sa(m, n),
        ModeArg::Sa => return Err(Failure::Usage("SA mode needs a 1x1x1 TPE".into())),
        ModeArg::Sta => StaConfig::sta(a, b, c, m, n),
        ModeArg::Dbb => StaConfig::dbb(a, b, c, m, n, (b / 2).max(1))
            .map_err(|e| Failure::Usage(e.to_string()))?,
        ModeArg::Vdbb => StaConfig::vdbb(a, b, c, m, n).map_err(|e| Failure::Usage(e.to_string()))?,
    };
    Ok(out.with_im2col(cfg.im2col))
}

fn random_i8(rng: &mut ChaCha8Rng, rows: usize, cols: usize, zero_prob: f64) -> Matrix<i8> {
    Matrix::from_fn(rows, cols, |_, _| {
        if rng.gen_bool(zero_prob) {
            0
        } else {
            rng.gen_range(-127..=127)
        }
    })
}

enum Weights {
    Dense(Matrix<i8>),
    Blocks(DbbMatrix),
}

impl Weights {
    fn operand(&self) -> WeightOperand<'_> {
        match self {
            Weights::Dense(m) => m.into(),
            Weights::Blocks(d) => d.into(),
        }
    }

    fn dense(&self) -> CliResult<Matrix<i8>> {
        match self {
            Weights::Dense(m) => Ok(m.clone()),
            Weights::Blocks(d) => Ok(d.decode()?),
        }
    }
}

fn default_nnz(cfg: &StaConfig) -> usize {
    match cfg.mode {
        ArrayMode::StaDbb => cfg.sdp_width.unwrap_or(cfg.b),
        _ => (cfg.b / 2).max(1),
    }
}

fn random_weights(cfg: &StaConfig, rng: &mut ChaCha8Rng, k: usize, n: usize, nnz: usize) -> CliResult<Weights> {
    let dense = random_i8(rng, k, n, 0.0);
    if !cfg.mode.is_sparse() {
        return Ok(Weights::Dense(dense));
    }
    let fmt = DbbFormat::new(cfg.b, nnz).map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(Weights::Blocks(encode_matrix(&prune_to_dbb(&dense, fmt, BlockAxis::Rows), fmt, BlockAxis::Rows)?))
}

fn load_weights(cfg: &StaConfig, path: &Path) -> CliResult<Weights> {
    let mut magic = [0u8; 4];
    File::open(path)?.read_exact(&mut magic)?;
    if &magic == b"DBB1" {
        let d = read_dbb(BufReader::new(File::open(path)?))?;
        if !cfg.mode.is_sparse() {
            return Ok(Weights::Dense(d.decode()?));
        }
        return Ok(Weights::Blocks(d));
    }
    let dense = read_vmat(path)?;
    if cfg.mode.is_sparse() {
        let fmt = DbbFormat::new(cfg.b, cfg.b)?;
        return Ok(Weights::Blocks(encode_matrix(&dense, fmt, BlockAxis::Rows)?));
    }
    Ok(Weights::Dense(dense))
}

fn sim_json(cfg: &StaConfig, res: &SimResult, run_nnz: Option<usize>) -> serde_json::Value {
    let bytes: Vec<u8> = res.output.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    json!({
        "config": cfg.to_string(),
        "mode": cfg.mode,
        "gating": cfg.act_clock_gating,
        "gemm": [res.gemm.0, res.gemm.1, res.gemm.2],
        "run_nnz": run_nnz,
        "output_sha256": sha256_hex(&bytes),
        "cycles_total": res.cycles_total,
        "cycles_fill": res.cycles_fill,
        "cycles_steady": res.cycles_steady,
        "cycles_drain": res.cycles_drain,
        "passes": res.passes,
        "k_steps": res.k_steps,
        "occupancy": res.occupancy,
        "utilization": utilization(res, cfg),
        "effective_speedup": effective_speedup(res, cfg),
        "counters": res.counters,
    })
}

fn self_check(cfg: &StaConfig, cases: usize, seed: u64) -> CliResult<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e1f_c4ec);
    for i in 0..cases {
        let (m, k, n) = (rng.gen_range(1..=24), rng.gen_range(1..=48), rng.gen_range(1..=24));
        let zp = rng.gen_range(0.0..0.6);
        let act = random_i8(&mut rng, m, k, zp);
        let nnz = rng.gen_range(1..=cfg.b.max(1));
        let nnz = if cfg.mode == ArrayMode::StaDbb { nnz.min(default_nnz(cfg)) } else { nnz };
        let w = random_weights(cfg, &mut rng, k, n, nnz)?;
        let run = (cfg.mode == ArrayMode::StaVdbb).then_some(nnz);
        let res = simulate_gemm(cfg, &act, w.operand(), run)?;
        if res.output != gemm_ref(&act, &w.dense()?)? {
            return Err(Failure::SelfCheck(format!("case {i} ({m}x{k}x{n}, nnz {nnz}) differs from reference")));
        }
    }
    Ok(cases)
}

fn simulate(args: SimulateArgs) -> CliResult<()> {
    let cfg = with_mode(parse_config(&args.config)?, args.mode)?;
    let cfg = cfg.with_gating(args.gating).with_im2col(cfg.im2col || args.im2col);
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if !(0.0..=1.0).contains(&args.act_sparsity) {
        return Err(Failure::Usage("--act-sparsity must be in [0, 1]".into()));
    }
    if let Some(n) = args.nnz {
        if n == 0 || n > cfg.b {
            return Err(Failure::Usage(format!("--nnz must be in 1..={}", cfg.b)));
        }
    }
    let mut man = RunManifest::new(args.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (act, wt) = match (&args.act, &args.wt, args.random) {
        (Some(a), Some(w), _) => {
            man.input(a)?;
            man.input(w)?;
            (read_vmat(a)?, load_weights(&cfg, w)?)
        }
        (None, None, Some(Dims(m, k, n))) => {
            let act = random_i8(&mut rng, m, k, args.act_sparsity);
            let nnz = args.nnz.unwrap_or_else(|| default_nnz(&cfg));
            let w = random_weights(&cfg, &mut rng, k, n.unwrap_or(16), nnz)?;
            (act, w)
        }
        _ => return Err(Failure::Usage("give --act and --wt, or --random MxK[xN]".into())),
    };
    let run_nnz = match (&wt, cfg.mode) {
        (Weights::Blocks(d), ArrayMode::StaVdbb) => Some(args.nnz.unwrap_or(d.format().nnz())),
        _ => None,
    };
    let res = if args.trace.is_some() {
        simulate_gemm_traced(&cfg, &act, wt.operand(), run_nnz)?
    } else {
        simulate_gemm(&cfg, &act, wt.operand(), run_nnz)?
    };
    if res.output != gemm_ref(&act, &wt.dense()?)? {
        return Err(Failure::SelfCheck("simulator output differs from reference GEMM".into()));
    }
    if let Some(path) = &args.trace {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{TRACE_CSV_HEADER}")?;
        for ev in res.trace.iter().flatten() {
            writeln!(w, "{}", ev.csv_line())?;
        }
        w.flush()?;
        man.output(path, None)?;
    }
    let mut out = sim_json(&cfg, &res, run_nnz);
    out["verified"] = json!(true);
    if let Some(cases) = args.self_check {
        out["self_check_cases"] = json!(self_check(&cfg, cases, args.seed)?);
    }
    emit(out, man, args.output.as_deref())
}

fn emit(mut out: serde_json::Value, mut man: RunManifest, path: Option<&Path>) -> CliResult<()> {
    match path {
        Some(p) => {
            std::fs::write(p, serde_json::to_string_pretty(&out).unwrap() + "\n")?;
            man.write_beside(p)?;
        }
        None => {
            out["manifest"] = serde_json::to_value(&man).unwrap();
            print_json(&out)?;
        }
    }
    Ok(())
}

/// Prints pretty JSON; a closed pipe is not an error.
fn print_json(v: &serde_json::Value) -> CliResult<()> {
    let mut w = std::io::stdout().lock();
    match writeln!(w, "{}", serde_json::to_string_pretty(v).unwrap()).and_then(|_| w.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn im2col_bench(args: BenchArgs) -> CliResult<()> {
    let geom = ConvGeometry::new(args.kernel, args.stride, args.pad);
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    if args.height == 0 || args.width == 0 || args.channels == 0 {
        return Err(Failure::Usage("feature map dimensions must be positive".into()));
    }
    let fm = FeatureMap::from_fn(args.height, args.width, args.channels, |_, _, _| rng.gen_range(-127..=127));
    let (_, handled) = expected_magnification(args.kernel, args.stride, true);
    let man = RunManifest::new(args.seed);
    let (res, matches) = if handled {
        let res = stream_feature_map(&fm, geom, true)?;
        let low = im2col_lower(&fm, geom)?;
        let ow = geom.output_len(args.width).unwrap_or(1);
        let mut got: Vec<(usize, usize, i8)> = res
            .stream
            .iter()
            .map(|d| (d.out_y * ow + d.out_x, d.lowered_col(3, args.channels), d.value))
            .collect();
        got.sort_unstable();
        let mut want: Vec<(usize, usize, i8)> = (0..low.rows())
            .flat_map(|r| (0..low.cols()).map(move |c| (r, c)))
            .map(|(r, c)| (r, c, low.get(r, c)))
            .collect();
        want.sort_unstable();
        (res, got == want)
    } else {
        im2col_lower(&fm, geom)?;
        (bypass(&fm), true)
    };
    let out = json!({
        "height": args.height,
        "width": args.width,
        "channels": args.channels,
        "kernel": args.kernel,
        "stride": args.stride,
        "pad": args.pad,
        "bypassed": res.bypassed,
        "sram_read_bytes": res.sram_read_bytes,
        "delivered_bytes": res.delivered_bytes,
        "cycles": res.cycles,
        "phases": res.phases,
        "interior_phases": res.interior_phases,
        "magnification": magnification(&res)?,
        "matches_software_lowering": matches,
    });
    if !matches {
        print_json(&out)?;
        return Err(Failure::SelfCheck("IM2COL stream differs from software lowering".into()));
    }
    emit(out, man, None)
}

fn calibrate_cmd(args: CalibrateArgs) -> CliResult<()> {
    let mut man = RunManifest::new(0);
    man.input(&args.table)?;
    man.input(&args.anchors)?;
    let table = CostCoefficients::load(&args.table)?;
    let anchors = load_anchors(&args.anchors)?;
    let cal = calibrate(&table, &anchors)?;
    std::fs::write(&args.output, cal.coeffs.to_toml())?;
    man.write_beside(&args.output)?;
    let out = json!({
        "p_act_path_slope": cal.coeffs.p_act_path_slope,
        "p_array_base": cal.coeffs.p_array_base,
        "fit_intercept": cal.fit_intercept,
        "residuals": cal.residuals,
    });
    print_json(&out)?;
    Ok(())
}

fn ratio_str(r: num_rational::Ratio<u64>) -> String {
    r.to_string()
}

fn report(args: ReportArgs) -> CliResult<()> {
    let cfg = parse_design(&args.config)?;
    let mut man = RunManifest::new(0);
    let coeffs = load_coeffs(args.coeffs.as_deref(), &mut man)?;
    if !(0.0..=1.0).contains(&args.act_sparsity) {
        return Err(Failure::Usage("--act-sparsity must be in [0, 1]".into()));
    }
    let op = point_for(&cfg, &OperatingPoint::new(args.nnz, args.act_sparsity, !args.im2col_off));
    let rep = estimate_cost_at(&cfg, &coeffs, &op)?;
    let run = (cfg.mode == ArrayMode::StaVdbb).then_some(op.weight_nnz);
    let reuse = reuse_metrics(&cfg, run)?;
    let mut out = json!({
        "report": rep,
        "reuse": {
            "macs_per_tpe": ratio_str(reuse.macs_per_tpe),
            "accs_per_tpe": ratio_str(reuse.accs_per_tpe),
            "oprs_per_tpe": ratio_str(reuse.oprs_per_tpe),
            "inter_tpe_reuse": ratio_str(reuse.inter_tpe_reuse),
            "intra_tpe_reuse": ratio_str(reuse.intra_tpe_reuse),
            "acc_reuse": ratio_str(reuse.acc_reuse),
        },
    });
    if let Some(path) = &args.workload {
        man.input(path)?;
        let w = load_workload(path)?;
        let base = parse_design(&args.baseline)?;
        let model = layer_sweep(&cfg, &coeffs, &w, CycleSource::Analytic)?;
        let base_model = layer_sweep(&base, &coeffs, &w, CycleSource::Analytic)?;
        out["model"] = json!({
            "name": model.model,
            "total_cycles": model.total_cycles,
            "avg_power_mw": model.avg_power_mw,
            "energy_uj": model.energy_uj,
            "baseline": base.to_string(),
            "baseline_avg_power_mw": base_model.avg_power_mw,
            "power_reduction": model.power_reduction(&base_model),
        });
    }
    emit(out, man, None)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Encode(a) => encode(a),
        Command::Decode(a) => decode(a),
        Command::Prune(a) => prune(a),
        Command::Check(a) => check(a),
        Command::Simulate(a) => simulate(a),
        Command::Im2colBench(a) => im2col_bench(a),
        Command::Sweep(a) => sweep::run(a),
        Command::Calibrate(a) => calibrate_cmd(a),
        Command::Report(a) => report(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
