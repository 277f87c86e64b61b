// SPDX-License-Identifier: Apache-2.0
//! `vdbb sweep`: design-space tables and the run manifest.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use serde_json::json;

use vdbb::dse::{
    enumerate, evaluate, layer_sweep, pareto, sparsity_scan, CycleSource, DesignPoint, SweepSpec,
};
use vdbb::workload::load_workload;

use crate::manifest::RunManifest;
use crate::{load_coeffs, parse_design, CliResult, Failure};

#[derive(Args)]
pub struct SweepArgs {
    /// Sweep specification (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Workload costed layer by layer on the modelled designs.
    #[arg(long)]
    workload: Option<PathBuf>,
    /// Coefficient file; defaults to $VDBB_COEFFS, then built-in values.
    #[arg(long)]
    coeffs: Option<PathBuf>,
    /// Per-layer cycles from the cycle-level simulator.
    #[arg(long)]
    simulate: bool,
    /// Design the workload power is compared against.
    #[arg(long, default_value = "1x1x1_32x64")]
    baseline: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Serialize)]
struct PointRow<'a> {
    id: &'a str,
    config: &'a str,
    features: String,
    nominal_tops: f64,
    off_target: bool,
    power_mw: f64,
    area_mm2: f64,
    effective_tops: f64,
    tops_per_w: f64,
    tops_per_mm2: f64,
    power_per_tops: f64,
    area_per_tops: f64,
    pareto: bool,
}

#[derive(Serialize)]
struct LayerRow<'a> {
    design: &'a str,
    layer: &'a str,
    m: usize,
    k: usize,
    n: usize,
    weight_nnz: usize,
    act_sparsity: f64,
    im2col_active: bool,
    magnification: f64,
    cycles: u64,
    power_mw: f64,
    energy_uj: f64,
}

#[derive(Serialize)]
struct ScanRow<'a> {
    design: &'a str,
    weight_nnz: usize,
    weight_sparsity: f64,
    effective_tops: f64,
    power_mw: f64,
    tops_per_w: f64,
}

fn point_row(p: &DesignPoint, on_front: bool) -> PointRow<'_> {
    let m = p.metrics.as_ref().expect("evaluated");
    PointRow {
        id: &p.id,
        config: &p.config,
        features: p.features.to_string(),
        nominal_tops: p.nominal_tops,
        off_target: p.off_target,
        power_mw: m.power_mw.total,
        area_mm2: m.area_mm2.total,
        effective_tops: m.effective_tops,
        tops_per_w: m.tops_per_w,
        tops_per_mm2: m.tops_per_mm2,
        power_per_tops: m.power_per_tops(),
        area_per_tops: m.area_per_tops(),
        pareto: on_front,
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(args: SweepArgs) -> CliResult<()> {
    let mut man = RunManifest::new(args.seed);
    man.input(&args.spec)?;
    let spec = SweepSpec::load(&args.spec)?;
    let coeffs = load_coeffs(args.coeffs.as_deref(), &mut man)?;
    let workload = match &args.workload {
        Some(p) => {
            man.input(p)?;
            Some(load_workload(p)?)
        }
        None => None,
    };
    let baseline = parse_design(&args.baseline)?;

    let en = enumerate(&spec, &coeffs)?;
    let points = evaluate(en.points.clone(), &coeffs, &spec.operating_point)?;
    let front = pareto(&points);
    let front_ids: Vec<&str> = front.iter().map(|p| p.id.as_str()).collect();

    std::fs::create_dir_all(&args.output)?;
    let dir = args.output.as_path();
    let mut written = Vec::new();
    let path = dir.join("points.csv");
    write_csv(&path, points.iter().map(|p| point_row(p, front_ids.contains(&p.id.as_str()))))?;
    written.push(path);
    let path = dir.join("pareto.csv");
    write_csv(&path, front.iter().map(|p| point_row(p, true)))?;
    written.push(path);

    let path = dir.join("sparsity_scan.csv");
    let mut scan = Vec::new();
    for p in &front {
        for r in sparsity_scan(&p.cfg, &coeffs, spec.bz, spec.operating_point.act_sparsity)? {
            scan.push((p.config.clone(), r));
        }
    }
    write_csv(
        &path,
        scan.iter().map(|(d, r)| ScanRow {
            design: d,
            weight_nnz: r.weight_nnz,
            weight_sparsity: r.weight_sparsity,
            effective_tops: r.effective_tops,
            power_mw: r.power_mw,
            tops_per_w: r.tops_per_w,
        }),
    )?;
    written.push(path);

    let mut models = Vec::new();
    if let Some(w) = &workload {
        let source = if args.simulate {
            CycleSource::Simulated { seed: args.seed }
        } else {
            CycleSource::Analytic
        };
        // Explicit lists are modelled in full, ranged sweeps only on the frontier.
        let modelled: Vec<&DesignPoint> =
            if spec.configs.is_some() { points.iter().collect() } else { front.iter().collect() };
        let base = layer_sweep(&baseline, &coeffs, w, source)?;
        let mut rows = Vec::new();
        for p in modelled {
            let r = layer_sweep(&p.cfg, &coeffs, w, source)?;
            models.push(json!({
                "id": p.id,
                "config": p.config,
                "total_cycles": r.total_cycles,
                "avg_power_mw": r.avg_power_mw,
                "energy_uj": r.energy_uj,
                "power_reduction_vs_baseline": r.power_reduction(&base),
            }));
            rows.push(r);
        }
        rows.push(base.clone());
        let path = dir.join("layers.csv");
        write_csv(
            &path,
            rows.iter().flat_map(|r| {
                r.layers.iter().map(move |l| LayerRow {
                    design: &r.config,
                    layer: &l.name,
                    m: l.m,
                    k: l.k,
                    n: l.n,
                    weight_nnz: l.weight_nnz,
                    act_sparsity: l.act_sparsity,
                    im2col_active: l.im2col_active,
                    magnification: l.magnification,
                    cycles: l.cycles,
                    power_mw: l.power_mw,
                    energy_uj: l.energy_uj,
                })
            }),
        )?;
        written.push(path);
        models.push(json!({
            "config": base.config,
            "baseline": true,
            "total_cycles": base.total_cycles,
            "avg_power_mw": base.avg_power_mw,
            "energy_uj": base.energy_uj,
        }));
    }

    let summary = json!({
        "name": spec.name,
        "target_tops": spec.target_tops,
        "clock_ghz": spec.clock_ghz,
        "operating_point": spec.operating_point,
        "designs": points.len(),
        "excluded": en.exclusion_counts(),
        "frontier": front.iter().map(|p| json!({"id": p.id, "config": p.config})).collect::<Vec<_>>(),
        "off_target": points.iter().filter(|p| p.off_target).map(|p| p.config.clone()).collect::<Vec<_>>(),
        "cycle_source": if args.simulate { "simulated" } else { "analytic" },
        "models": models,
    });
    let path = dir.join("sweep.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary).unwrap() + "\n")?;
    written.push(path);

    for p in &written {
        man.output(p, Some(dir))?;
    }
    std::fs::write(dir.join("manifest.json"), man.to_json())?;
    println!(
        "{} designs, {} on the frontier: {}",
        points.len(),
        front.len(),
        front.iter().map(|p| p.config.as_str()).collect::<Vec<_>>().join(", ")
    );
    if front.is_empty() {
        return Err(Failure::Empty("no evaluated designs".into()));
    }
    Ok(())
}
