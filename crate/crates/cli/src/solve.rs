use std::cell::RefCell;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Args;
use gnrs::algo1::run_algorithm1_observed;
use gnrs::algo2::run_algorithm2_observed;
use gnrs::data::ShapeMatrix;
use gnrs::experiments::e3d;
use gnrs::io::{save_matrix, MatrixFormat};
use gnrs::{Diagnostics, Snapshot};
use serde_json::{json, Map, Value};

use crate::inputs::{create, finish, write_labels, DataArgs};
use crate::SolverArgs;

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Shape output format: `csv` or `bin`.
    #[arg(long, default_value = "csv")]
    pub format: MatrixFormat,
    /// Write solver state every N iterations under `<out>/state`.
    #[arg(long, value_name = "N")]
    pub dump_state_every: Option<usize>,
    /// Store the wall-clock time in metrics.json (makes it run-dependent).
    #[arg(long)]
    pub record_time: bool,
}

struct Solved {
    shape: ShapeMatrix<f64>,
    labels: Vec<usize>,
    diagnostics: Diagnostics,
    extra: Map<String, Value>,
}

pub fn run(args: SolveArgs) -> Result<()> {
    let data = args.data.load()?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let state_dir = args.out.join("state");
    let dump_every = args.dump_state_every.filter(|&n| n > 0);
    if dump_every.is_some() {
        fs::create_dir_all(&state_dir).with_context(|| format!("creating {}", state_dir.display()))?;
    }
    let dump_error: RefCell<Option<anyhow::Error>> = RefCell::new(None);
    let mut dump = |snap: &Snapshot<'_, f64>| {
        let Some(n) = dump_every else { return };
        if snap.iteration % n != 0 || dump_error.borrow().is_some() {
            return;
        }
        if let Err(e) = dump_state(&state_dir, snap) {
            *dump_error.borrow_mut() = Some(e);
        }
    };

    let start = Instant::now();
    let solved = if args.solver.algo == 1 {
        let cfg = args.solver.algo1()?;
        let out = run_algorithm1_observed(&data.w, &data.r, &cfg, Some(&mut dump))?;
        let mut extra = Map::new();
        extra.insert("temporal_sizes".into(), json!(out.temporal.sizes));
        Solved {
            shape: out.shape,
            labels: out.spatial_labels,
            diagnostics: out.diagnostics,
            extra,
        }
    } else {
        let cfg = args.solver.algo2()?;
        let out = run_algorithm2_observed(&data.w, &data.r, &cfg, Some(&mut dump))?;
        let mut extra = Map::new();
        extra.insert("dtilde".into(), json!(out.dtilde));
        extra.insert(
            "regularized_projections".into(),
            json!(out.diagnostics.regularized_projections),
        );
        Solved {
            shape: out.shape,
            labels: out.spatial_labels,
            diagnostics: out.diagnostics,
            extra,
        }
    };
    let wall = start.elapsed().as_secs_f64();
    if let Some(e) = dump_error.into_inner() {
        return Err(e);
    }

    let shape = solved.shape.in_original_order();
    let s_path = args.out.join(format!("S.{}", args.format.extension()));
    save_matrix(shape.data(), &s_path, args.format).with_context(|| format!("writing {}", s_path.display()))?;

    let diag_path = args.out.join("diagnostics.csv");
    let mut diag = create(&diag_path)?;
    solved.diagnostics.write_csv(&mut diag)?;
    finish(diag, &diag_path)?;

    write_labels(&args.out.join("clusters.csv"), &solved.labels)?;

    let reproj = (data.r.project(shape.data())? - data.w.data()).norm();
    let mut metrics = solved.extra;
    metrics.insert("algo".into(), json!(args.solver.algo));
    metrics.insert("reproj_fro".into(), json!(reproj));
    metrics.insert("iters".into(), json!(solved.diagnostics.iterations()));
    metrics.insert("stop".into(), json!(solved.diagnostics.stop.as_str()));
    metrics.insert("final_gap".into(), json!(solved.diagnostics.final_gap()));
    metrics.insert(
        "wall_seconds".into(),
        if args.record_time { json!(wall) } else { Value::Null },
    );
    if let Some(gt) = &data.gt {
        metrics.insert("e3d".into(), json!(e3d(&shape, gt, args.solver.flip())?));
    }
    let metrics_path = args.out.join("metrics.json");
    let mut out = create(&metrics_path)?;
    serde_json::to_writer_pretty(&mut out, &Value::Object(metrics))?;
    std::io::Write::write_all(&mut out, b"\n")?;
    finish(out, &metrics_path)
}

fn dump_state(dir: &Path, snap: &Snapshot<'_, f64>) -> Result<()> {
    let prefix = format!("iter{:05}", snap.iteration);
    for (name, m) in [("S", snap.shape), ("Ssharp", snap.sharp), ("C", snap.coefficients)] {
        let path = dir.join(format!("{prefix}_{name}.csv"));
        save_matrix(m, &path, MatrixFormat::Csv).with_context(|| format!("writing {}", path.display()))?;
    }
    let path = dir.join(format!("{prefix}_order.csv"));
    let mut out = create(&path)?;
    for id in snap.chart.indices() {
        std::io::Write::write_all(&mut out, format!("{id}\n").as_bytes())?;
    }
    finish(out, &path)
}
