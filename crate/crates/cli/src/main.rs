//! `wire4d`: initialize, fit, render, measure and export 4D wires.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use wire4d::export::{edge_manifold_audit, export_svg, to_obj, tube_mesh};
use wire4d::guidance::{GuidanceClient, SocketBridge, DEFAULT_TIMEOUT};
use wire4d::init::initial_wire;
use wire4d::metrics::{component_count, convergence_report, mst_connectivity_cost, total_length};
use wire4d::optimize::{render_view, run_schedule, RunConfig, ViewTarget};
use wire4d::projection::project_wire;
use wire4d::{rasterize, Camera, Error, RasterSettings, Wire4D};

const BRIDGE_ENV: &str = "WIRE4D_BRIDGE";

#[derive(Parser)]
#[command(name = "wire4d", version, about = "Differentiable 4D wire toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated indices of the config views to use.
    #[arg(long, value_delimiter = ',')]
    views: Option<Vec<usize>>,
    /// Overrides the config screen tolerance.
    #[arg(long)]
    epsilon_px: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the initial wire described by a run config.
    Init {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimize a wire against the config views.
    Fit {
        #[command(flatten)]
        run: RunArgs,
        /// Output directory for the wire, run log and renders.
        #[arg(long)]
        out: PathBuf,
        /// Start from this wire instead of the config init.
        #[arg(long)]
        wire: Option<PathBuf>,
        /// Validate the config and inputs without writing anything.
        #[arg(long)]
        dry_run: bool,
    },
    /// Rasterize a wire from a camera to PNG.
    Render {
        #[arg(long)]
        wire: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        epsilon_px: f64,
    },
    /// Length, components and MST connectivity cost as JSON.
    Metrics {
        #[arg(long)]
        wire: PathBuf,
        /// Width threshold; defaults to 2% of the wire's width range.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Projection error against subdivision level as CSV.
    ValidateProjection {
        #[arg(long)]
        wire: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
        levels: Vec<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Projected strokes as SVG paths.
    ExportSvg {
        #[arg(long)]
        wire: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        epsilon_px: f64,
    },
    /// Closed tube mesh as OBJ.
    ExportMesh {
        #[arg(long)]
        wire: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 12)]
        sides: usize,
        #[arg(long, default_value_t = 512)]
        samples: usize,
    },
}

/// Failure with its process exit code.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
    path: Option<PathBuf>,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::Bridge(_) => (4, "bridge"),
            Error::Io { .. } | Error::Parse { .. } | Error::Format { .. } => (2, "input"),
            Error::Config(_) | Error::InvalidCamera(_) | Error::DimensionMismatch { .. } => (2, "input"),
            _ => (3, "runtime"),
        };
        Failure {
            code,
            kind,
            path: e.path().map(Path::to_path_buf),
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: 3,
        kind: "runtime",
        message: format!("{}: {e}", path.display()),
        path: Some(path.to_path_buf()),
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let err = json!({
                "error": f.kind,
                "message": f.message,
                "path": f.path.map(|p| p.display().to_string()),
            });
            eprintln!("{err}");
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command) -> CliResult {
    match command {
        Command::Init { run, out } => {
            let (cfg, views) = load_run(&run)?;
            let (wire, _) = initial_wire::<f64>(&cfg, &views)?;
            wire.save(&out)?;
            Ok(())
        }
        Command::Fit {
            run,
            out,
            wire,
            dry_run,
        } => fit(&run, &out, wire.as_deref(), dry_run),
        Command::Render {
            wire,
            camera,
            out,
            epsilon_px,
        } => {
            let wire = Wire4D::load(&wire)?;
            let cam = Camera::load(&camera)?;
            let batch = project_wire(&wire, &cam, epsilon_px)?;
            rasterize(&batch, cam.width, cam.height, &RasterSettings::default())?.save_ink_png(&out)?;
            Ok(())
        }
        Command::Metrics { wire, threshold, out } => {
            let wire = Wire4D::load(&wire)?;
            let clamp = wire.clamp();
            let threshold = threshold.unwrap_or(0.02 * (clamp.max - clamp.min));
            let set = component_count(&wire, threshold)?;
            let mst = if set.is_empty() {
                None
            } else {
                Some(mst_connectivity_cost(&set)?)
            };
            let body = json!({
                "length": total_length(&wire),
                "components": set.len(),
                "mst_cost": mst,
            });
            emit(out.as_deref(), &format!("{body}\n"))
        }
        Command::ValidateProjection {
            wire,
            camera,
            levels,
            out,
        } => {
            let wire = Wire4D::load(&wire)?;
            let cam = Camera::load(&camera)?;
            let rows = convergence_report(&wire, &cam, &levels)?;
            let mut csv = String::from("h,error_normalized,subdivision\n");
            for r in rows {
                csv.push_str(&format!("{},{},{}\n", r.h, r.error, r.subdivision));
            }
            emit(out.as_deref(), &csv)
        }
        Command::ExportSvg {
            wire,
            camera,
            out,
            epsilon_px,
        } => {
            let wire = Wire4D::load(&wire)?;
            let cam = Camera::load(&camera)?;
            let svg = export_svg(&wire, &cam, epsilon_px)?;
            fs::write(&out, svg).map_err(|e| io_failure(&out, e))
        }
        Command::ExportMesh {
            wire,
            out,
            sides,
            samples,
        } => {
            let wire = Wire4D::load(&wire)?;
            let tube = tube_mesh(&wire, sides, samples)?;
            if let Err(msg) = edge_manifold_audit(&tube.mesh) {
                return Err(Error::Degenerate(format!("tube mesh is not watertight: {msg}")).into());
            }
            fs::write(&out, to_obj(&tube.mesh)).map_err(|e| io_failure(&out, e))
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| io_failure(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_run(args: &RunArgs) -> CliResult<(RunConfig, Vec<ViewTarget<f64>>)> {
    let mut cfg = RunConfig::load(&args.config)?;
    let base = args.config.parent().unwrap_or(Path::new("."));
    cfg.resolve_paths(base);
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(eps) = args.epsilon_px {
        cfg.epsilon_px = eps;
    }
    if let Some(keep) = &args.views {
        let mut picked = Vec::with_capacity(keep.len());
        for &i in keep {
            let v =
                cfg.views.get(i).cloned().ok_or_else(|| {
                    Error::Config(format!("--views index {i} out of range ({} views)", cfg.views.len()))
                })?;
            picked.push(v);
        }
        cfg.views = picked;
    }
    cfg.validate()?;
    let views = cfg.load_views()?;
    if views.is_empty() {
        return Err(Error::Config("config has no views".into()).into());
    }
    Ok((cfg, views))
}

fn connect_bridge(cfg: &RunConfig, views: &[ViewTarget<f64>]) -> CliResult<Option<SocketBridge>> {
    if cfg.lambda_clip <= 0.0 || views.iter().all(|v| v.guidance_id.is_none()) {
        return Ok(None);
    }
    let address = std::env::var(BRIDGE_ENV).map_err(|_| Failure {
        code: 4,
        kind: "bridge",
        message: format!("views request guidance but {BRIDGE_ENV} is not set"),
        path: None,
    })?;
    Ok(Some(
        SocketBridge::connect(&address, DEFAULT_TIMEOUT).map_err(Error::from)?,
    ))
}

fn fit(args: &RunArgs, out: &Path, start: Option<&Path>, dry_run: bool) -> CliResult {
    let (cfg, views) = load_run(args)?;
    let (init, bounds) = initial_wire::<f64>(&cfg, &views)?;
    let wire = match start {
        Some(p) => Wire4D::load(p)?,
        None => init,
    };
    if dry_run {
        println!(
            "{}",
            json!({"ok": true, "views": views.len(), "controls": wire.control_count()})
        );
        return Ok(());
    }
    let mut bridge = connect_bridge(&cfg, &views)?;
    fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    let log_path = out.join("run_log.jsonl");
    let mut snapshot_error = None;
    let mut observer = |iter: usize, w: &Wire4D, _: &_| {
        if cfg.snapshot_every == 0 || !iter.is_multiple_of(cfg.snapshot_every) || snapshot_error.is_some() {
            return;
        }
        for (i, v) in views.iter().enumerate() {
            let path = out.join(format!("view{i}_iter{iter:04}.png"));
            let saved =
                render_view(w, v, cfg.epsilon_px, &cfg.raster, &cfg.visibility).and_then(|img| img.save_ink_png(&path));
            if let Err(e) = saved {
                snapshot_error = Some(e);
                return;
            }
        }
    };
    let client = bridge.as_mut().map(|b| b as &mut dyn GuidanceClient);
    let result = run_schedule(&cfg, wire, &views, &bounds, client, &mut observer);
    let (output, failure) = match result {
        Ok(o) => (o, None),
        Err(f) => (f.partial, Some(f.error)),
    };
    if let Some(e) = snapshot_error {
        return Err(e.into());
    }
    write_log(&log_path, &output.log)?;
    if let Some(e) = failure {
        output.wire.save(out.join("wire_partial.json"))?;
        return Err(e.into());
    }
    output.wire.save(out.join("wire.json"))?;
    for (i, v) in views.iter().enumerate() {
        render_view(&output.wire, v, cfg.epsilon_px, &cfg.raster, &cfg.visibility)?
            .save_ink_png(out.join(format!("view{i}_final.png")))?;
    }
    let first = output.iterations().next().map(|r| r.loss);
    let last = output.final_eval.as_ref().map(|e| e.total);
    println!(
        "{}",
        json!({
            "initial_loss": first,
            "final_loss": last,
            "controls": output.wire.control_count(),
            "iterations": cfg.iterations,
        })
    );
    Ok(())
}

fn write_log(path: &Path, lines: &[wire4d::optimize::LogLine]) -> CliResult {
    let file = File::create(path).map_err(|e| io_failure(path, e))?;
    let mut w = BufWriter::new(file);
    for l in lines {
        writeln!(w, "{}", l.to_json()).map_err(|e| io_failure(path, e))?;
    }
    w.flush().map_err(|e| io_failure(path, e))
}
