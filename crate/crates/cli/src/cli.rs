use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use vvs_core::closeup::{CloseupParams, Tau};
use vvs_core::color::apply_transfer;
use vvs_core::flow::{flow_to_color, FlowParams};
use vvs_core::raster::{load_image, save_image, write_flo};
use vvs_core::registration::{register_auto, warp_perspective};
use vvs_core::synthesis::overlay_rgb;
use vvs_core::Image;

use crate::pipeline::{self, color_curve, prepare, render, PairConfig, PipelineError};
use crate::service;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PROCESSING: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "vvs", version, about = "Virtual viewpoints and parallax close-ups from two photographs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Warp image B into image A's frame.
    Register {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// JSON correspondences; automatic patch matching when omitted.
        #[arg(long)]
        correspondences: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Correct image B's colors toward image A.
    Colorfix {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the fitted curve as JSON.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Estimate forward and backward optical flow.
    Flow {
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        flow: FlowArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        out_back: PathBuf,
        /// Color-wheel rendering of the forward flow.
        #[arg(long)]
        vis: Option<PathBuf>,
    },
    /// Render intermediate viewpoints.
    View {
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        flow: FlowArgs,
        #[command(flatten)]
        flows: FlowFiles,
        /// Viewpoint fraction in [0, 1]; repeatable.
        #[arg(long = "t", required = true, value_parser = parse_fraction)]
        t: Vec<f64>,
        /// Combine exactly three views into one red/green/blue overlay.
        #[arg(long)]
        overlay_rgb: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a parallax close-up.
    Closeup {
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        flow: FlowArgs,
        #[command(flatten)]
        flows: FlowFiles,
        #[arg(long = "t", default_value_t = 0.5, value_parser = parse_fraction)]
        t: f64,
        #[command(flatten)]
        closeup: CloseupArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve views and close-ups over HTTP.
    Serve {
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        flow: FlowArgs,
        #[command(flatten)]
        flows: FlowFiles,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Directory of static viewer assets served under `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct PairArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    correspondences: Option<PathBuf>,
    /// Cache directory (overrides VVS_WORKDIR).
    #[arg(long)]
    workdir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FlowArgs {
    #[arg(long, default_value_t = FlowParams::default().alpha)]
    alpha: f32,
    #[arg(long, default_value_t = FlowParams::default().iterations)]
    iterations: usize,
    #[arg(long, default_value_t = FlowParams::default().levels)]
    levels: usize,
    #[arg(long, default_value_t = FlowParams::default().warp_updates)]
    warp_updates: usize,
    #[arg(long, default_value_t = FlowParams::default().convergence_eps)]
    eps: f32,
}

#[derive(Debug, Args)]
struct FlowFiles {
    /// Precomputed forward flow (.flo).
    #[arg(long, requires = "flow_back")]
    flow: Option<PathBuf>,
    /// Precomputed backward flow (.flo).
    #[arg(long, requires = "flow")]
    flow_back: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CloseupArgs {
    #[arg(long, default_value_t = CloseupParams::default().zoom)]
    zoom: f64,
    #[arg(long, default_value_t = 0.5, value_parser = parse_fraction)]
    cx: f64,
    #[arg(long, default_value_t = 0.5, value_parser = parse_fraction)]
    cy: f64,
    /// Foreground threshold: a number or "auto".
    #[arg(long, default_value = "auto")]
    tau: Tau,
    #[arg(long, default_value_t = CloseupParams::default().feather)]
    feather: f64,
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

impl PairArgs {
    fn config(&self, flow: &FlowArgs, files: Option<&FlowFiles>) -> PairConfig {
        PairConfig {
            path1: self.a.clone(),
            path2: self.b.clone(),
            correspondences: self.correspondences.clone(),
            flow_params: FlowParams {
                alpha: flow.alpha,
                iterations: flow.iterations,
                levels: flow.levels,
                warp_updates: flow.warp_updates,
                convergence_eps: flow.eps,
            },
            flow: files.and_then(|f| f.flow.clone()),
            flow_back: files.and_then(|f| f.flow_back.clone()),
            workdir: self.workdir.clone(),
        }
    }
}

impl CloseupArgs {
    fn params(&self) -> CloseupParams {
        CloseupParams { zoom: self.zoom, cx: self.cx, cy: self.cy, tau: self.tau, feather: self.feather }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{0}")]
    Usage(String),
    #[error("writing {path}: {message}")]
    Output { path: PathBuf, message: String },
    #[error("{0}")]
    Serve(String),
}

fn save(image: &Image, path: &Path) -> Result<(), CliError> {
    save_image(image, path).map_err(|e| CliError::Output { path: path.to_path_buf(), message: e.to_string() })
}

fn load(path: &Path) -> Result<Image, CliError> {
    load_image(path).map_err(|source| PipelineError::Load { path: path.to_path_buf(), source }.into())
}

/// `out.png` with `-<suffix>` appended to the stem.
fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}-{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}-{suffix}"),
    };
    path.with_file_name(name)
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Register { a, b, correspondences, out } => {
            let img1 = load(&a)?;
            let img2 = load(&b)?;
            let rect = match correspondences {
                Some(c) => pipeline::register(&img1, &img2, Some(&c))?,
                None => {
                    let h = register_auto(&img1, &img2).map_err(PipelineError::from)?;
                    warp_perspective(&img2, &h, img1.width(), img1.height()).map_err(PipelineError::from)?
                }
            };
            save(&rect, &out)
        }
        Command::Colorfix { a, b, out, curve } => {
            let img1 = load(&a)?;
            let img2 = load(&b)?;
            let c = color_curve(&img1, &img2)?;
            if let Some(path) = curve {
                std::fs::write(&path, c.to_json()).map_err(|e| CliError::Output { path, message: e.to_string() })?;
            }
            save(&apply_transfer(&img2, &c), &out)
        }
        Command::Flow { pair, flow, out, out_back, vis } => {
            let prepared = prepare(&pair.config(&flow, None))?;
            let write = |f, p: &Path| write_flo(f, p).map_err(|e| CliError::Output { path: p.to_path_buf(), message: e.to_string() });
            write(&prepared.f12, &out)?;
            write(&prepared.f21, &out_back)?;
            if let Some(v) = vis {
                save(&flow_to_color(&prepared.f12), &v)?;
            }
            Ok(())
        }
        Command::View { pair, flow, flows, t, overlay_rgb: overlay, out } => {
            if overlay && t.len() != 3 {
                return Err(CliError::Usage(format!("--overlay-rgb needs exactly three --t values, got {}", t.len())));
            }
            let prepared = prepare(&pair.config(&flow, Some(&flows)))?;
            let mut views = Vec::with_capacity(t.len());
            for &a in &t {
                views.push(render(&prepared, a, None)?.image().clone());
            }
            if overlay {
                let img = overlay_rgb(&views[0], &views[1], &views[2]).map_err(PipelineError::from)?;
                return save(&img, &out);
            }
            if views.len() == 1 {
                return save(&views[0], &out);
            }
            for (a, img) in t.iter().zip(&views) {
                save(img, &suffixed(&out, &format!("{a}")))?;
            }
            Ok(())
        }
        Command::Closeup { pair, flow, flows, t, closeup, out } => {
            let prepared = prepare(&pair.config(&flow, Some(&flows)))?;
            let rendered = render(&prepared, t, Some(&closeup.params()))?;
            if let pipeline::Rendered::Closeup(c) = &rendered {
                if c.fallback {
                    log::warn!("segmentation degenerated; wrote a uniform zoom");
                }
            }
            save(rendered.image(), &out)
        }
        Command::Serve { pair, flow, flows, host, port, static_dir } => {
            let prepared = prepare(&pair.config(&flow, Some(&flows)))?;
            let static_dir = static_dir.unwrap_or_else(service::default_static_dir);
            info!("pair {} ready ({}x{})", prepared.hash, prepared.img1.width(), prepared.img1.height());
            let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Serve(e.to_string()))?;
            runtime
                .block_on(service::serve(prepared, &host, port, static_dir))
                .map_err(|e| CliError::Serve(format!("[serve] {e}")))
        }
    }
}

/// Parses `argv` (program name first) and runs the subcommand. Returns the
/// process exit code: 0 success, 1 usage error, 2 processing error.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_PROCESSING
        }
    }
}
