//! Full pair preparation: registration, color transfer and bidirectional
//! flow, with every intermediate cached under a content hash.
//!
//! Cache layout, under `$VVS_WORKDIR` (default `<tmp>/vvs-cache`):
//!
//! ```text
//! <hash>/rect_1.ppm   image 1 (reference frame)
//! <hash>/rect_2.ppm   image 2 warped into image 1's frame
//! <hash>/curve.json   color transfer of image 2 toward image 1
//! <hash>/fwd.flo      flow 1 -> 2
//! <hash>/back.flo     flow 2 -> 1
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use sha2::{Digest, Sha256};

use vvs_core::closeup::{closeup_fused, CloseupError, CloseupParams, CloseupResult};
use vvs_core::color::{apply_transfer, fit_transfer, ColorError, TransferCurve};
use vvs_core::flow::{bidirectional_flow, FlowError, FlowParams};
use vvs_core::raster::{load_image, read_flo, save_image, write_flo};
use vvs_core::registration::{
    estimate_homography, load_correspondences, ransac_homography, warp_perspective, RansacParams, RegistrationError,
};
use vvs_core::synthesis::{synthesize_view, SynthesisError};
use vvs_core::{FlowField, Image, RasterError, ViewResult};

pub const WORKDIR_ENV: &str = "VVS_WORKDIR";

// below this many correspondences RANSAC has nothing to vote with
const MIN_RANSAC_PAIRS: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("[load] {path}: {source}")]
    Load { path: PathBuf, source: RasterError },
    #[error("[register] {0}")]
    Register(#[from] RegistrationError),
    #[error("[colorfix] {0}")]
    ColorFix(#[from] ColorError),
    #[error("[flow] {0}")]
    Flow(#[from] FlowError),
    #[error("[flow] precomputed flow {path}: {source}")]
    PrecomputedFlow { path: PathBuf, source: RasterError },
    #[error("[flow] precomputed flows must come in pairs (--flow and --flow-back)")]
    UnpairedFlow,
    #[error("[view] {0}")]
    Synthesis(#[from] SynthesisError),
    #[error("[closeup] {0}")]
    Closeup(#[from] CloseupError),
    #[error("[prepare] {0}")]
    Mismatch(String),
    #[error("[cache] {path}: {message}")]
    Cache { path: PathBuf, message: String },
}

fn cache_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Cache { path: path.to_path_buf(), message: e.to_string() }
}

/// Inputs of one image pair.
#[derive(Clone, Debug, Default)]
pub struct PairConfig {
    pub path1: PathBuf,
    pub path2: PathBuf,
    /// JSON correspondences (src in image 2, dst in image 1). Without them
    /// the images are taken as already registered.
    pub correspondences: Option<PathBuf>,
    pub flow_params: FlowParams,
    /// Precomputed forward and backward flows of the prepared pair.
    pub flow: Option<PathBuf>,
    pub flow_back: Option<PathBuf>,
    /// Cache root; falls back to `$VVS_WORKDIR`, then `<tmp>/vvs-cache`.
    pub workdir: Option<PathBuf>,
}

impl PairConfig {
    pub fn new(path1: impl Into<PathBuf>, path2: impl Into<PathBuf>) -> Self {
        Self { path1: path1.into(), path2: path2.into(), ..Default::default() }
    }

    pub fn cache_root(&self) -> PathBuf {
        self.workdir
            .clone()
            .or_else(|| std::env::var_os(WORKDIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| std::env::temp_dir().join("vvs-cache"))
    }
}

/// A registered, color-matched pair with its flows.
#[derive(Clone, Debug)]
pub struct PreparedPair {
    pub img1: Image,
    /// Image 2 in image 1's frame, color-corrected toward image 1.
    pub img2: Image,
    pub f12: FlowField,
    pub f21: FlowField,
    pub curve: TransferCurve,
    /// Content hash of the inputs; also the cache directory name.
    pub hash: String,
    pub cache_dir: PathBuf,
    pub cache_hit: bool,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, PipelineError> {
    fs::read(path).map_err(|e| {
        let source = if e.kind() == std::io::ErrorKind::NotFound {
            RasterError::FileNotFound(path.to_path_buf())
        } else {
            RasterError::Io(e)
        };
        PipelineError::Load { path: path.to_path_buf(), source }
    })
}

fn content_hash(config: &PairConfig) -> Result<String, PipelineError> {
    let mut h = Sha256::new();
    let mut field = |tag: &str, bytes: &[u8]| {
        h.update(tag.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    field("image1", &read_bytes(&config.path1)?);
    field("image2", &read_bytes(&config.path2)?);
    if let Some(p) = &config.correspondences {
        field("correspondences", &read_bytes(p)?);
    }
    field("flow_params", serde_json::to_string(&config.flow_params).expect("params serialize").as_bytes());
    if let Some(p) = &config.flow {
        field("flow", &read_bytes(p)?);
    }
    if let Some(p) = &config.flow_back {
        field("flow_back", &read_bytes(p)?);
    }
    Ok(hex::encode(h.finalize()))
}

fn load(path: &Path) -> Result<Image, PipelineError> {
    load_image(path).map_err(|source| PipelineError::Load { path: path.to_path_buf(), source })
}

/// Brings image 2 into image 1's frame when correspondences are given.
pub fn register(img1: &Image, img2: &Image, correspondences: Option<&Path>) -> Result<Image, PipelineError> {
    let Some(path) = correspondences else {
        if img1.dims() != img2.dims() {
            return Err(PipelineError::Mismatch(format!(
                "images are {:?} and {:?}; supply correspondences to register them",
                img1.dims(),
                img2.dims()
            )));
        }
        return Ok(img2.clone());
    };
    let pairs = load_correspondences(path)?;
    let h = if pairs.len() >= MIN_RANSAC_PAIRS {
        ransac_homography(&pairs, &RansacParams::default())?.0
    } else {
        estimate_homography(&pairs)?
    };
    info!("registration homography {:?}", h.m);
    Ok(warp_perspective(img2, &h, img1.width(), img1.height())?)
}

/// Transfer curve of image 2 toward image 1. A flat channel cannot be
/// fitted and leaves the pair uncorrected.
pub fn color_curve(img1: &Image, img2: &Image) -> Result<TransferCurve, PipelineError> {
    match fit_transfer(img2, img1) {
        Ok(c) => Ok(c),
        Err(e @ ColorError::DegenerateHistogram { .. }) => {
            warn!("color correction skipped: {e}");
            Ok(TransferCurve::identity())
        }
        Err(e) => Err(e.into()),
    }
}

struct CacheFiles {
    rect1: PathBuf,
    rect2: PathBuf,
    curve: PathBuf,
    fwd: PathBuf,
    back: PathBuf,
}

impl CacheFiles {
    fn new(dir: &Path) -> Self {
        Self {
            rect1: dir.join("rect_1.ppm"),
            rect2: dir.join("rect_2.ppm"),
            curve: dir.join("curve.json"),
            fwd: dir.join("fwd.flo"),
            back: dir.join("back.flo"),
        }
    }

    fn complete(&self) -> bool {
        [&self.rect1, &self.rect2, &self.curve, &self.fwd, &self.back].iter().all(|p| p.is_file())
    }
}

fn load_cached(files: &CacheFiles) -> Result<(Image, Image, TransferCurve, FlowField, FlowField), PipelineError> {
    let img = |p: &Path| load_image(p).map_err(|e| cache_err(p, e));
    let flo = |p: &Path| read_flo(p).map_err(|e| cache_err(p, e));
    let json = fs::read_to_string(&files.curve).map_err(|e| cache_err(&files.curve, e))?;
    let curve = TransferCurve::from_json(&json).map_err(|e| cache_err(&files.curve, e))?;
    Ok((img(&files.rect1)?, img(&files.rect2)?, curve, flo(&files.fwd)?, flo(&files.back)?))
}

fn precomputed_flows(config: &PairConfig, dims: (usize, usize)) -> Result<Option<(FlowField, FlowField)>, PipelineError> {
    let (fwd, back) = match (&config.flow, &config.flow_back) {
        (None, None) => return Ok(None),
        (Some(f), Some(b)) => (f, b),
        _ => return Err(PipelineError::UnpairedFlow),
    };
    let read = |p: &PathBuf| read_flo(p).map_err(|source| PipelineError::PrecomputedFlow { path: p.clone(), source });
    let (f12, f21) = (read(fwd)?, read(back)?);
    for f in [&f12, &f21] {
        if f.dims() != dims {
            return Err(PipelineError::Mismatch(format!("flow is {:?} but images are {:?}", f.dims(), dims)));
        }
    }
    Ok(Some((f12, f21)))
}

/// Runs (or reloads from cache) registration, color correction and flow.
pub fn prepare(config: &PairConfig) -> Result<PreparedPair, PipelineError> {
    let hash = content_hash(config)?;
    let cache_dir = config.cache_root().join(&hash);
    let files = CacheFiles::new(&cache_dir);

    if files.complete() {
        info!("cache hit {hash}");
        let (img1, rect2, curve, f12, f21) = load_cached(&files)?;
        let img2 = apply_transfer(&rect2, &curve);
        return Ok(PreparedPair { img1, img2, f12, f21, curve, hash, cache_dir, cache_hit: true });
    }
    info!("cache miss {hash}");

    let img1 = load(&config.path1)?;
    let rect2 = register(&img1, &load(&config.path2)?, config.correspondences.as_deref())?;
    let curve = color_curve(&img1, &rect2)?;
    let img2 = apply_transfer(&rect2, &curve);
    let (f12, f21) = match precomputed_flows(config, img1.dims())? {
        Some(flows) => flows,
        None => bidirectional_flow(&img1, &img2, &config.flow_params)?,
    };

    fs::create_dir_all(&cache_dir).map_err(|e| cache_err(&cache_dir, e))?;
    save_image(&img1, &files.rect1).map_err(|e| cache_err(&files.rect1, e))?;
    save_image(&rect2, &files.rect2).map_err(|e| cache_err(&files.rect2, e))?;
    fs::write(&files.curve, curve.to_json()).map_err(|e| cache_err(&files.curve, e))?;
    write_flo(&f12, &files.fwd).map_err(|e| cache_err(&files.fwd, e))?;
    write_flo(&f21, &files.back).map_err(|e| cache_err(&files.back, e))?;

    Ok(PreparedPair { img1, img2, f12, f21, curve, hash, cache_dir, cache_hit: false })
}

/// What [`run_pipeline`] renders.
#[derive(Clone, Debug, PartialEq)]
pub enum Rendered {
    View(ViewResult),
    Closeup(CloseupResult),
}

impl Rendered {
    pub fn image(&self) -> &Image {
        match self {
            Rendered::View(v) => &v.image,
            Rendered::Closeup(c) => &c.image,
        }
    }
}

/// Prepares the pair and renders the viewpoint at `a`, as a close-up when
/// `closeup` is given.
pub fn run_pipeline(config: &PairConfig, a: f64, closeup: Option<&CloseupParams>) -> Result<(Rendered, PreparedPair), PipelineError> {
    let pair = prepare(config)?;
    let out = render(&pair, a, closeup)?;
    Ok((out, pair))
}

pub fn render(pair: &PreparedPair, a: f64, closeup: Option<&CloseupParams>) -> Result<Rendered, PipelineError> {
    Ok(match closeup {
        None => Rendered::View(synthesize_view(&pair.img1, &pair.img2, &pair.f12, &pair.f21, a)?),
        Some(p) => Rendered::Closeup(closeup_fused(&pair.img1, &pair.img2, &pair.f12, &pair.f21, a, p)?),
    })
}
