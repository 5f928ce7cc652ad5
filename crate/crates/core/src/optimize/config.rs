use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::projection::Camera;
use crate::raster::RasterSettings;
use crate::scene::VisibilityParams;
use crate::scene::{load_depth, load_mesh, render_depth};

use super::loss::ViewTarget;

/// What to do when the guidance bridge fails for a view.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeFailure {
    #[default]
    Abort,
    Skip,
}

/// How the starting wire is produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    Sphere {
        #[serde(default = "one")]
        radius: f64,
    },
    /// Silhouette of `view` (an index into `views`) cut to a depth slab.
    SilhouetteCone {
        view: usize,
        depth_range: [f64; 2],
    },
    Polyline {
        path: PathBuf,
    },
}

fn one() -> f64 {
    1.0
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec::Sphere { radius: 1.0 }
    }
}

/// Files describing one view. Relative paths resolve against the config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewSpec {
    pub camera: PathBuf,
    #[serde(default)]
    pub mask: Option<PathBuf>,
    /// Depth buffer written by `save_depth`.
    #[serde(default)]
    pub depth: Option<PathBuf>,
    /// Occluding mesh, rendered to a depth buffer at load time.
    #[serde(default)]
    pub mesh: Option<PathBuf>,
    #[serde(default)]
    pub guidance_id: Option<String>,
}

/// Every optimization, schedule and loss setting of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub control_count: usize,
    pub iterations: usize,
    pub reinit_iters: Vec<usize>,
    pub refine_iter: usize,
    /// Knots inserted at `refine_iter`; 0 disables refinement.
    pub refine_count: usize,
    /// Iterations of gradient history behind the refinement ranking.
    pub history_window: usize,
    pub lambda_i: f64,
    pub lambda_g: f64,
    pub lambda_mmse: f64,
    pub lambda_clip: f64,
    pub alpha: f64,
    pub mmse_levels: usize,
    /// Jerk energy multiplier. `None` evaluates the energy over a parameter
    /// with unit knot spacing, i.e. divides by `spans^5` of the initial wire.
    pub jerk_scale: Option<f64>,
    pub lr_position: f64,
    pub lr_width: f64,
    pub adam_betas: [f64; 2],
    pub adam_eps: f64,
    pub width_min: f64,
    pub width_max: f64,
    pub initial_width: f64,
    /// Prune threshold; `None` is 2% of the width range.
    pub width_epsilon: Option<f64>,
    pub seed: u64,
    pub epsilon_px: f64,
    pub raster: RasterSettings,
    pub visibility: VisibilityParams,
    pub bridge_failure: BridgeFailure,
    /// Render snapshot cadence of the CLI; 0 disables snapshots.
    pub snapshot_every: usize,
    pub init: InitSpec,
    pub views: Vec<ViewSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            control_count: 150,
            iterations: 900,
            reinit_iters: vec![150, 300],
            refine_iter: 600,
            refine_count: 10,
            history_window: 50,
            lambda_i: 1.0,
            lambda_g: 0.5,
            lambda_mmse: 1.0,
            lambda_clip: 0.0,
            alpha: 1.0,
            mmse_levels: 4,
            jerk_scale: None,
            lr_position: 0.02,
            lr_width: 0.05,
            adam_betas: [0.9, 0.999],
            adam_eps: 1e-8,
            width_min: 0.0,
            width_max: 0.05,
            initial_width: 0.01,
            width_epsilon: None,
            seed: 0,
            epsilon_px: crate::projection::DEFAULT_EPSILON_PX,
            raster: RasterSettings::default(),
            visibility: VisibilityParams::default(),
            bridge_failure: BridgeFailure::Abort,
            snapshot_every: 100,
            init: InitSpec::default(),
            views: Vec::new(),
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Make relative input paths relative to `base` instead.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for v in &mut self.views {
            fix(&mut v.camera);
            v.mask
                .iter_mut()
                .chain(v.depth.iter_mut())
                .chain(v.mesh.iter_mut())
                .for_each(fix);
        }
        if let InitSpec::Polyline { path } = &mut self.init {
            fix(path);
        }
    }

    /// Read every view's camera, mask and depth. Meshes are rendered to depth
    /// in their own coordinates.
    pub fn load_views(&self) -> Result<Vec<ViewTarget<f64>>> {
        self.views
            .iter()
            .map(|v| {
                let camera = Camera::load(&v.camera)?;
                let mask = v.mask.as_ref().map(ImageBuffer::load_mask).transpose()?;
                let depth = match (&v.depth, &v.mesh) {
                    (Some(d), _) => Some(load_depth(d)?),
                    (None, Some(m)) => Some(render_depth(&load_mesh(m, false)?, &camera)),
                    (None, None) => None,
                };
                let view = ViewTarget {
                    camera,
                    mask,
                    depth,
                    guidance_id: v.guidance_id.clone(),
                };
                view.validate().map_err(|e| match e {
                    Error::DimensionMismatch { expected, actual } => Error::format(
                        v.mask.as_ref().unwrap_or(&v.camera),
                        format!("image is {actual}, camera is {expected}"),
                    ),
                    other => other,
                })?;
                Ok(view)
            })
            .collect()
    }

    pub fn width_epsilon(&self) -> f64 {
        self.width_epsilon.unwrap_or(0.02 * (self.width_max - self.width_min))
    }

    pub fn validate(&self) -> Result<()> {
        check(self.iterations >= 1, || "iterations must be >= 1".into())?;
        check(self.control_count >= 4, || {
            format!("control_count {} is below 4", self.control_count)
        })?;
        for &r in &self.reinit_iters {
            check(r < self.iterations, || {
                format!("reinit iteration {r} is not below iterations {}", self.iterations)
            })?;
        }
        if self.refine_count > 0 {
            check(self.refine_iter < self.iterations, || {
                format!(
                    "refine_iter {} is not below iterations {}",
                    self.refine_iter, self.iterations
                )
            })?;
        }
        check(self.history_window >= 1, || "history_window must be >= 1".into())?;
        check(self.alpha > 0.0 && self.alpha <= 1.0, || {
            format!("alpha {} outside (0, 1]", self.alpha)
        })?;
        check(self.mmse_levels >= 1, || "mmse_levels must be >= 1".into())?;
        for (name, v) in [
            ("lambda_i", self.lambda_i),
            ("lambda_g", self.lambda_g),
            ("lambda_mmse", self.lambda_mmse),
            ("lambda_clip", self.lambda_clip),
            ("lr_position", self.lr_position),
            ("lr_width", self.lr_width),
        ] {
            check(v >= 0.0 && v.is_finite(), || {
                format!("{name} must be finite and >= 0, got {v}")
            })?;
        }
        if let Some(s) = self.jerk_scale {
            check(s >= 0.0 && s.is_finite(), || {
                format!("jerk_scale must be finite and >= 0, got {s}")
            })?;
        }
        let [b1, b2] = self.adam_betas;
        check((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2), || {
            format!("adam_betas {b1}, {b2} outside [0, 1)")
        })?;
        check(self.adam_eps > 0.0, || "adam_eps must be positive".into())?;
        check(self.width_min >= 0.0 && self.width_max > self.width_min, || {
            format!("width range [{}, {}] is empty", self.width_min, self.width_max)
        })?;
        check(
            self.initial_width > self.width_min && self.initial_width < self.width_max,
            || {
                format!(
                    "initial_width {} must lie strictly inside the width range",
                    self.initial_width
                )
            },
        )?;
        let eps = self.width_epsilon();
        check(eps > 0.0 && eps.is_finite(), || {
            format!("width_epsilon must be positive, got {eps}")
        })?;
        check(self.epsilon_px > 0.0, || {
            format!("epsilon_px must be positive, got {}", self.epsilon_px)
        })?;
        self.raster.validate()?;
        self.visibility.validate()?;
        for (i, v) in self.views.iter().enumerate() {
            check(v.mask.is_some() || v.guidance_id.is_some(), || {
                format!("view {i} has neither mask nor guidance_id")
            })?;
            check(v.depth.is_none() || v.mesh.is_none(), || {
                format!("view {i} sets both depth and mesh")
            })?;
        }
        match &self.init {
            InitSpec::Sphere { radius } => check(*radius > 0.0, || format!("init radius {radius} must be positive"))?,
            InitSpec::SilhouetteCone { view, .. } => {
                let has_mask = self.views.get(*view).is_some_and(|v| v.mask.is_some());
                check(has_mask, || format!("silhouette init view {view} has no mask"))?;
            }
            InitSpec::Polyline { .. } => {}
        }
        Ok(())
    }
}
