use crate::error::{Error, Result};
use crate::guidance::{request_external_gradient, GuidanceClient};
use crate::image::ImageBuffer;
use crate::projection::{backprop_projection, project_wire, BatchGrad, Camera};
use crate::raster::{rasterize, rasterize_backward};
use crate::scalar::Real;
use crate::scene::{attenuate_backward, attenuate_batch};
use crate::spline::Wire;

use super::config::{BridgeFailure, RunConfig};

/// One supervised view.
#[derive(Clone, Debug)]
pub struct ViewTarget<T> {
    pub camera: Camera<T>,
    pub mask: Option<ImageBuffer<T>>,
    /// Scene depth for soft occlusion.
    pub depth: Option<ImageBuffer<T>>,
    pub guidance_id: Option<String>,
}

impl<T: Real> ViewTarget<T> {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if self.mask.is_none() && self.guidance_id.is_none() {
            return Err(Error::Config("view needs a mask or a guidance_id".into()));
        }
        for img in self.mask.iter().chain(&self.depth) {
            img.ensure_dims(self.camera.width, self.camera.height)?;
        }
        Ok(())
    }
}

/// Render of the wire as seen by the view, with soft occlusion when the view
/// carries depth.
pub fn render_view<T: Real>(
    wire: &Wire<T>,
    view: &ViewTarget<T>,
    epsilon_px: T,
    raster: &crate::raster::RasterSettings,
    visibility: &crate::scene::VisibilityParams,
) -> Result<ImageBuffer<T>> {
    let batch = project_wire(wire, &view.camera, epsilon_px)?;
    let batch = match &view.depth {
        Some(d) => attenuate_batch(&batch, d, visibility).0,
        None => batch,
    };
    rasterize(&batch, view.camera.width, view.camera.height, raster)
}

fn pool<T: Real>(img: &ImageBuffer<T>) -> ImageBuffer<T> {
    let (w, h) = (img.width() / 2, img.height() / 2);
    let quarter = T::lit(0.25);
    ImageBuffer::from_fn(w, h, |x, y| {
        (img.get(2 * x, 2 * y) + img.get(2 * x + 1, 2 * y) + img.get(2 * x, 2 * y + 1) + img.get(2 * x + 1, 2 * y + 1))
            * quarter
    })
}

/// Multi-scale MSE between `render` and `alpha * mask` over a mean-pooled
/// pyramid, with its exact gradient on the render. Odd trailing rows and
/// columns do not reach the coarser levels. Levels that would be empty are
/// dropped.
pub fn mmse_loss<T: Real>(
    render: &ImageBuffer<T>,
    mask: &ImageBuffer<T>,
    alpha: T,
    levels: usize,
) -> Result<(T, ImageBuffer<T>)> {
    mask.ensure_dims(render.width(), render.height())?;
    if !(alpha > T::zero() && alpha <= T::one()) {
        return Err(Error::Config(format!("alpha {alpha} outside (0, 1]")));
    }
    if levels == 0 {
        return Err(Error::Config("mmse levels must be >= 1".into()));
    }
    let mut r = vec![render.clone()];
    let mut m = vec![mask.map(|v| v * alpha)];
    while r.len() < levels && r.last().unwrap().width() >= 2 && r.last().unwrap().height() >= 2 {
        let next_r = pool(r.last().unwrap());
        let next_m = pool(m.last().unwrap());
        r.push(next_r);
        m.push(next_m);
    }
    let l = T::from_count(r.len());
    let mut loss = T::zero();
    let mut grads = Vec::with_capacity(r.len());
    for (ri, mi) in r.iter().zip(&m) {
        let n = T::from_count(ri.data().len());
        let mut g = ImageBuffer::new(ri.width(), ri.height());
        let mut sum = T::zero();
        for ((gv, &a), &b) in g.data_mut().iter_mut().zip(ri.data()).zip(mi.data()) {
            let d = a - b;
            sum += d * d;
            *gv = T::lit(2.0) * d / (n * l);
        }
        loss += sum / (n * l);
        grads.push(g);
    }
    // pooling adjoint, coarse to fine
    let quarter = T::lit(0.25);
    for k in (1..grads.len()).rev() {
        let coarse = grads[k].clone();
        let fine = &mut grads[k - 1];
        for y in 0..coarse.height() {
            for x in 0..coarse.width() {
                let g = coarse.get(x, y) * quarter;
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let v = fine.get(2 * x + dx, 2 * y + dy);
                    fine.set(2 * x + dx, 2 * y + dy, v + g);
                }
            }
        }
    }
    Ok((loss, grads.swap_remove(0)))
}

/// Jerk multiplier from the config, or `spans^-5` of `wire`.
pub fn jerk_scale<T: Real>(config: &RunConfig, wire: &Wire<T>) -> T {
    match config.jerk_scale {
        Some(s) => T::lit(s),
        None => T::from_count(wire.spans().len()).powi(-5),
    }
}

/// Loss weights and per-view settings used by [`total_loss`].
#[derive(Clone, Debug)]
pub struct LossSettings<T> {
    pub lambda_i: T,
    pub lambda_g: T,
    pub lambda_mmse: T,
    pub lambda_clip: T,
    pub alpha: T,
    pub mmse_levels: usize,
    pub jerk_scale: T,
    pub epsilon_px: T,
    pub raster: crate::raster::RasterSettings,
    pub visibility: crate::scene::VisibilityParams,
    pub bridge_failure: BridgeFailure,
}

impl<T: Real> LossSettings<T> {
    pub fn from_config(config: &RunConfig, jerk_scale: T) -> Self {
        Self {
            lambda_i: T::lit(config.lambda_i),
            lambda_g: T::lit(config.lambda_g),
            lambda_mmse: T::lit(config.lambda_mmse),
            lambda_clip: T::lit(config.lambda_clip),
            alpha: T::lit(config.alpha),
            mmse_levels: config.mmse_levels,
            jerk_scale,
            epsilon_px: T::lit(config.epsilon_px),
            raster: config.raster,
            visibility: config.visibility,
            bridge_failure: config.bridge_failure,
        }
    }
}

/// Loss terms and gradient of one evaluation.
#[derive(Clone, Debug)]
pub struct LossEval<T> {
    pub total: T,
    /// `L_I`, before `lambda_i`.
    pub image: T,
    /// Scaled jerk energy, before `lambda_g`.
    pub jerk: T,
    /// MMSE term of each view, before `lambda_mmse`.
    pub views: Vec<T>,
    /// Views whose bridge request failed and was skipped.
    pub skipped: Vec<usize>,
    /// Gradient on the raw control parameters.
    pub grad: Vec<[T; 4]>,
}

/// Image loss and gradient of a single view. Bridge-supplied gradients are
/// transported without a loss value.
pub fn view_loss<T: Real>(
    wire: &Wire<T>,
    view: &ViewTarget<T>,
    view_id: &str,
    settings: &LossSettings<T>,
    bridge: Option<&mut dyn GuidanceClient>,
    iter_progress: f64,
) -> Result<(T, Vec<[T; 4]>)> {
    let cam = &view.camera;
    let (w, h) = (cam.width, cam.height);
    let batch = project_wire(wire, cam, settings.epsilon_px)?;
    let attenuated = view
        .depth
        .as_ref()
        .map(|d| attenuate_batch(&batch, d, &settings.visibility));
    let drawn = attenuated.as_ref().map_or(&batch, |(b, _)| b);
    let render = rasterize(drawn, w, h, &settings.raster)?;
    let mut loss = T::zero();
    let mut pixel_grad = ImageBuffer::new(w, h);
    if let Some(mask) = &view.mask {
        if settings.lambda_mmse > T::zero() {
            let (l, g) = mmse_loss(&render, mask, settings.alpha, settings.mmse_levels)?;
            loss = l;
            for (p, q) in pixel_grad.data_mut().iter_mut().zip(g.data()) {
                *p += settings.lambda_mmse * *q;
            }
        }
    }
    if let (Some(_), Some(client)) = (&view.guidance_id, bridge) {
        if settings.lambda_clip > T::zero() {
            let g = request_external_gradient(client, &render, view_id, iter_progress)?;
            for (p, q) in pixel_grad.data_mut().iter_mut().zip(g.data()) {
                *p += settings.lambda_clip * *q;
            }
        }
    }
    let strokes = rasterize_backward(drawn, w, h, &settings.raster, &pixel_grad)?;
    let mut grad = BatchGrad {
        strokes,
        depths: vec![[T::zero(); 2]; batch.len()],
    };
    if let Some((_, att)) = &attenuated {
        grad = attenuate_backward(&batch, att, &grad);
    }
    Ok((loss, backprop_projection(&batch, &grad, wire, cam)?))
}

/// Shortens the trait object lifetime so the client can be lent per call.
pub(crate) fn reborrow<'a>(b: &'a mut Option<&mut dyn GuidanceClient>) -> Option<&'a mut dyn GuidanceClient> {
    match b {
        Some(c) => Some(&mut **c),
        None => None,
    }
}

/// `lambda_i * sum_v L_v + lambda_g * jerk` and its gradient. Views are
/// reduced in order. Views carrying a `guidance_id` use `bridge` when one is
/// given.
pub fn total_loss<T: Real>(
    wire: &Wire<T>,
    views: &[ViewTarget<T>],
    settings: &LossSettings<T>,
    mut bridge: Option<&mut dyn GuidanceClient>,
    iter_progress: f64,
) -> Result<LossEval<T>> {
    if views.is_empty() {
        return Err(Error::Config("at least one view is required".into()));
    }
    let n = wire.control_count();
    let mut grad = vec![[T::zero(); 4]; n];
    let mut image = T::zero();
    let mut per_view = Vec::with_capacity(views.len());
    let mut skipped = Vec::new();
    if settings.lambda_i > T::zero() {
        for (i, view) in views.iter().enumerate() {
            let id = view.guidance_id.clone().unwrap_or_else(|| format!("view{i}"));
            match view_loss(wire, view, &id, settings, reborrow(&mut bridge), iter_progress) {
                Ok((l, g)) => {
                    image += settings.lambda_mmse * l;
                    per_view.push(l);
                    for (a, b) in grad.iter_mut().zip(&g) {
                        for k in 0..4 {
                            a[k] += settings.lambda_i * b[k];
                        }
                    }
                }
                Err(Error::Bridge(e)) if settings.bridge_failure == BridgeFailure::Skip => {
                    log::warn!("view {id}: skipping after bridge failure: {e}");
                    skipped.push(i);
                    per_view.push(T::zero());
                }
                Err(e) => return Err(e),
            }
        }
    } else {
        per_view.resize(views.len(), T::zero());
    }
    let mut jerk = T::zero();
    if settings.lambda_g > T::zero() {
        let (e, g) = wire.jerk_energy();
        jerk = e * settings.jerk_scale;
        let s = settings.lambda_g * settings.jerk_scale;
        for (a, b) in grad.iter_mut().zip(&g) {
            for k in 0..4 {
                a[k] += s * b[k];
            }
        }
    }
    Ok(LossEval {
        total: settings.lambda_i * image + settings.lambda_g * jerk,
        image,
        jerk,
        views: per_view,
        skipped,
        grad,
    })
}
