//! Toy regression tasks and a plain gradient-descent loop.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::geometry::{self, PaddingMode, Point, Projection, ProjectionMode};
use crate::oracle;
use crate::tensor::{Rng, Shape, Tensor};
use crate::upsamplers::attention::forward_state;
use crate::upsamplers::backward::backward_from_state;
use crate::upsamplers::{init_weights, InitScheme, LdaAquWeights, UpsampleConfig};

/// Loss above which training is treated as diverged.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// Learning-rate grid searched when tuning the toy tasks.
pub const LR_GRID: [f64; 7] = [1e-1, 3e-1, 1.0, 3.0, 1e-2, 1e-3, 1e-4];

/// Best rate from [`LR_GRID`] for both toy tasks at the default config.
pub const DEFAULT_LR: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Targets are the bilinear upsampling of the inputs.
    BilinearTarget,
    /// Targets read the inputs at reference points displaced by [`shift_field`].
    ShiftedTarget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTask {
    pub inputs: Tensor,
    pub targets: Tensor,
    pub kind: TaskKind,
    pub alpha: f64,
    pub projection_mode: ProjectionMode,
    pub padding: PaddingMode,
}

/// Displacement in input pixels at normalized output position `(u, v)`.
/// Mostly a constant shift of `(1.4, 1.0)` with a gentle ripple; the largest
/// displacement has length 2.
pub fn shift_field(u: f64, v: f64) -> Point {
    [1.4 + 0.2 * (TAU * v).sin(), 1.0 + 0.2 * (TAU * u).cos()]
}

/// Task with the default projection and zero padding.
pub fn make_task(
    kind: TaskKind,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    alpha: f64,
    rng: &mut Rng,
) -> Result<ToyTask> {
    make_task_with(
        kind,
        n,
        c,
        h,
        w,
        alpha,
        ProjectionMode::default(),
        PaddingMode::default(),
        rng,
    )
}

/// [`make_task`] with an explicit projection and padding.
#[allow(clippy::too_many_arguments)]
pub fn make_task_with(
    kind: TaskKind,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    alpha: f64,
    mode: ProjectionMode,
    padding: PaddingMode,
    rng: &mut Rng,
) -> Result<ToyTask> {
    let field = match kind {
        TaskKind::BilinearTarget => None,
        TaskKind::ShiftedTarget => Some(shift_field as fn(f64, f64) -> Point),
    };
    build_task(kind, [n, c, h, w], alpha, mode, padding, field, rng)
}

pub(crate) fn build_task(
    kind: TaskKind,
    [n, c, h, w]: [usize; 4],
    alpha: f64,
    mode: ProjectionMode,
    padding: PaddingMode,
    field: Option<fn(f64, f64) -> Point>,
    rng: &mut Rng,
) -> Result<ToyTask> {
    if n == 0 || c == 0 || h == 0 || w == 0 {
        return Err(Error::config("task extents must be positive"));
    }
    let inputs = Tensor::uniform(Shape::new(n, c, h, w), -1.0, 1.0, rng);
    let targets = match field {
        None => oracle::naive_bilinear(&inputs, alpha, mode, padding)?,
        Some(field) => {
            let proj = Projection::new(h, w, alpha, mode)?;
            let (oh, ow) = (proj.out_h, proj.out_w);
            let coords: Vec<Point> = geometry::make_output_grid(oh, ow)
                .into_iter()
                .map(|(x, y)| {
                    let p = proj.apply(x, y);
                    let s = field(x as f64 / (ow - 1) as f64, y as f64 / (oh - 1) as f64);
                    [p[0] + s[0], p[1] + s[1]]
                })
                .collect();
            let samples = geometry::bilinear_sample(&inputs, &coords, padding);
            let shape = Shape::new(n, c, oh, ow);
            let mut data = vec![0.0; shape.numel()];
            for b in 0..n {
                for ch in 0..c {
                    for i in 0..oh * ow {
                        data[(b * c + ch) * oh * ow + i] = samples.get(b, i, ch);
                    }
                }
            }
            Tensor::from_vec(shape, data)?
        }
    };
    Ok(ToyTask {
        inputs,
        targets,
        kind,
        alpha,
        projection_mode: mode,
        padding,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub steps: usize,
    pub lr: f64,
    /// Train the uniform-stencil variant; the offset predictor stays at its
    /// initial value and is bypassed.
    pub freeze_offsets: bool,
}

#[derive(Debug, Clone)]
pub struct TrainLog {
    /// `losses[k]` is the loss after `k` updates, so there are `steps + 1`.
    pub losses: Vec<f64>,
    pub weights: LdaAquWeights,
}

impl TrainLog {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("trace holds the initial loss")
    }
}

fn check_task(task: &ToyTask, config: &UpsampleConfig) -> Result<()> {
    config.validate_for(task.inputs.shape().c)?;
    if config.alpha != task.alpha
        || config.projection_mode != task.projection_mode
        || config.padding != task.padding
    {
        return Err(Error::config(
            "scale, projection and padding must match the task",
        ));
    }
    Ok(())
}

fn half_mse(y: &Tensor, t: &Tensor) -> f64 {
    let n = y.as_slice().len() as f64;
    let sum: f64 = y
        .as_slice()
        .iter()
        .zip(t.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    0.5 * sum / n
}

/// `0.5 * mean((y - target)^2)` for the given weights.
pub fn evaluate(
    task: &ToyTask,
    weights: &LdaAquWeights,
    config: &UpsampleConfig,
    freeze_offsets: bool,
) -> Result<f64> {
    check_task(task, config)?;
    let state = forward_state(&task.inputs, weights, config, !freeze_offsets)?;
    Ok(half_mse(&state.y, &task.targets))
}

/// Trains from weights drawn with `rng` (offset predictor at zero).
pub fn train(
    task: &ToyTask,
    config: &UpsampleConfig,
    opts: &TrainOptions,
    rng: &mut Rng,
) -> Result<TrainLog> {
    let weights = init_weights(
        config,
        task.inputs.shape().c,
        rng,
        InitScheme::XavierUniform,
    )?;
    train_from(task, config, opts, weights)
}

/// Plain gradient descent on `0.5 * mean((y - target)^2)`.
pub fn train_from(
    task: &ToyTask,
    config: &UpsampleConfig,
    opts: &TrainOptions,
    mut weights: LdaAquWeights,
) -> Result<TrainLog> {
    check_task(task, config)?;
    if !(opts.lr >= 0.0 && opts.lr.is_finite()) {
        return Err(Error::config(format!(
            "learning rate must be >= 0, got {}",
            opts.lr
        )));
    }
    let deform = !opts.freeze_offsets;
    let count = task.targets.as_slice().len() as f64;
    let mut losses = Vec::with_capacity(opts.steps + 1);
    for step in 0..=opts.steps {
        let state = forward_state(&task.inputs, &weights, config, deform)?;
        let loss = half_mse(&state.y, &task.targets);
        losses.push(loss);
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(Error::Divergence {
                step,
                loss,
                trace: losses,
            });
        }
        if step == opts.steps {
            break;
        }
        let upstream = state.y.zip_map(&task.targets, |y, t| (y - t) / count)?;
        let grads = backward_from_state(&task.inputs, &weights, config, &state, &upstream)?;
        weights.axpy(-opts.lr, &grads.grad_params)?;
    }
    Ok(TrainLog { losses, weights })
}
