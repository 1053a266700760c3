//! End-to-end finite-difference check of every model parameter.
//!
//! Runs a miniature version of each architecture in f64, computes the
//! analytic gradient of the full training objective (dropout mask held
//! fixed), and compares it element by element with central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::model::{Model, ModelKind, ModelSpec};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Smallest denominator ever used for the relative error.
pub const REL_FLOOR: f64 = 1e-7;

const BATCH: usize = 4;
/// Fresh batches tried before giving up on finding a smooth point.
const MAX_DRAWS: usize = 8;

/// Small stand-ins for the full architectures.
pub fn mini_spec(kind: ModelKind) -> ModelSpec {
    let base = ModelSpec {
        batch: BATCH,
        epochs: 1,
        classes: 3,
        seed: 7,
        ..ModelSpec::preset(kind)
    };
    match kind {
        ModelKind::CnnSvm => ModelSpec {
            side: 8,
            hidden: vec![2, 2],
            fc_units: 4,
            ..base
        },
        ModelKind::GruSvm => ModelSpec {
            side: 4,
            hidden: vec![4, 4],
            ..base
        },
        ModelKind::MlpSvm => ModelSpec {
            side: 4,
            hidden: vec![6, 5, 4],
            ..base
        },
    }
}

/// Worst relative error among one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCheck {
    pub layer: String,
    pub elements: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub kind: ModelKind,
    pub layers: Vec<LayerCheck>,
    /// Batches discarded because a probe crossed a kink.
    pub redraws: usize,
}

impl GradcheckReport {
    pub fn failures(&self) -> Vec<&LayerCheck> {
        self.layers.iter().filter(|l| exceeds(l.max_rel_err)).collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn max_rel_err(&self) -> f64 {
        self.layers.iter().map(|l| l.max_rel_err).fold(0.0, f64::max)
    }
}

/// Central differences of an objective of size `L` carry about
/// `ε_mach·L/STEP` of rounding noise. Gradient entries below
/// `noise / TOLERANCE` cannot be resolved to the tolerance at this step size,
/// so they are judged against that floor instead of their own magnitude.
pub fn noise_floor(objective: f64) -> f64 {
    (f64::EPSILON * objective.abs().max(1.0) / (STEP * TOLERANCE)).max(REL_FLOOR)
}

pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / scale
}

/// NaN counts as a failure.
fn exceeds(err: f64) -> bool {
    err.is_nan() || err > TOLERANCE
}

fn layer_of(param: &str) -> &str {
    param.rsplit_once('.').map_or(param, |(layer, _)| layer)
}

pub fn gradcheck(kind: ModelKind, seed: u64) -> Result<GradcheckReport> {
    gradcheck_spec(&ModelSpec {
        seed,
        ..mini_spec(kind)
    })
}

pub fn gradcheck_spec(spec: &ModelSpec) -> Result<GradcheckReport> {
    let mut model = Model::<f64>::build(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6772_6164);
    let mut last = None;
    for draw in 0..MAX_DRAWS {
        let n = spec.batch;
        let x = Tensor::from_fn(&[n, spec.input_dim()], |_| rng.sample(StandardNormal));
        let labels: Vec<usize> = (0..n)
            .map(|i| (i + rng.random_range(0..spec.classes)) % spec.classes)
            .collect();
        match check_draw(&mut model, &x, &labels)? {
            Some(layers) => {
                return Ok(GradcheckReport {
                    kind: spec.kind,
                    layers,
                    redraws: draw,
                })
            }
            None => last = Some(draw),
        }
    }
    // every draw landed on a kink; report it as a failure rather than loop
    Ok(GradcheckReport {
        kind: spec.kind,
        layers: vec![LayerCheck {
            layer: "(no smooth sample found)".into(),
            elements: 0,
            max_rel_err: f64::NAN,
        }],
        redraws: last.map_or(0, |d| d + 1),
    })
}

/// Checks one batch. Returns `None` when some perturbation straddles a
/// non-differentiable point (a LeakyReLU input or max-pool tie within the
/// step), detected by the finite-difference estimates disagreeing among
/// step sizes ε, ε/2 and ε/4.
fn check_draw(model: &mut Model<f64>, x: &Tensor<f64>, labels: &[usize]) -> Result<Option<Vec<LayerCheck>>> {
    let step = 0;
    model.compute_gradients(x, labels, step)?;
    let floor = noise_floor(model.objective(x, labels, step)?);
    let analytic: Vec<(String, Vec<f64>)> = model
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.grad.data().to_vec()))
        .collect();

    let mut layers: Vec<LayerCheck> = Vec::new();
    for (pi, (name, grad)) in analytic.iter().enumerate() {
        let mut worst = 0.0f64;
        for (e, &a) in grad.iter().enumerate() {
            let orig = model.params()[pi].value.data()[e];
            let mut central = |h: f64| -> Result<f64> {
                model.params_mut()[pi].value.data_mut()[e] = orig + h;
                let up = model.objective(x, labels, step)?;
                model.params_mut()[pi].value.data_mut()[e] = orig - h;
                let down = model.objective(x, labels, step)?;
                model.params_mut()[pi].value.data_mut()[e] = orig;
                Ok((up - down) / (2.0 * h))
            };
            let numeric = central(STEP)?;
            let mut err = rel_err(a, numeric, floor);
            if exceeds(err) {
                let half = central(STEP / 2.0)?;
                let quarter = central(STEP / 4.0)?;
                let consistent = rel_err(numeric, half, 2.0 * floor) <= TOLERANCE
                    && rel_err(half, quarter, 4.0 * floor) <= TOLERANCE;
                if !consistent {
                    return Ok(None);
                }
                if err.is_nan() {
                    err = f64::INFINITY;
                }
            }
            worst = worst.max(err);
        }
        let layer = layer_of(name);
        match layers.iter_mut().find(|l| l.layer == layer) {
            Some(l) => {
                l.elements += grad.len();
                l.max_rel_err = l.max_rel_err.max(worst);
            }
            None => layers.push(LayerCheck {
                layer: layer.to_string(),
                elements: grad.len(),
                max_rel_err: worst,
            }),
        }
    }
    Ok(Some(layers))
}
