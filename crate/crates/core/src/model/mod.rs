//! The three DL-SVM architectures, their training loop and checkpoints.

mod checkpoint;
mod train;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{Conv2d, Dense, Dropout, Flatten, GruStack, Layer, LeakyRelu, MaxPool2d, Mode, Param, Reshape};
use crate::rng::{self, substream, Stream};
use crate::svm::{argmax_rows, OvaTargets, Reduction, SvmHead};
use crate::tensor::{conv_output_extent, Padding, Scalar, Tensor};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{
    evaluate, train, CsvLog, EpochEval, MemorySink, MetricsSink, Session, StepRecord, TrainOptions, TrainSummary,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    CnnSvm,
    GruSvm,
    MlpSvm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::CnnSvm, ModelKind::GruSvm, ModelKind::MlpSvm];
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::CnnSvm => "cnn-svm",
            ModelKind::GruSvm => "gru-svm",
            ModelKind::MlpSvm => "mlp-svm",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn-svm" => Ok(ModelKind::CnnSvm),
            "gru-svm" => Ok(ModelKind::GruSvm),
            "mlp-svm" => Ok(ModelKind::MlpSvm),
            _ => Err(Error::config(format!(
                "unknown model `{s}` (expected cnn-svm, gru-svm or mlp-svm)"
            ))),
        }
    }
}

/// Everything needed to rebuild a model and rerun its training.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub c: f64,
    /// Dropout keep probability in front of the SVM head; `None` disables it.
    pub keep_prob: Option<f64>,
    pub seed: u64,
    pub reduction: Reduction,
    pub classes: usize,
    /// Images are `side × side`; the GRU reads rows as timesteps.
    pub side: usize,
    /// Conv filter counts (CNN), GRU cell sizes, or dense widths (MLP).
    pub hidden: Vec<usize>,
    /// Width of the CNN's fully connected layer. Unused by other kinds.
    pub fc_units: usize,
    pub kernel: usize,
    pub pool_stride: usize,
}

impl ModelSpec {
    /// Published hyper-parameters for each architecture.
    pub fn preset(kind: ModelKind) -> Self {
        let base = Self {
            kind,
            batch: 256,
            epochs: 100,
            lr: 1e-3,
            c: 10.0,
            keep_prob: Some(0.85),
            seed: 42,
            reduction: Reduction::Sum,
            classes: 25,
            side: 32,
            hidden: Vec::new(),
            fc_units: 1024,
            kernel: 5,
            pool_stride: 2,
        };
        match kind {
            ModelKind::CnnSvm => Self {
                hidden: vec![36, 72],
                ..base
            },
            ModelKind::GruSvm => Self {
                hidden: vec![256; 5],
                ..base
            },
            ModelKind::MlpSvm => Self {
                hidden: vec![512, 256, 128],
                c: 0.5,
                keep_prob: None,
                ..base
            },
        }
    }

    pub fn input_dim(&self) -> usize {
        self.side * self.side
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.batch == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be finite and ≥ 0, got {}", self.lr));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad(format!("C must be positive, got {}", self.c));
        }
        if let Some(p) = self.keep_prob {
            if !(p > 0.0 && p <= 1.0) {
                return bad(format!("keep probability must lie in (0, 1], got {p}"));
            }
        }
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.side == 0 {
            return bad("image side must be positive".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad(format!(
                "hidden sizes must be non-empty and positive, got {:?}",
                self.hidden
            ));
        }
        if self.kind == ModelKind::CnnSvm {
            if self.hidden.len() != 2 {
                return bad(format!("cnn-svm takes two conv filter counts, got {:?}", self.hidden));
            }
            if self.kernel == 0 || self.pool_stride == 0 || self.fc_units == 0 {
                return bad("kernel, pool stride and fc units must be positive".into());
            }
            self.cnn_flat_dim()?;
        }
        Ok(())
    }

    /// Flattened feature count after the two conv/pool stages.
    pub fn cnn_flat_dim(&self) -> Result<usize> {
        let mut side = self.side;
        for _ in 0..2 {
            let (conv, _) = conv_output_extent(side, self.kernel, 1, Padding::Same)?;
            if conv < 2 {
                return Err(Error::config(format!("side {} too small for two 2×2 pools", self.side)));
            }
            side = (conv - 2) / self.pool_stride + 1;
        }
        Ok(side * side * self.hidden[1])
    }
}

/// A layer stack feeding an SVM head.
pub struct Model<T: Scalar = f32> {
    spec: ModelSpec,
    trunk: Vec<Box<dyn Layer<T>>>,
    head: SvmHead<T>,
}

impl<T: Scalar> fmt::Debug for Model<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("spec", &self.spec)
            .field("layers", &self.layer_names())
            .finish()
    }
}

impl<T: Scalar> Model<T> {
    /// Builds the architecture and draws initial weights from the init
    /// substream of `spec.seed`.
    pub fn build(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = substream(spec.seed, Stream::Init);
        let s = spec.side;
        let mut trunk: Vec<Box<dyn Layer<T>>> = Vec::new();
        let features = match spec.kind {
            ModelKind::CnnSvm => {
                let (f1, f2) = (spec.hidden[0], spec.hidden[1]);
                trunk.push(Box::new(Reshape::new("reshape", &[s, s, 1])));
                trunk.push(Box::new(Conv2d::new(
                    "conv1",
                    spec.kernel,
                    1,
                    f1,
                    1,
                    Padding::Same,
                    &mut rng,
                )));
                trunk.push(Box::new(LeakyRelu::new("act1")));
                trunk.push(Box::new(MaxPool2d::new("pool1", 2, spec.pool_stride)));
                trunk.push(Box::new(Conv2d::new(
                    "conv2",
                    spec.kernel,
                    f1,
                    f2,
                    1,
                    Padding::Same,
                    &mut rng,
                )));
                trunk.push(Box::new(LeakyRelu::new("act2")));
                trunk.push(Box::new(MaxPool2d::new("pool2", 2, spec.pool_stride)));
                trunk.push(Box::new(Flatten::new("flatten")));
                trunk.push(Box::new(Dense::new(
                    "fc1",
                    spec.cnn_flat_dim()?,
                    spec.fc_units,
                    &mut rng,
                )));
                trunk.push(Box::new(LeakyRelu::new("act3")));
                spec.fc_units
            }
            ModelKind::GruSvm => {
                trunk.push(Box::new(Reshape::new("reshape", &[s, s])));
                trunk.push(Box::new(GruStack::new("gru", s, &spec.hidden, &mut rng)?));
                *spec.hidden.last().expect("validated")
            }
            ModelKind::MlpSvm => {
                let mut d_in = spec.input_dim();
                for (i, &h) in spec.hidden.iter().enumerate() {
                    trunk.push(Box::new(Dense::new(&format!("fc{}", i + 1), d_in, h, &mut rng)));
                    trunk.push(Box::new(LeakyRelu::new(&format!("act{}", i + 1))));
                    d_in = h;
                }
                d_in
            }
        };
        if let Some(p) = spec.keep_prob {
            trunk.push(Box::new(Dropout::new("dropout", p, spec.seed)?));
        }
        let head = SvmHead::new(spec.classes, features, spec.c, spec.reduction, &mut rng)?;
        Ok(Self {
            spec: spec.clone(),
            trunk,
            head,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Changes the epoch budget, e.g. to continue training a checkpoint.
    pub fn set_epochs(&mut self, epochs: usize) {
        self.spec.epochs = epochs;
    }

    pub fn head(&self) -> &SvmHead<T> {
        &self.head
    }

    pub fn layer_names(&self) -> Vec<&str> {
        self.trunk
            .iter()
            .map(|l| l.name())
            .chain(std::iter::once("svm"))
            .collect()
    }

    /// All trainable parameters, trunk first, head last.
    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out: Vec<&Param<T>> = self.trunk.iter().flat_map(|l| l.params()).collect();
        out.extend(self.head.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out: Vec<&mut Param<T>> = self.trunk.iter_mut().flat_map(|l| l.params_mut()).collect();
        out.extend(self.head.params_mut());
        out
    }

    /// `(layer name, parameter count)` for each layer that has parameters.
    pub fn param_counts(&self) -> Vec<(String, usize)> {
        self.trunk
            .iter()
            .map(|l| (l.name().to_string(), l.params().iter().map(|p| p.value.len()).sum()))
            .chain(std::iter::once((
                "svm".to_string(),
                self.head.params().iter().map(|p| p.value.len()).sum(),
            )))
            .filter(|(_, n)| *n > 0)
            .collect()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, d) = x.dims2()?;
        if d != self.spec.input_dim() {
            return Err(Error::dim(format!(
                "model expects {} features per sample, got {d}",
                self.spec.input_dim()
            )));
        }
        Ok(())
    }

    /// Inference-mode class scores for `[n × side²]` input.
    pub fn scores(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.trunk {
            h = layer.infer(&h)?;
        }
        self.head.scores(&h)
    }

    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.scores(x)?))
    }

    /// Keys the dropout masks to `(seed, step)` so any step can be replayed.
    fn reseed(&mut self, step: u64) {
        for (i, layer) in self.trunk.iter_mut().enumerate() {
            layer.reseed(rng::mix(self.spec.seed ^ rng::mix(step) ^ (i as u64)));
        }
    }

    /// Train-mode forward through trunk and head, returning scores. Checks
    /// every activation for NaN/∞ and names the offending layer.
    fn forward_train(&mut self, x: &Tensor<T>, step: u64) -> Result<Tensor<T>> {
        self.check_input(x)?;
        self.reseed(step);
        let mut h = x.clone();
        for layer in &mut self.trunk {
            h = layer.forward(&h, Mode::Train)?;
            if !h.all_finite() {
                return Err(non_finite(step, layer.name(), "activation"));
            }
        }
        let s = self.head.forward(&h)?;
        if !s.all_finite() {
            return Err(non_finite(step, "svm", "scores"));
        }
        Ok(s)
    }

    /// Training objective for one batch at `step`, without touching the
    /// gradients. Used for finite-difference probes.
    pub fn objective(&mut self, x: &Tensor<T>, labels: &[usize], step: u64) -> Result<f64> {
        let s = self.forward_train(x, step)?;
        let targets = OvaTargets::encode(labels, self.spec.classes)?;
        Ok(self.head.loss(&s, &targets)?.loss)
    }

    /// Zeroes gradients, runs forward and backward for one batch and
    /// returns `(loss, train-mode predictions)`.
    pub fn compute_gradients(&mut self, x: &Tensor<T>, labels: &[usize], step: u64) -> Result<(f64, Vec<usize>)> {
        self.zero_grads();
        let s = self.forward_train(x, step)?;
        let targets = OvaTargets::encode(labels, self.spec.classes)?;
        let loss = self.head.loss(&s, &targets)?;
        if !loss.loss.is_finite() {
            return Err(non_finite(step, "svm", "loss"));
        }
        let mut g = self.head.backward(&loss)?;
        for layer in self.trunk.iter_mut().rev() {
            g = layer.backward(&g)?;
            if !g.all_finite() {
                return Err(non_finite(step, layer.name(), "gradient"));
            }
        }
        for p in self
            .head
            .params()
            .into_iter()
            .chain(self.trunk.iter().flat_map(|l| l.params()))
        {
            if !p.grad.all_finite() {
                return Err(non_finite(step, &p.name, "parameter gradient"));
            }
        }
        Ok((loss.loss, argmax_rows(&s)))
    }
}

fn non_finite(step: u64, layer: &str, what: &str) -> Error {
    Error::Numeric {
        step,
        layer: layer.to_string(),
        message: format!("{what} contains NaN or infinity"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_follow_published_table() {
        let cnn = ModelSpec::preset(ModelKind::CnnSvm);
        let gru = ModelSpec::preset(ModelKind::GruSvm);
        let mlp = ModelSpec::preset(ModelKind::MlpSvm);
        for s in [&cnn, &gru, &mlp] {
            assert_eq!((s.batch, s.epochs, s.lr), (256, 100, 1e-3));
        }
        assert_eq!((cnn.c, cnn.keep_prob), (10.0, Some(0.85)));
        assert_eq!(
            (gru.c, gru.keep_prob, gru.hidden.clone()),
            (10.0, Some(0.85), vec![256; 5])
        );
        assert_eq!(
            (mlp.c, mlp.keep_prob, mlp.hidden.clone()),
            (0.5, None, vec![512, 256, 128])
        );
    }

    #[test]
    fn cnn_parameter_counts_match_shape_trace() {
        // 32 → conv same → 32 → pool → 16 → conv → 16 → pool → 8; 8·8·72 = 4608
        let spec = ModelSpec::preset(ModelKind::CnnSvm);
        assert_eq!(spec.cnn_flat_dim().unwrap(), 4608);
        let m = Model::<f32>::build(&spec).unwrap();
        let counts: Vec<(String, usize)> = m.param_counts();
        let expected = [
            ("conv1", 5 * 5 * 36 + 36),
            ("conv2", 5 * 5 * 36 * 72 + 72),
            ("fc1", 4608 * 1024 + 1024),
            ("svm", 1024 * 25 + 25),
        ];
        assert_eq!(counts.len(), expected.len());
        for ((name, n), (en, ev)) in counts.iter().zip(expected) {
            assert_eq!((name.as_str(), *n), (en, ev));
        }
    }

    #[test]
    fn literal_pool_stride_one_trace() {
        let spec = ModelSpec {
            pool_stride: 1,
            ..ModelSpec::preset(ModelKind::CnnSvm)
        };
        assert_eq!(spec.cnn_flat_dim().unwrap(), 30 * 30 * 72);
    }

    #[test]
    fn gru_and_mlp_parameter_counts() {
        let gru = Model::<f32>::build(&ModelSpec::preset(ModelKind::GruSvm)).unwrap();
        let first = 3 * ((32 + 256) * 256 + 256);
        let rest = 3 * ((256 + 256) * 256 + 256);
        assert_eq!(gru.param_counts()[0], ("gru".to_string(), first + 4 * rest));
        let mlp = Model::<f32>::build(&ModelSpec::preset(ModelKind::MlpSvm)).unwrap();
        let names = mlp.param_counts();
        assert_eq!(
            names,
            vec![
                ("fc1".to_string(), 1024 * 512 + 512),
                ("fc2".to_string(), 512 * 256 + 256),
                ("fc3".to_string(), 256 * 128 + 128),
                ("svm".to_string(), 128 * 25 + 25),
            ]
        );
    }

    #[test]
    fn mlp_zero_input_gives_zero_scores() {
        let m = Model::<f32>::build(&ModelSpec::preset(ModelKind::MlpSvm)).unwrap();
        let s = m.scores(&Tensor::zeros(&[3, 1024])).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));
        assert_eq!(m.predict(&Tensor::zeros(&[3, 1024])).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn unknown_kind_and_bad_spec_are_config_errors() {
        assert!(matches!("rnn-svm".parse::<ModelKind>(), Err(Error::Config(_))));
        let spec = ModelSpec {
            keep_prob: Some(1.5),
            ..ModelSpec::preset(ModelKind::MlpSvm)
        };
        assert!(matches!(Model::<f32>::build(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.to_string().parse::<ModelKind>().unwrap(), k);
        }
    }

    #[test]
    fn nan_input_is_reported_with_step_and_layer() {
        let spec = ModelSpec {
            hidden: vec![4],
            side: 2,
            classes: 3,
            ..ModelSpec::preset(ModelKind::MlpSvm)
        };
        let mut m = Model::<f64>::build(&spec).unwrap();
        let x = Tensor::new(vec![1, 4], vec![0.0, f64::NAN, 1.0, 2.0]).unwrap();
        match m.compute_gradients(&x, &[1], 17) {
            Err(Error::Numeric { step, layer, .. }) => assert_eq!((step, layer.as_str()), (17, "fc1")),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }
}
