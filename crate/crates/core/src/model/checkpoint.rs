//! Checkpoint file: a text manifest followed by raw f32 tensors.
//!
//! ```text
//! DLSVM1
//! version = 1
//! kind = mlp-svm
//! batch = 256
//! ...                          (every ModelSpec field)
//! step = 2500
//! adam_beta1 = 0.9
//! adam_beta2 = 0.999
//! adam_eps = 0.00000001
//! adam_t = 2500
//! class = Adialer.C            (one line per class, in label order)
//! mu = ...
//! sigma = ...
//! tensor = fc1.weight 1024 512 (one line per tensor, payload order)
//! ...
//! tensor = adam.m.fc1.weight 1024 512
//! ...
//! end
//! ```
//!
//! The payload holds each listed tensor's values as little-endian f32,
//! row-major, with no padding. Floats in the manifest use Rust's shortest
//! round-trip formatting, so load → save reproduces the file exactly.

use std::path::Path;

use super::train::Session;
use super::{Model, ModelKind, ModelSpec};
use crate::data::header::{read_f32s, write_f32s, Entry, Header, HeaderWriter};
use crate::data::{write_atomic, Standardizer};
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::svm::Reduction;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &str = "DLSVM1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug)]
pub struct Checkpoint {
    pub session: Session,
    /// Standardization statistics of the dataset the model was trained on.
    pub standardizer: Standardizer,
    pub class_names: Vec<String>,
}

impl Checkpoint {
    pub fn new(session: Session, standardizer: Standardizer, class_names: Vec<String>) -> Result<Self> {
        let spec = session.model.spec();
        if class_names.len() != spec.classes {
            return Err(Error::config(format!(
                "{} class names for a {}-class model",
                class_names.len(),
                spec.classes
            )));
        }
        if standardizer.dim() != spec.input_dim() {
            return Err(Error::config(format!(
                "standardization covers {} features, model reads {}",
                standardizer.dim(),
                spec.input_dim()
            )));
        }
        Ok(Self {
            session,
            standardizer,
            class_names,
        })
    }

    pub fn model(&self) -> &Model<f32> {
        &self.session.model
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let spec = self.session.model.spec();
        let adam = &self.session.adam;
        let mut h = HeaderWriter::new(CHECKPOINT_MAGIC);
        h.field("version", CHECKPOINT_VERSION)
            .field("kind", spec.kind)
            .field("batch", spec.batch)
            .field("epochs", spec.epochs)
            .field("lr", spec.lr)
            .field("c", spec.c)
            .field(
                "keep_prob",
                spec.keep_prob.map_or_else(|| "none".to_string(), |p| p.to_string()),
            )
            .field("seed", spec.seed)
            .field("reduction", spec.reduction)
            .field("classes", spec.classes)
            .field("side", spec.side)
            .list("hidden", &spec.hidden)
            .field("fc_units", spec.fc_units)
            .field("kernel", spec.kernel)
            .field("pool_stride", spec.pool_stride)
            .field("step", self.session.step)
            .field("adam_lr", adam.lr)
            .field("adam_beta1", adam.beta1)
            .field("adam_beta2", adam.beta2)
            .field("adam_eps", adam.eps)
            .field("adam_t", adam.steps());
        for name in &self.class_names {
            h.field("class", name);
        }
        h.list("mu", &self.standardizer.mu)
            .list("sigma", &self.standardizer.sigma);

        let params = self.session.model.params();
        let mut tensors: Vec<(String, &Tensor<f32>)> = params.iter().map(|p| (p.name.clone(), &p.value)).collect();
        for (prefix, moments) in [("adam.m.", adam.first_moments()), ("adam.v.", adam.second_moments())] {
            for (p, t) in params.iter().zip(moments) {
                tensors.push((format!("{prefix}{}", p.name), t));
            }
        }
        for (name, t) in &tensors {
            let dims: Vec<String> = t.shape().iter().map(ToString::to_string).collect();
            h.field("tensor", format!("{name} {}", dims.join(" ")));
        }
        let mut out = h.finish();
        for (_, t) in &tensors {
            write_f32s(&mut out, t.data());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let h = Header::parse(bytes, CHECKPOINT_MAGIC)?;
        let version: u32 = h.get("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(
                h.entry("version")?.offset,
                format!("unsupported checkpoint version {version}"),
            ));
        }
        let spec = read_spec(&h)?;
        spec.validate()
            .map_err(|e| Error::format(h.entry("kind").map_or(0, |e| e.offset), e.to_string()))?;

        let class_names: Vec<String> = h.all("class").map(|e| e.value.clone()).collect();
        let standardizer = Standardizer {
            mu: h.get_list("mu")?,
            sigma: h.get_list("sigma")?,
        };
        let tensor_entries: Vec<&Entry> = h.all("tensor").collect();

        let mut model = Model::<f32>::build(&spec)?;
        let mut pos = h.payload_offset;
        let mut listed = tensor_entries.iter();
        let mut next_tensor = |expected_name: &str, expected_shape: &[usize], pos: &mut usize| -> Result<Tensor<f32>> {
            let e = listed
                .next()
                .ok_or_else(|| Error::format(h.payload_offset as u64, format!("missing tensor `{expected_name}`")))?;
            let (name, shape) = parse_tensor_entry(e)?;
            if name != expected_name || shape != expected_shape {
                return Err(Error::format(
                    e.offset,
                    format!("expected tensor `{expected_name}` {expected_shape:?}, found `{name}` {shape:?}"),
                ));
            }
            let data = read_f32s(bytes, pos, shape.iter().product())?;
            Tensor::new(shape, data)
        };

        for p in model.params_mut() {
            let shape = p.value.shape().to_vec();
            p.value = next_tensor(&p.name, &shape, &mut pos)?;
        }
        let adam_t: u64 = h.get("adam_t")?;
        let moment_count = tensor_entries.len().saturating_sub(model.params().len());
        let (mut m, mut v) = (Vec::new(), Vec::new());
        if moment_count > 0 {
            let layout: Vec<(String, Vec<usize>)> = model
                .params()
                .iter()
                .map(|p| (p.name.clone(), p.value.shape().to_vec()))
                .collect();
            for (name, shape) in &layout {
                m.push(next_tensor(&format!("adam.m.{name}"), shape, &mut pos)?);
            }
            for (name, shape) in &layout {
                v.push(next_tensor(&format!("adam.v.{name}"), shape, &mut pos)?);
            }
        }
        if listed.next().is_some() {
            return Err(Error::format(h.payload_offset as u64, "unexpected extra tensors"));
        }
        if pos != bytes.len() {
            return Err(Error::format(pos as u64, "trailing bytes after tensor payload"));
        }
        let adam = Adam::from_state(
            h.get("adam_lr")?,
            h.get("adam_beta1")?,
            h.get("adam_beta2")?,
            h.get("adam_eps")?,
            adam_t,
            m,
            v,
        )?;
        let session = Session {
            model,
            adam,
            step: h.get("step")?,
        };
        Self::new(session, standardizer, class_names).map_err(|e| Error::format(h.payload_offset as u64, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn read_spec(h: &Header) -> Result<ModelSpec> {
    let parse_str = |key: &str| -> Result<String> { h.get::<String>(key) };
    let kind: ModelKind = parse_str("kind")?
        .parse()
        .map_err(|_| Error::format(h.entry("kind").map_or(0, |e| e.offset), "unknown model kind"))?;
    let reduction: Reduction = parse_str("reduction")?
        .parse()
        .map_err(|_| Error::format(h.entry("reduction").map_or(0, |e| e.offset), "unknown reduction"))?;
    let keep = parse_str("keep_prob")?;
    let keep_prob = if keep == "none" {
        None
    } else {
        Some(h.get::<f64>("keep_prob")?)
    };
    Ok(ModelSpec {
        kind,
        batch: h.get("batch")?,
        epochs: h.get("epochs")?,
        lr: h.get("lr")?,
        c: h.get("c")?,
        keep_prob,
        seed: h.get("seed")?,
        reduction,
        classes: h.get("classes")?,
        side: h.get("side")?,
        hidden: h.get_list("hidden")?,
        fc_units: h.get("fc_units")?,
        kernel: h.get("kernel")?,
        pool_stride: h.get("pool_stride")?,
    })
}

fn parse_tensor_entry(e: &Entry) -> Result<(String, Vec<usize>)> {
    let mut parts = e.value.split_whitespace();
    let name = parts
        .next()
        .ok_or_else(|| Error::format(e.offset, "tensor line without a name"))?
        .to_string();
    let shape = parts
        .map(|d| {
            d.parse()
                .map_err(|_| Error::format(e.offset, format!("bad dimension `{d}`")))
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok((name, shape))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Standardizer;

    fn small_spec(kind: ModelKind) -> ModelSpec {
        let hidden = match kind {
            ModelKind::CnnSvm => vec![2, 3],
            _ => vec![5, 4],
        };
        ModelSpec {
            side: 8,
            classes: 3,
            hidden,
            fc_units: 6,
            batch: 4,
            ..ModelSpec::preset(kind)
        }
    }

    fn trained_checkpoint(kind: ModelKind) -> Checkpoint {
        let spec = small_spec(kind);
        let mut session = Session::new(&spec).unwrap();
        let x = Tensor::from_fn(&[4, 64], |i| ((i * 13 % 17) as f32 - 8.0) / 5.0);
        for _ in 0..3 {
            session.train_step(&x, &[0, 1, 2, 1]).unwrap();
        }
        let stats = Standardizer {
            mu: (0..64).map(|i| i as f32 * 0.1).collect(),
            sigma: vec![1.5; 64],
        };
        Checkpoint::new(session, stats, vec!["a".into(), "b b".into(), "c".into()]).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        for kind in ModelKind::ALL {
            let ck = trained_checkpoint(kind);
            let bytes = ck.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back.to_bytes(), bytes, "{kind}");
            assert_eq!(back.session.step, 3);
            assert_eq!(back.session.adam.steps(), 3);
            assert_eq!(back.class_names, ck.class_names);
        }
    }

    #[test]
    fn forward_is_bitwise_identical_after_round_trip() {
        for kind in ModelKind::ALL {
            let ck = trained_checkpoint(kind);
            let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
            for seed in 0..100u64 {
                let x = Tensor::from_fn(&[1, 64], |i| {
                    (crate::rng::mix(seed * 64 + i as u64) % 2001) as f32 / 1000.0 - 1.0
                });
                assert_eq!(ck.model().scores(&x).unwrap(), back.model().scores(&x).unwrap());
            }
        }
    }

    #[test]
    fn untrained_session_round_trips_without_moments() {
        let session = Session::new(&small_spec(ModelKind::MlpSvm)).unwrap();
        let ck = Checkpoint::new(
            session,
            Standardizer {
                mu: vec![0.0; 64],
                sigma: vec![1.0; 64],
            },
            vec!["x".into(), "y".into(), "z".into()],
        )
        .unwrap();
        let bytes = ck.to_bytes();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap().to_bytes(), bytes);
    }

    #[test]
    fn corrupt_files_are_format_errors() {
        let bytes = trained_checkpoint(ModelKind::MlpSvm).to_bytes();
        for cut in [0, 5, 40, bytes.len() / 2, bytes.len() - 1] {
            match Checkpoint::from_bytes(&bytes[..cut]) {
                Err(Error::Format { .. }) => {}
                other => panic!("cut {cut}: {other:?}"),
            }
        }
        let mut bad = bytes.clone();
        bad[..6].copy_from_slice(b"DLSVM9");
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(Error::Format { offset: 0, .. })
        ));
        let text = String::from_utf8_lossy(&bytes).replacen("version = 1", "version = 7", 1);
        assert!(matches!(
            Checkpoint::from_bytes(text.as_bytes()),
            Err(Error::Format { .. })
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(Checkpoint::from_bytes(&extra), Err(Error::Format { .. })));
    }
}
