//! Single-file JSON checkpoints.
//!
//! Tensors are keyed `component.layer.kind`, e.g. `generator.fc1.weight`;
//! weights are stored `in x out`, row-major.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::ClassId;
use crate::error::{Error, Result};
use crate::losses::LossReport;
use crate::nets::{Mlp, MlpSpec, ModelDims, ModelParams};
use crate::trainer::{TrainConfig, TrainedModel};

pub const SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: u32,
    pub config: TrainConfig,
    pub dims: ModelDims,
    pub pool_classes: Vec<ClassId>,
    pub tensors: BTreeMap<String, Tensor>,
    #[serde(default)]
    pub loss_log: Vec<LossReport>,
    #[serde(default)]
    pub critic_updates: usize,
    #[serde(default)]
    pub generator_updates: usize,
}

fn put(tensors: &mut BTreeMap<String, Tensor>, name: &str, mlp: &Mlp) {
    let (i, h, o) = (mlp.spec.in_dim, mlp.spec.hidden_dim, mlp.spec.out_dim);
    let entries = [
        ("fc1.weight", vec![i, h], mlp.w1.iter().copied().collect()),
        ("fc1.bias", vec![h], mlp.b1.to_vec()),
        ("fc2.weight", vec![h, o], mlp.w2.iter().copied().collect()),
        ("fc2.bias", vec![o], mlp.b2.to_vec()),
    ];
    for (kind, shape, data) in entries {
        tensors.insert(format!("{name}.{kind}"), Tensor { shape, data });
    }
}

fn take(tensors: &BTreeMap<String, Tensor>, name: &str, spec: MlpSpec) -> Result<Mlp> {
    let get = |kind: &str, shape: Vec<usize>| -> Result<Vec<f64>> {
        let key = format!("{name}.{kind}");
        let t = tensors
            .get(&key)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
        if t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
            return Err(Error::Checkpoint(format!("{key}: shape {:?}, expected {shape:?}", t.shape)));
        }
        Ok(t.data.clone())
    };
    let (i, h, o) = (spec.in_dim, spec.hidden_dim, spec.out_dim);
    let shaped = |v: Vec<f64>, r: usize, c: usize| Array2::from_shape_vec((r, c), v).expect("shape checked");
    Ok(Mlp {
        spec,
        w1: shaped(get("fc1.weight", vec![i, h])?, i, h),
        b1: Array1::from(get("fc1.bias", vec![h])?),
        w2: shaped(get("fc2.weight", vec![h, o])?, h, o),
        b2: Array1::from(get("fc2.bias", vec![o])?),
    })
}

impl Checkpoint {
    pub fn from_model(model: &TrainedModel) -> Self {
        let mut tensors = BTreeMap::new();
        for (name, mlp) in model.params.named_mlps() {
            put(&mut tensors, name, mlp);
        }
        Self {
            schema: SCHEMA,
            config: model.config.clone(),
            dims: model.params.dims,
            pool_classes: model.params.pool_classes.clone(),
            tensors,
            loss_log: model.loss_log.clone(),
            critic_updates: model.critic_updates,
            generator_updates: model.generator_updates,
        }
    }

    pub fn into_model(self) -> Result<TrainedModel> {
        if self.schema != SCHEMA {
            return Err(Error::Checkpoint(format!("schema {} is not supported (expected {SCHEMA})", self.schema)));
        }
        let d = self.dims;
        let t = &self.tensors;
        let semantic_decoder = if t.contains_key("semantic_decoder.fc1.weight") {
            Some(take(t, "semantic_decoder", d.semantic_decoder())?)
        } else {
            None
        };
        let params = ModelParams {
            dims: d,
            encoder: take(t, "encoder", d.encoder())?,
            generator: take(t, "generator", d.generator())?,
            disc_cond: take(t, "disc_cond", d.disc_cond())?,
            disc_uncond: take(t, "disc_uncond", d.disc_uncond())?,
            reg_classifier: take(t, "reg_classifier", d.reg_classifier())?,
            semantic_decoder,
            pool_classes: self.pool_classes,
        };
        if params.pool_classes.len() != d.k {
            return Err(Error::Checkpoint(format!(
                "{} pool classes for a {}-way regularizer",
                params.pool_classes.len(),
                d.k
            )));
        }
        Ok(TrainedModel {
            params,
            config: self.config,
            step_seconds: vec![0.0; self.loss_log.len()],
            loss_log: self.loss_log,
            critic_updates: self.critic_updates,
            generator_updates: self.generator_updates,
        })
    }
}

pub fn save_checkpoint(model: &TrainedModel, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&Checkpoint::from_model(model))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedModel> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let ck: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
    ck.into_model()
}
