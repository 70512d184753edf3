//! Training loop, inference helpers and checkpoints.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{sigmoid, Graph};
use crate::config::RunConfig;
use crate::data::{augment, Batch, Sample};
use crate::error::{Error, Result};
use crate::heads::total_loss;
use crate::model::Model;
use crate::nn::{Adam, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub total: f64,
    pub terms: Vec<(String, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub steps: Vec<StepRecord>,
}

impl History {
    pub fn totals(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.total).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("step,epoch,total");
        if let Some(first) = self.steps.first() {
            for (name, _) in &first.terms {
                out.push(',');
                out.push_str(name);
            }
        }
        out.push('\n');
        for s in &self.steps {
            out.push_str(&format!("{},{},{}", s.step, s.epoch, s.total));
            for (_, v) in &s.terms {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Model, parameters and optimizer state for one run.
pub struct Trainer {
    pub model: Model,
    pub params: ParamStore,
    pub opt: Adam,
    pub history: History,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let (model, params) = Model::new(cfg)?;
        Ok(Trainer {
            model,
            params,
            opt: Adam::new(cfg.lr),
            history: History::default(),
            // Offset so batch order does not share a stream with initialization.
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0000_0000_0001),
        })
    }

    fn batch_for(&self, batch: &Batch) -> Option<Tensor> {
        self.model.uses_depth().then(|| batch.depths.clone())
    }

    /// One optimizer step. Returns the total loss before the update.
    pub fn step(&mut self, batch: &Batch, epoch: usize) -> Result<f64> {
        let step = self.history.steps.len();
        let (record, grads) = {
            let g = Graph::with_params(&self.params);
            let depths = self.batch_for(batch);
            let out = self.model.forward(&g, &batch.images, depths.as_ref())?;
            let loss = total_loss(&g, out.main, &out.sides, &batch.masks, self.model.cfg.loss_mode)?;
            let terms: Vec<(String, f64)> = loss
                .terms
                .iter()
                .map(|(n, v)| (n.clone(), g.value(*v).item()))
                .collect();
            if let Some((name, _)) = terms.iter().find(|(_, v)| !v.is_finite()) {
                return Err(Error::NonFinite {
                    step,
                    term: name.clone(),
                });
            }
            let total = g.value(loss.total).item();
            let grads = g.backward(loss.total);
            (
                StepRecord {
                    step,
                    epoch,
                    total,
                    terms,
                },
                grads,
            )
        };
        self.opt.step(&mut self.params, &grads);
        let total = record.total;
        self.history.steps.push(record);
        Ok(total)
    }

    /// Runs `cfg.epochs` passes (or `cfg.max_steps` steps) over `samples`.
    pub fn fit(&mut self, samples: &[Sample]) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::Input("training set is empty".into()));
        }
        let cfg = self.model.cfg.clone();
        let size = self.model.input_size();
        if let Some(s) = samples.iter().find(|s| s.size() != (size, size)) {
            return Err(Error::Input(format!(
                "sample {} is {:?}, model expects {size}x{size}",
                s.id,
                s.size()
            )));
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(cfg.batch) {
                if cfg.max_steps > 0 && self.history.steps.len() >= cfg.max_steps {
                    return Ok(());
                }
                let owned: Vec<Sample> = if cfg.augment {
                    chunk
                        .iter()
                        .map(|&i| augment(&samples[i], self.rng.next_u64()))
                        .collect()
                } else {
                    chunk.iter().map(|&i| samples[i].clone()).collect()
                };
                let refs: Vec<&Sample> = owned.iter().collect();
                let total = self.step(&Batch::from_samples(&refs), epoch)?;
                log::debug!("step {} epoch {epoch} loss {total:.5}", self.history.steps.len() - 1);
            }
            if let Some(last) = self.history.steps.last() {
                log::info!("epoch {epoch}: loss {:.5}", last.total);
            }
        }
        Ok(())
    }
}

/// Trains a fresh model on `samples`.
pub fn train(cfg: &RunConfig, samples: &[Sample]) -> Result<Trainer> {
    let mut t = Trainer::new(cfg)?;
    t.fit(samples)?;
    Ok(t)
}

/// Main and side probabilities for one image, each `[h, w]`.
pub struct Prediction {
    pub main: Tensor,
    pub sides: Vec<Tensor>,
}

fn to_probs(t: &Tensor) -> Vec<Tensor> {
    let (b, _, h, w) = t.dims4();
    (0..b)
        .map(|i| t.index0(i).into_reshaped(&[h, w]).map(sigmoid))
        .collect()
}

/// Inference on a batch; the model must match the input size.
pub fn predict_batch(model: &Model, params: &ParamStore, images: &Tensor, depths: Option<&Tensor>) -> Result<Vec<Prediction>> {
    let g = Graph::with_params(params);
    let out = model.forward(&g, images, depths)?;
    let main = to_probs(&g.value(out.main));
    let sides: Vec<Vec<Tensor>> = out.sides.iter().map(|&s| to_probs(&g.value(s))).collect();
    Ok(main
        .into_iter()
        .enumerate()
        .map(|(i, m)| Prediction {
            main: m,
            sides: sides.iter().map(|s| s[i].clone()).collect(),
        })
        .collect())
}

/// Main-head probabilities for every sample, in order.
pub fn predict_samples(model: &Model, params: &ParamStore, samples: &[Sample], batch: usize) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let b = Batch::from_samples(&refs);
        let depths = model.uses_depth().then_some(&b.depths);
        out.extend(predict_batch(model, params, &b.images, depths)?.into_iter().map(|p| p.main));
    }
    Ok(out)
}

const MAGIC: &[u8; 8] = b"DGACKPT1";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: RunConfig,
    seed: u64,
    params: Vec<(String, Vec<usize>)>,
}

/// Layout: magic, little-endian `u64` header length, JSON header, then all
/// parameter values as little-endian `f64` in header order.
pub fn save_checkpoint(path: &Path, cfg: &RunConfig, params: &ParamStore) -> Result<()> {
    let header = CheckpointHeader {
        config: cfg.clone(),
        seed: cfg.seed,
        params: params
            .iter()
            .map(|(_, e)| (e.name.clone(), e.value().shape().to_vec()))
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + json.len() + 8 * params.num_scalars());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, e) in params.iter() {
        for v in e.value().data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Rebuilds the model from the stored config and restores every parameter.
pub fn load_checkpoint(path: &Path) -> Result<(Model, ParamStore)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Input(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    let (model, mut params) = Model::new(&header.config)?;
    if header.params.len() != params.len() {
        return Err(bad("parameter count does not match the configuration"));
    }
    let mut offset = 16 + hlen;
    for (name, shape) in &header.params {
        let id = params
            .find(name)
            .ok_or_else(|| bad(&format!("unknown parameter {name}")))?;
        if params.get(id).shape() != shape.as_slice() {
            return Err(bad(&format!("shape mismatch for {name}")));
        }
        let n: usize = shape.iter().product();
        let raw = bytes
            .get(offset..offset + 8 * n)
            .ok_or_else(|| bad("truncated parameter data"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.set(id, Tensor::from_vec(shape, data));
        offset += 8 * n;
    }
    if offset != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok((model, params))
}

/// Mean total loss over `samples` without updating anything.
pub fn dataset_loss(model: &Model, params: &ParamStore, samples: &[Sample], batch: usize) -> Result<f64> {
    let mut sum = 0.0;
    for chunk in samples.chunks(batch.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let b = Batch::from_samples(&refs);
        let g = Graph::with_params(params);
        let depths = model.uses_depth().then_some(&b.depths);
        let out = model.forward(&g, &b.images, depths)?;
        let loss = total_loss(&g, out.main, &out.sides, &b.masks, model.cfg.loss_mode)?;
        sum += g.value(loss.total).item() * chunk.len() as f64;
    }
    Ok(sum / samples.len() as f64)
}
