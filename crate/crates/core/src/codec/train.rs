//! Seeded, resumable full-batch training.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::adam::{adam_step, AdamState};
use crate::nn::{ModelWeights, Network, NetworkConfig, ParamStore, Tensor};

use super::loss::{rd_loss_with_grads, LossNoise, LossOptions, PreparedCloud, RDLossBreakdown};

/// Rate weights of the six operating points, highest first.
pub const LAMBDAS: [f64; 6] = [1000.0, 800.0, 600.0, 400.0, 200.0, 100.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub learning_rate: f64,
    /// The learning rate halves after every this many steps.
    pub lr_halving_steps: usize,
    pub steps: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn for_lambda_index(index: usize) -> Result<Self> {
        let lambda1 = *LAMBDAS
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("lambda index {index} outside 0..6")))?;
        Ok(Self {
            lambda1,
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 > 0.0) || !(self.lambda2 >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda1 = {} must be positive and lambda2 = {} non-negative",
                self.lambda1, self.lambda2
            )));
        }
        if !(self.learning_rate > 0.0) || self.lr_halving_steps == 0 {
            return Err(Error::InvalidArgument("learning rate schedule".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        self.learning_rate * 0.5f64.powi((step / self.lr_halving_steps) as i32)
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions::new(self.lambda1, self.lambda2)
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: LAMBDAS[0],
            lambda2: 1.0,
            learning_rate: 1e-4,
            lr_halving_steps: 500,
            steps: 5000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    #[serde(rename = "D")]
    pub distortion: f64,
    pub entropy_bits: f64,
    pub hyper_bits: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub value: Tensor,
}

/// Everything needed to continue a run bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub step: usize,
    pub params: Vec<NamedTensor>,
    pub adam: AdamState,
    pub log: Vec<LossRecord>,
}

impl TrainState {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_vec(self).map_err(|e| Error::Checkpoint(format!("state: {e}")))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Checkpoint(format!("state: {e}")))
    }
}

pub struct Trainer {
    cfg: TrainConfig,
    network: Network,
    store: ParamStore,
    adam: AdamState,
    step: usize,
    log: Vec<LossRecord>,
    clouds: Vec<PreparedCloud>,
}

fn step_rng(seed: u64, step: usize, cloud: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((step as u64) << 16) | cloud as u64);
    rng
}

impl Trainer {
    /// Fresh weights drawn from `cfg.seed`.
    pub fn new(network: &NetworkConfig, cfg: TrainConfig, clouds: Vec<PreparedCloud>) -> Result<Self> {
        cfg.validate()?;
        if clouds.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        let w = ModelWeights::init(network, cfg.seed)?;
        let network = w.network().clone();
        let store = w.into_params();
        let adam = AdamState::new(&store);
        Ok(Self {
            cfg,
            network,
            store,
            adam,
            step: 0,
            log: Vec::new(),
            clouds,
        })
    }

    pub fn from_state(state: TrainState, clouds: Vec<PreparedCloud>) -> Result<Self> {
        let mut store = ParamStore::new();
        for p in state.params {
            store.add(p.name, p.value)?;
        }
        let w = ModelWeights::from_params(&state.network, store.clone())?;
        if state.adam.m.len() != store.len() {
            return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
        }
        let mut t = Self::new(&state.network, state.train, clouds)?;
        t.network = w.network().clone();
        // keep full precision; the checkpoint wrapper rounds to f32
        t.store = store;
        t.adam = state.adam;
        t.step = state.step;
        t.log = state.log;
        Ok(t)
    }

    pub fn state(&self) -> TrainState {
        TrainState {
            network: self.network.config.clone(),
            train: self.cfg.clone(),
            step: self.step,
            params: self
                .store
                .ids()
                .map(|id| NamedTensor {
                    name: self.store.name(id).to_string(),
                    value: self.store.get(id).clone(),
                })
                .collect(),
            adam: self.adam.clone(),
            log: self.log.clone(),
        }
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn log(&self) -> &[LossRecord] {
        &self.log
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn weights(&self) -> Result<ModelWeights> {
        ModelWeights::from_params(&self.network.config, self.store.clone())
    }

    /// Loss at the current weights averaged over the clouds, then one Adam
    /// update.
    pub fn step(&mut self) -> Result<LossRecord> {
        let opts = self.cfg.loss_options();
        let n = self.clouds.len() as f64;
        let mut acc: Option<Vec<Tensor>> = None;
        let mut sum = RDLossBreakdown {
            distortion: 0.0,
            entropy_bits: 0.0,
            hyper_bits: 0.0,
            total: 0.0,
        };
        for (c, prep) in self.clouds.iter().enumerate() {
            let mut rng = step_rng(self.cfg.seed, self.step, c);
            let noise = LossNoise::sample(prep, &self.network, &mut rng);
            let (b, grads) = rd_loss_with_grads(prep, &self.network, &self.store, &noise, &opts).map_err(|e| match e {
                Error::NonFiniteLoss { detail, .. } => Error::NonFiniteLoss {
                    step: self.step,
                    detail: format!("cloud {c}: {detail}"),
                },
                e => e,
            })?;
            sum.distortion += b.distortion / n;
            sum.entropy_bits += b.entropy_bits / n;
            sum.hyper_bits += b.hyper_bits / n;
            sum.total += b.total / n;
            match &mut acc {
                None => acc = Some(grads),
                Some(a) => a.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
            }
        }
        let mut grads = acc.expect("at least one cloud");
        for g in &mut grads {
            *g = g.map(|v| v / n);
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                detail: format!("non-finite gradient for {}", self.store.names()[i]),
            });
        }
        let record = LossRecord {
            step: self.step,
            distortion: sum.distortion,
            entropy_bits: sum.entropy_bits,
            hyper_bits: sum.hyper_bits,
            total: sum.total,
        };
        adam_step(&mut self.store, &grads, self.cfg.lr_at(self.step), &mut self.adam)?;
        self.step += 1;
        self.log.push(record);
        Ok(record)
    }

    /// Steps until `cfg.steps`, calling `on_step` after each one.
    pub fn run(&mut self, mut on_step: impl FnMut(&LossRecord)) -> Result<()> {
        while self.step < self.cfg.steps {
            let r = self.step()?;
            on_step(&r);
        }
        Ok(())
    }
}

pub fn write_log_csv(log: &[LossRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for r in log {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_log_csv(path: impl AsRef<Path>) -> Result<Vec<LossRecord>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize().map(|rec| rec.map_err(|e| Error::csv(path, e))).collect()
}
