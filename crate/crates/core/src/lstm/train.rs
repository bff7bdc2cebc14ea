use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{forward, gradients, ForwardMode, SeqExample};
use super::params::{Dims, LstmParams, ParamBlock};
use crate::error::{Error, Result};

/// Word-vector, hidden-state and head widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSizes {
    pub d_w: usize,
    pub d_h: usize,
    pub d_s: usize,
}

impl LayerSizes {
    pub const DESK: LayerSizes = LayerSizes {
        d_w: 64,
        d_h: 64,
        d_s: 32,
    };
    /// The 256/256/100 configuration; slow but feasible.
    pub const FULL: LayerSizes = LayerSizes {
        d_w: 256,
        d_h: 256,
        d_s: 100,
    };

    pub fn with_vocab(self, vocab: usize) -> Dims {
        Dims {
            vocab,
            d_w: self.d_w,
            d_h: self.d_h,
            d_s: self.d_s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub dropout_rate: f64,
    pub init_scale: f64,
    /// Global gradient-norm clip, applied to the batch-mean gradient.
    pub grad_clip: f64,
    pub sizes: LayerSizes,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            dropout_rate: 0.1,
            init_scale: 0.08,
            grad_clip: 5.0,
            sizes: LayerSizes::DESK,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: &str| Err(Error::validation(f, m));
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate", "must be a finite non-negative number");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate", "must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if !(self.init_scale >= 0.0) {
            return bad("init_scale", "must be non-negative");
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip", "must be positive");
        }
        let s = self.sizes;
        if s.d_w == 0 || s.d_h == 0 || s.d_s == 0 {
            return bad("sizes", "layer widths must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean squared residual per example under the epoch's dropout masks.
    pub mean_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: LstmParams,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn log_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss,wall_seconds\n");
        for e in &self.log {
            out.push_str(&format!("{},{},{:.3}\n", e.epoch, e.mean_loss, e.wall_seconds));
        }
        out
    }
}

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Initializes from `config.seed` and trains.
pub fn train(data: &[SeqExample], vocab_size: usize, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let dims = config.sizes.with_vocab(vocab_size);
    let params = LstmParams::init(dims, config.init_scale, &mut rng_for(config.seed, 0));
    train_from(params, data, config)
}

/// Mini-batch gradient descent on the squared residuals, starting at `params`.
/// Each step moves along the batch-mean gradient, clipped to `grad_clip` in
/// global norm.
pub fn train_from(mut params: LstmParams, data: &[SeqExample], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Input("no training examples".into()));
    }
    let mut shuffle_rng = rng_for(config.seed, SHUFFLE_STREAM);
    let mut dropout_rng = rng_for(config.seed, DROPOUT_STREAM);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let start = Instant::now();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut mode = ForwardMode::Train {
                dropout_rate: config.dropout_rate,
                rng: &mut dropout_rng,
            };
            let g = gradients(&params, chunk.iter().map(|&i| &data[i]), &mut mode)?;
            total += g.loss;
            if !g.loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            let mut step = config.learning_rate / chunk.len() as f64;
            let norm = g.grads.sq_norm().sqrt() / chunk.len() as f64;
            if norm > config.grad_clip {
                step *= config.grad_clip / norm;
            }
            if step == 0.0 {
                continue;
            }
            // the embedding gradient is zero outside the rows seen in the batch
            let d_w = params.dims.d_w;
            for &row in &g.touched_rows {
                let src = g.grads.embedding.row(row as usize);
                let dst = params.embedding.row_mut(row as usize);
                for k in 0..d_w {
                    dst[k] -= step * src[k];
                }
            }
            for ((name, dst), (_, src)) in params.blocks_mut().into_iter().zip(g.grads.blocks()) {
                if name == "E" {
                    continue;
                }
                for (p, d) in dst.iter_mut().zip(src) {
                    *p -= step * d;
                }
            }
        }
        let mean_loss = total / data.len() as f64;
        if !mean_loss.is_finite() || !params.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        log.push(EpochLog {
            epoch,
            mean_loss,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainOutcome { params, log })
}

/// Mean squared residual with dropout off.
pub fn eval_loss(params: &LstmParams, data: &[SeqExample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Input("no examples".into()));
    }
    let mut total = 0.0;
    for ex in data {
        let s = forward(params, &ex.ids, &mut ForwardMode::Eval)?;
        total += (ex.target - s).powi(2);
    }
    Ok(total / data.len() as f64)
}

pub const LSTM_FILE_VERSION: u32 = 1;

/// Persisted model: header plus base64 parameter blocks in fixed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmModelFile {
    pub version: u32,
    pub dims: Dims,
    pub vocab_hash: String,
    pub config: TrainConfig,
    pub blocks: Vec<ParamBlock>,
}

impl LstmModelFile {
    pub fn new(params: &LstmParams, vocab_hash: &str, config: &TrainConfig) -> Self {
        LstmModelFile {
            version: LSTM_FILE_VERSION,
            dims: params.dims,
            vocab_hash: vocab_hash.to_owned(),
            config: *config,
            blocks: params.to_blocks(),
        }
    }

    pub fn params(&self) -> Result<LstmParams> {
        if self.version != LSTM_FILE_VERSION {
            return Err(Error::Input(format!("unsupported LSTM model version {}", self.version)));
        }
        LstmParams::from_blocks(self.dims, &self.blocks)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs: 40,
            batch_size: 4,
            sizes: LayerSizes { d_w: 4, d_h: 4, d_s: 3 },
            ..Default::default()
        }
    }

    fn data() -> Vec<SeqExample> {
        (0..12)
            .map(|i| SeqExample::new(vec![(i % 5) as u32 + 2, (i % 3) as u32 + 2], 0.7))
            .collect()
    }

    #[test]
    fn constant_targets_are_fit() {
        let out = train(&data(), 8, &tiny_config()).unwrap();
        let first = out.log[0].mean_loss;
        let last = out.log.last().unwrap().mean_loss;
        assert!(last < 0.05 * first, "{first} -> {last}");
        assert!(eval_loss(&out.params, &data()).unwrap() < 0.01);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let cfg = TrainConfig {
            learning_rate: 0.0,
            dropout_rate: 0.0,
            epochs: 3,
            ..tiny_config()
        };
        let init = LstmParams::init(cfg.sizes.with_vocab(8), cfg.init_scale, &mut rng_for(cfg.seed, 0));
        let out = train(&data(), 8, &cfg).unwrap();
        assert_eq!(out.params, init);
        let losses: Vec<f64> = out.log.iter().map(|e| e.mean_loss).collect();
        assert!(losses.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12), "{losses:?}");
    }

    #[test]
    fn runs_are_bit_identical() {
        let a = train(&data(), 8, &tiny_config()).unwrap();
        let b = train(&data(), 8, &tiny_config()).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn divergence_names_the_epoch() {
        let cfg = TrainConfig {
            learning_rate: f64::MAX,
            grad_clip: f64::MAX,
            ..tiny_config()
        };
        let data: Vec<_> = (0..8).map(|i| SeqExample::new(vec![2 + i % 3], 1e6 * (i as f64 - 4.0))).collect();
        match train(&data, 8, &cfg) {
            Err(Error::Divergence { epoch }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = TrainConfig {
            dropout_rate: 1.0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Validation { ref field, .. }) if field == "dropout_rate"));
        assert!(train(&[], 8, &tiny_config()).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let out = train(&data(), 8, &tiny_config()).unwrap();
        let file = LstmModelFile::new(&out.params, "abc", &tiny_config());
        let json = file.to_json().unwrap();
        let back = LstmModelFile::from_json(&json).unwrap();
        assert_eq!(back.params().unwrap(), out.params);
        assert_eq!(back.to_json().unwrap(), json);
    }
}
