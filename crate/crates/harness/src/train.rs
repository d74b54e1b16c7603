use std::fmt;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vsod_core::losses::{final_loss, total_loss};
use vsod_core::syndata::{augment, Sample};
use vsod_core::{Graph, Model};

use crate::checkpoint::{Checkpoint, RngState};
use crate::config::TrainConfig;
use crate::data::{make_batch, resize_sample};
use crate::error::{HarnessError, Result};
use crate::optim::Adam;

/// Stream of the augmentation RNG; data order uses one stream per epoch
/// above `ORDER_STREAM_BASE`. Model initialization has its own generator.
const AUGMENT_STREAM: u64 = 1;
const ORDER_STREAM_BASE: u64 = 1 << 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub final_loss: f64,
    pub gate_loss: f64,
    pub total: f64,
    pub wall: f64,
}

impl fmt::Display for StepLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step {} l_f {:.6} l_cag {:.6} total {:.6} wall {:.3}",
            self.step, self.final_loss, self.gate_loss, self.total, self.wall
        )
    }
}

pub struct Trainer {
    config: TrainConfig,
    model: Model,
    adam: Adam,
    step: u64,
    rng: ChaCha8Rng,
    data: Vec<Sample>,
    started: Instant,
}

fn prepare(config: &TrainConfig, data: Vec<Sample>) -> Result<Vec<Sample>> {
    if data.is_empty() {
        return Err(HarnessError::Input("training set is empty".into()));
    }
    let n = config.input_size;
    data.iter().map(|s| resize_sample(s, n, n)).collect()
}

impl Trainer {
    pub fn new(config: TrainConfig, data: Vec<Sample>) -> Result<Self> {
        config.validate()?;
        let data = prepare(&config, data)?;
        let model = Model::new(&config.model(), config.seed)?;
        let adam = Adam::new(model.params(), config.learning_rate);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(AUGMENT_STREAM);
        Ok(Trainer {
            config,
            model,
            adam,
            step: 0,
            rng,
            data,
            started: Instant::now(),
        })
    }

    pub fn resume(ckpt: Checkpoint, data: Vec<Sample>) -> Result<Self> {
        ckpt.config.validate()?;
        let data = prepare(&ckpt.config, data)?;
        let mut model = Model::new(&ckpt.config.model(), ckpt.config.seed)?;
        model.load_params(ckpt.params)?;
        Ok(Trainer {
            config: ckpt.config,
            model,
            adam: ckpt.adam,
            step: ckpt.step,
            rng: ckpt.rng.restore(),
            data,
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            step: self.step,
            rng: RngState::capture(&self.rng),
            params: self.model.params().clone(),
            adam: self.adam.clone(),
        }
    }

    /// Sample indices of a step: consecutive positions in a per-epoch
    /// permutation that depends only on the seed and the data size.
    pub fn batch_indices(&self, step: u64) -> Vec<usize> {
        let n = self.data.len();
        let bs = self.config.batch_size;
        let mut cached: Option<(usize, Vec<usize>)> = None;
        (0..bs)
            .map(|j| {
                let pos = step as usize * bs + j;
                let epoch = pos / n;
                if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
                    let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
                    rng.set_stream(ORDER_STREAM_BASE + epoch as u64);
                    let mut perm: Vec<usize> = (0..n).collect();
                    perm.shuffle(&mut rng);
                    cached = Some((epoch, perm));
                }
                cached.as_ref().unwrap().1[pos % n]
            })
            .collect()
    }

    pub fn train_step(&mut self) -> Result<StepLog> {
        let indices = self.batch_indices(self.step);
        let samples: Vec<Sample> = indices
            .iter()
            .map(|&i| {
                let seed: u64 = self.rng.random();
                if self.config.augment {
                    augment(&self.data[i], seed)
                } else {
                    self.data[i].clone()
                }
            })
            .collect();
        let batch = make_batch(&samples)?;
        let (log, grads) = {
            let mut g = Graph::new(self.model.params());
            let rgb = g.input(batch.rgb);
            let flow = g.input(batch.flow);
            let out = self.model.forward(&mut g, rgb, flow)?;
            let (objective, lf, lcag) = if self.config.gate_loss {
                let t = total_loss(&mut g, out.prediction, &out.aux, &batch.mask)?;
                let lcag = t.cag.map_or(0.0, |v| g.value(v).data()[0]);
                (t.total, g.value(t.final_loss.total).data()[0], lcag)
            } else {
                let f = final_loss(&mut g, out.prediction, &batch.mask)?;
                (f.total, g.value(f.total).data()[0], 0.0)
            };
            let total = g.value(objective).data()[0];
            if !total.is_finite() {
                return Err(HarnessError::Diverged {
                    step: self.step as usize + 1,
                    what: "total loss".into(),
                    value: total,
                });
            }
            let grads = g.backward(objective)?;
            let log = StepLog {
                step: self.step + 1,
                final_loss: lf,
                gate_loss: lcag,
                total,
                wall: 0.0,
            };
            (log, grads)
        };
        self.adam.step(self.model.params_mut(), &grads);
        if let Some((_, name, _)) = self.model.params().iter().find(|(_, _, t)| !t.is_finite()) {
            return Err(HarnessError::Diverged {
                step: log.step as usize,
                what: format!("parameter {name}"),
                value: f64::NAN,
            });
        }
        self.step += 1;
        Ok(StepLog {
            wall: self.started.elapsed().as_secs_f64(),
            ..log
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<StepLog>,
}

/// Trains until `config.max_steps`, writing step records to `log`. With
/// `out_dir`, checkpoints go to `out_dir/checkpoint.bin` every
/// `checkpoint_interval` steps and at the end.
pub fn train(trainer: &mut Trainer, out_dir: Option<&Path>, log: &mut dyn Write) -> Result<TrainOutcome> {
    let interval = trainer.config.checkpoint_interval as u64;
    let target = trainer.config.max_steps as u64;
    let ckpt_path = out_dir.map(|d| d.join("checkpoint.bin"));
    let mut records = Vec::new();
    while trainer.step < target {
        let rec = trainer.train_step()?;
        writeln!(log, "{rec}").map_err(|e| HarnessError::io("<log>", e))?;
        records.push(rec);
        if let (Some(p), true) = (&ckpt_path, interval > 0 && trainer.step % interval == 0) {
            trainer.checkpoint().save(p)?;
        }
    }
    let checkpoint = trainer.checkpoint();
    if let Some(p) = &ckpt_path {
        checkpoint.save(p)?;
    }
    Ok(TrainOutcome {
        checkpoint,
        log: records,
    })
}
