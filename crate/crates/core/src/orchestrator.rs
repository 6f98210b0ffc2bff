//! Round loop: strategies, shrinking, local training, compressed upload,
//! all-in-one aggregation. Also runs the FedAvg baseline.

use rayon::prelude::*;

use crate::aggregate::{
    aio_aggregate, apply_global_update, blended_coefficients, fedavg_coefficients, optimal_coefficients,
};
use crate::codec::{
    decode_update, dequantize, encode_update, plan_from_beta, quantize, sparsify, RatePredictor, UpdateHeader,
};
use crate::config::{DatasetSpec, ExperimentConfig, Mode};
use crate::error::{Error, Result};
use crate::metrics::{DeviceRoundMetrics, ExperimentReport, RoundMetrics};
use crate::model::{evaluate, global_loss, init_model, local_train, DataShard, Evaluation, GlobalModel, GradientUpdate, UpdateMask};
use crate::rng::{self, Purpose};
use crate::shrink::{embed_mask, embed_update, extract_submodel, sort_channels};
use crate::strategy::{learning_gains, solve_strategy, Budget, TaskProfile, TrainingStrategy};
use crate::sysmodel::{
    draw_energy_budgets, partition_data, read_idx, refresh_channels, round_cost, sample_devices,
    synthetic_mixture, Dataset, DeviceProfile,
};

/// Environment variable capping the worker pool size.
pub const THREADS_ENV: &str = "ACFL_THREADS";

/// What a device sends, already decoded on the server side.
struct Upload {
    update: GradientUpdate,
    mask: UpdateMask,
    bytes: u64,
}

pub struct Simulation {
    config: ExperimentConfig,
    seed: u64,
    dataset: Dataset,
    shards: Vec<DataShard>,
    devices: Vec<DeviceProfile>,
    task: TaskProfile,
    predictor: Option<RatePredictor>,
    model: GlobalModel,
    round: u64,
    pool: rayon::ThreadPool,
}

fn load_dataset(config: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    match &config.dataset {
        DatasetSpec::Synthetic(spec) => synthetic_mixture(spec, seed),
        DatasetSpec::Idx(spec) => {
            let train = read_idx(&spec.train_images, &spec.train_labels)?;
            let test = read_idx(&spec.test_images, &spec.test_labels)?;
            if train.dim != test.dim {
                return Err(Error::ShapeMismatch("train and test feature sizes differ".into()));
            }
            let classes = train.labels.iter().chain(&test.labels).map(|&l| l as usize + 1).max().unwrap_or(0);
            if classes < 2 {
                return Err(Error::InvalidArgument("need at least two classes".into()));
            }
            Ok(Dataset { train, test, classes })
        }
    }
}

fn thread_count(explicit: Option<usize>) -> Result<usize> {
    if let Some(n) = explicit {
        return Ok(n.max(1));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(|n| n.max(1))
            .map_err(|_| Error::Config(vec![format!("{THREADS_ENV}={v:?} is not a positive integer")])),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

impl Simulation {
    /// Worker count from `ACFL_THREADS`, else all cores.
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        Self::with_threads(config, None)
    }

    pub fn with_threads(config: &ExperimentConfig, threads: Option<usize>) -> Result<Self> {
        config.validate()?;
        let seed = config.seed()?;
        let predictor = config.predictor.as_deref().map(RatePredictor::load).transpose()?;
        let dataset = load_dataset(config, seed)?;
        let shards = partition_data(&dataset.train, config.partition, config.devices, seed)?;
        let sizes: Vec<usize> = shards.iter().map(DataShard::size).collect();
        let devices = sample_devices(&config.system, &sizes, seed);
        let arch = config.model_arch(dataset.train.dim, dataset.classes);
        let model = init_model(&arch, seed)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(thread_count(threads)?)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        Ok(Self {
            config: config.clone(),
            seed,
            dataset,
            shards,
            devices,
            task: config.task_profile(),
            predictor,
            model,
            round: 0,
            pool,
        })
    }

    pub fn model(&self) -> &GlobalModel {
        &self.model
    }

    pub fn devices(&self) -> &[DeviceProfile] {
        &self.devices
    }

    pub fn shards(&self) -> &[DataShard] {
        &self.shards
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    /// Shard-weighted training loss and test accuracy of the current model.
    pub fn evaluate(&self) -> Result<Evaluation> {
        let model = &self.model;
        let losses: Vec<f64> = self.pool.install(|| {
            self.shards
                .par_iter()
                .map(|s| evaluate(model, s).map(|e| e.loss))
                .collect::<Result<_>>()
        })?;
        let sizes: Vec<usize> = self.shards.iter().map(DataShard::size).collect();
        Ok(Evaluation {
            loss: global_loss(&losses, &sizes)?,
            accuracy: evaluate(model, &self.dataset.test)?.accuracy,
        })
    }

    fn strategies(&self, rates: &[f64], energy: &[f64]) -> Result<Vec<TrainingStrategy>> {
        let c = &self.config;
        self.devices
            .iter()
            .enumerate()
            .map(|(i, d)| match c.mode {
                Mode::Fedavg => Ok(TrainingStrategy::full(d.f_max)),
                Mode::Anycost => {
                    let budget = Budget {
                        t_max: c.system.latency_budget_s,
                        e_max: energy[i],
                        alpha_min: c.bounds.alpha_min,
                        beta_min: c.bounds.beta_min,
                        beta_max: c.bounds.beta_max,
                        f_min: d.f_min,
                        f_max: d.f_max,
                    };
                    solve_strategy(d, &self.task, &budget, rates[i])
                }
            })
            .collect()
    }

    fn upload(&self, sorted: &GlobalModel, device: usize, s: &TrainingStrategy) -> Result<Option<Upload>> {
        let arch = &sorted.arch;
        let (sub, spec) = extract_submodel(sorted, s.alpha)?;
        let t = &self.config.training;
        let mut train_rng = rng::stream(self.seed, Purpose::Train, self.round, device as u64);
        let update = local_train(&sub, &self.shards[device], t.local_epochs, t.learning_rate, t.batch_size, &mut train_rng)?;
        let shapes = update.shapes();
        let (decoded, sub_mask, bytes) = if s.beta >= 1.0 {
            // full rate: raw f32 upload
            let bytes = 4 * update.len() as u64;
            (update, UpdateMask::full(&shapes), bytes)
        } else {
            let plan = plan_from_beta(self.predictor.as_ref(), s.beta)?;
            let sparse = sparsify(&update, plan.rho)?;
            let mut q_rng = rng::stream(self.seed, Purpose::Quantize, self.round, device as u64);
            let q = match quantize(&sparse, plan.levels, &mut q_rng) {
                Ok(q) => q,
                Err(Error::EmptyUpdate) => return Ok(None),
                Err(e) => return Err(e),
            };
            let header = UpdateHeader {
                alpha: s.alpha as f32,
                beta: s.beta as f32,
                shapes: shapes.clone(),
            };
            let encoded = encode_update(&q, &header)?;
            let (received, _, _) = decode_update(&encoded.bytes)?;
            let mask = UpdateMask {
                layers: received.layers.iter().map(|l| l.mask.clone()).collect(),
            };
            let mut values = dequantize(&received, &shapes)?;
            values.learning_rate = update.learning_rate;
            (values, mask, encoded.bytes.len() as u64)
        };
        let (global, coverage) = embed_update(&decoded, &spec, arch)?;
        let mask = coverage.and(&embed_mask(&sub_mask, &spec, arch)?)?;
        Ok(Some(Upload {
            update: global,
            mask,
            bytes,
        }))
    }

    /// Runs one round and returns its metrics.
    pub fn step(&mut self) -> Result<RoundMetrics> {
        let c = &self.config;
        let channels = refresh_channels(&c.system, &self.devices, self.round, self.seed);
        let energy = draw_energy_budgets(&self.devices, self.round, self.seed);
        let rates: Vec<f64> = channels.iter().map(|ch| ch.rate_bps).collect();
        let strategies = self.strategies(&rates, &energy)?;
        let participants: Vec<usize> = (0..self.devices.len()).filter(|&i| strategies[i].feasible).collect();

        let mut warning = None;
        let mut uploads: Vec<Option<Upload>> = Vec::new();
        if participants.is_empty() {
            warning = Some("all devices infeasible; round skipped".to_string());
        } else {
            // sorting permutes parameters, so only do it when someone shrinks
            if participants.iter().any(|&i| strategies[i].alpha < 1.0) {
                self.model = sort_channels(&self.model).0;
            }
            let sorted = &self.model;
            let this = &*self;
            uploads = self.pool.install(|| {
                participants
                    .par_iter()
                    .map(|&i| this.upload(sorted, i, &strategies[i]))
                    .collect::<Result<Vec<_>>>()
            })?;
            let contributors: Vec<usize> = participants
                .iter()
                .zip(&uploads)
                .filter(|(_, u)| u.is_some())
                .map(|(&i, _)| i)
                .collect();
            if contributors.is_empty() {
                warning = Some("no device produced a non-empty update".to_string());
            } else {
                let weights = match self.config.mode {
                    Mode::Fedavg => fedavg_coefficients(&contributors.iter().map(|&i| self.devices[i].shard_size).collect::<Vec<_>>())?,
                    Mode::Anycost => {
                        let ab: Vec<(f64, f64)> = contributors
                            .iter()
                            .map(|&i| (strategies[i].alpha, strategies[i].beta.min(1.0)))
                            .collect();
                        if self.config.aggregation.blend_data_sizes {
                            let sizes: Vec<usize> = contributors.iter().map(|&i| self.devices[i].shard_size).collect();
                            blended_coefficients(&ab, &sizes)?
                        } else {
                            optimal_coefficients(&ab)?
                        }
                    }
                };
                let (updates, masks): (Vec<GradientUpdate>, Vec<UpdateMask>) = uploads
                    .iter()
                    .flatten()
                    .map(|u| (u.update.clone(), u.mask.clone()))
                    .unzip();
                let global = self.pool.install(|| aio_aggregate(&updates, &masks, &weights))?;
                self.model = apply_global_update(&self.model, &global)?;
            }
        }

        let gains = learning_gains(&strategies);
        let mut devices = Vec::with_capacity(self.devices.len());
        let mut upload_iter = uploads.iter();
        for (i, d) in self.devices.iter().enumerate() {
            let s = &strategies[i];
            let mut m = DeviceRoundMetrics {
                id: d.id,
                participated: s.feasible,
                alpha: s.alpha,
                beta: s.beta,
                f: s.f,
                gain: gains.per_device[i],
                interior: s.interior,
                rate_bps: rates[i],
                latency_s: 0.0,
                energy_j: 0.0,
                latency_budget_s: self.config.system.latency_budget_s,
                energy_budget_j: energy[i],
                uplink_bytes: 0,
            };
            if s.feasible {
                let cost = round_cost(s.alpha, s.beta, s.f, d, &self.task, rates[i])?;
                m.latency_s = cost.latency();
                m.energy_j = cost.energy();
                if let Some(Some(u)) = upload_iter.next() {
                    m.uplink_bytes = u.bytes;
                }
            }
            devices.push(m);
        }
        let eval = self.evaluate()?;
        self.round += 1;
        Ok(RoundMetrics {
            round: self.round as usize,
            loss: eval.loss,
            accuracy: eval.accuracy,
            latency_max_s: devices.iter().filter(|d| d.participated).map(|d| d.latency_s).fold(0.0, f64::max),
            energy_total_j: devices.iter().map(|d| d.energy_j).sum(),
            uplink_bytes: devices.iter().map(|d| d.uplink_bytes).sum(),
            gain_g: gains.global,
            skipped: devices.iter().filter(|d| !d.participated).count(),
            warning,
            devices,
        })
    }

    /// Runs all configured rounds.
    pub fn run(&mut self) -> Result<ExperimentReport> {
        let initial = self.evaluate()?;
        let rounds = (0..self.config.rounds).map(|_| self.step()).collect::<Result<Vec<_>>>()?;
        Ok(ExperimentReport { initial, rounds })
    }
}

/// Builds a simulation from `config` and runs every round.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(ExperimentReport, GlobalModel)> {
    let mut sim = Simulation::new(config)?;
    let report = sim.run()?;
    Ok((report, sim.model.clone()))
}
