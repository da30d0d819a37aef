use std::collections::HashMap;

use rand::seq::SliceRandom;

use super::codec::Codec;
use super::collective::{allgather_features, allreduce_mean, GradientSet, Inbox};
use super::ledger::{Ledger, RoundLog};
use super::model::{
    argmax, encode_branch, pair_objective, predict, stack_batch, target_leaf, Layout, ModalityMode, Modality,
    ModelConfig, ModelParams, Role,
};
use super::optim::{global_update, OptimConfig, OptimState};
use crate::dataio::{partition_noniid, split_train_val, Sample};
use crate::diffusion::NoiseKey;
use crate::error::{invalid, Error, Result};
use crate::fusion::l2_penalty;
use crate::metrics::{accumulate, ConfusionMatrix};
use crate::numkit::{par, Tape, Tensor, Var};

/// Largest tolerated parameter difference between replicas.
pub const DIVERGENCE_TOL: f64 = 1e-6;

const BATCH_STREAM: u64 = 3;

/// Every piece of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct FedConfig {
    pub seed: u64,
    /// 1 trains locally; otherwise an even count forming (HSI, LiDAR) pairs
    pub clients: usize,
    /// Dirichlet concentration of the non-IID split
    pub alpha: f64,
    pub batch: usize,
    pub epochs: usize,
    /// feature exchange interval `k`
    pub interval: usize,
    pub codec: Codec,
    pub optim: OptimConfig,
    pub val_fraction: f64,
    pub model: ModelConfig,
}

impl FedConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            seed: 0,
            clients: 4,
            alpha: 1.0,
            batch: 64,
            epochs: 50,
            interval: 1,
            codec: Codec::LowRank(Default::default()),
            optim: OptimConfig::default(),
            val_fraction: 0.05,
            model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 || (self.clients > 1 && !self.clients.is_multiple_of(2)) {
            return Err(invalid(format!(
                "clients must be 1 or an even number, got {}",
                self.clients
            )));
        }
        if self.batch == 0 {
            return Err(invalid("batch must be ≥ 1"));
        }
        if self.interval == 0 {
            return Err(invalid("interval must be ≥ 1"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid(format!("alpha must be finite and > 0, got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(invalid(format!("val_fraction {} outside [0, 1)", self.val_fraction)));
        }
        if let Codec::LowRank(p) = &self.codec {
            p.validate()?;
        }
        self.optim.validate()?;
        self.model.validate()
    }

    pub fn pairs(&self) -> usize {
        (self.clients / 2).max(1)
    }
}

/// Train/validation indices and the per-pair training shards.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    /// sample indices per pair, sorted
    pub shards: Vec<Vec<usize>>,
}

impl Split {
    pub fn new(cfg: &FedConfig, samples: &[Sample]) -> Result<Self> {
        let (train, val) = split_train_val(samples.len(), cfg.val_fraction, cfg.seed)?;
        if train.is_empty() {
            return Err(invalid("no training samples"));
        }
        let labels: Vec<usize> = train.iter().map(|&i| samples[i].label).collect();
        let parts = partition_noniid(&labels, cfg.pairs(), cfg.alpha, cfg.seed)?;
        let shards = parts
            .into_iter()
            .map(|p| p.into_iter().map(|k| train[k]).collect())
            .collect();
        Ok(Self { train, val, shards })
    }
}

/// Batch of pair `pair` at `round`: consecutive positions in an endless
/// sequence of seeded shard permutations, one permutation per pass.
pub fn pair_batch(seed: u64, pair: usize, shard: &[usize], round: usize, batch: usize) -> Vec<usize> {
    let len = shard.len();
    let mut perms: HashMap<usize, Vec<usize>> = HashMap::new();
    (0..batch)
        .map(|i| {
            let pos = round * batch + i;
            let pass = pos / len;
            let perm = perms.entry(pass).or_insert_with(|| {
                let mut p: Vec<usize> = (0..len).collect();
                let key = NoiseKey {
                    seed,
                    stream: BATCH_STREAM,
                    round: pass as u64,
                    sample: pair as u64,
                };
                p.shuffle(&mut key.rng());
                p
            });
            shard[perm[pos % len]]
        })
        .collect()
}

/// One participant of the federation.
#[derive(Clone, Debug)]
pub struct ClientState {
    pub id: usize,
    pub role: Role,
    /// index of the shared shard
    pub pair: usize,
    pub params: Vec<Tensor<f32>>,
    pub opt: OptimState,
    pub inbox: Inbox,
    /// seed of the client's noise and batch streams
    pub noise_seed: u64,
}

impl ClientState {
    pub fn modality(&self) -> Option<Modality> {
        match self.role {
            Role::Only(m) => Some(m),
            Role::Both => None,
        }
    }
}

struct Forward {
    tape: Tape<f32>,
    leaves: Vec<Var>,
    vars: ModelParams<Var>,
    feature: Var,
    target: Var,
}

/// Gradients of `(1/P)·Σ_pairs data_j + λ·Σ‖w‖` over the parameters
/// touched by a single participant holding every modality.
fn central_grads(
    params: &[Tensor<f32>],
    template: &ModelParams<Tensor<f32>>,
    layout: &Layout,
    cfg: &FedConfig,
    samples: &[Sample],
    shards: &[Vec<usize>],
    round: usize,
) -> Result<(GradientSet, f64)> {
    let m = &cfg.model;
    let mut tape = Tape::<f32>::new();
    let leaves: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let pv = template.with_values(leaves.clone())?;
    let mut terms = Vec::with_capacity(shards.len());
    for (j, shard) in shards.iter().enumerate() {
        let batch = pair_batch(cfg.seed, j, shard, round, cfg.batch);
        let mut feat = [None, None];
        for (slot, md) in [Modality::Hsi, Modality::Lidar].into_iter().enumerate() {
            if m.mode.uses(md) {
                let x = tape.leaf(stack_batch(samples, &batch, md, m, cfg.seed, round as u64)?);
                feat[slot] = Some(encode_branch(&mut tape, x, md, &pv)?);
            }
        }
        let target = target_leaf(&mut tape, samples, &batch, m.classes)?;
        terms.push(pair_objective(&mut tape, feat[0], feat[1], target, &pv.fusion, m.mode)?.data);
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    let mut total = tape.scale(acc, 1.0 / terms.len() as f64);
    let touched = layout.touched(Role::Both, m.mode);
    let weights: Vec<Var> = leaves.iter().zip(&touched).filter(|(_, &t)| t).map(|(&v, _)| v).collect();
    if let Some(r) = l2_penalty(&mut tape, &weights, m.lambda)? {
        total = tape.add(total, r)?;
    }
    finish(tape, total, &leaves, &touched, round)
}

fn finish(
    mut tape: Tape<f32>,
    total: Var,
    leaves: &[Var],
    touched: &[bool],
    round: usize,
) -> Result<(GradientSet, f64)> {
    let loss = tape.value(total).data()[0] as f64;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { round });
    }
    tape.backward(total)?;
    let grads = leaves
        .iter()
        .zip(touched)
        .map(|(&v, &t)| {
            t.then(|| tape.grad(v).unwrap_or_else(|| Tensor::zeros(tape.shape(v))))
        })
        .collect();
    Ok((grads, loss))
}

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub lr: f64,
    /// mean round loss
    pub loss: f64,
    pub rounds: usize,
    pub feature_bytes: u64,
    pub gradient_bytes: u64,
    /// `None` without a validation split
    pub val_oa: Option<f64>,
}

/// The simulated federation: lockstep rounds over in-process clients.
pub struct Federation<'a> {
    cfg: FedConfig,
    samples: &'a [Sample],
    split: Split,
    template: ModelParams<Tensor<f32>>,
    layout: Layout,
    clients: Vec<ClientState>,
    ledger: Ledger,
    round: usize,
}

impl<'a> Federation<'a> {
    /// Builds clients with identical replicas initialised from the seed.
    pub fn new(cfg: FedConfig, samples: &'a [Sample]) -> Result<Self> {
        cfg.validate()?;
        if samples.is_empty() {
            return Err(invalid("no samples"));
        }
        let window = cfg.model.window();
        if samples[0].a.shape()[0] != window {
            return Err(invalid(format!(
                "samples are {}-pixel windows, model expects {window}",
                samples[0].a.shape()[0]
            )));
        }
        let split = Split::new(&cfg, samples)?;
        let template = ModelParams::<Tensor<f32>>::init(&cfg.model, cfg.seed)?;
        let layout = Layout::of(&template);
        let flat = template.to_vec();
        let clients = (0..cfg.clients)
            .map(|id| ClientState {
                id,
                role: match (cfg.clients, id % 2) {
                    (1, _) => Role::Both,
                    (_, 0) => Role::Only(Modality::Hsi),
                    _ => Role::Only(Modality::Lidar),
                },
                pair: id / 2,
                params: flat.clone(),
                opt: OptimState::new(&flat),
                inbox: Inbox::new(),
                noise_seed: cfg.seed,
            })
            .collect();
        Ok(Self {
            cfg,
            samples,
            split,
            template,
            layout,
            clients,
            ledger: Ledger::default(),
            round: 0,
        })
    }

    pub fn config(&self) -> &FedConfig {
        &self.cfg
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// Replica of client 0 (all replicas agree after every round).
    pub fn model(&self) -> ModelParams<Tensor<f32>> {
        self.template
            .with_values(self.clients[0].params.clone())
            .expect("layout matches")
    }

    /// `⌈N_train / (B·pairs)⌉`
    pub fn rounds_per_epoch(&self) -> usize {
        let per_round = self.cfg.batch * self.cfg.pairs();
        self.split.train.len().div_ceil(per_round)
    }

    fn forward(&self, c: &ClientState, round: usize) -> Result<Option<Forward>> {
        let Role::Only(m) = c.role else { return Ok(None) };
        let mc = &self.cfg.model;
        if !mc.mode.uses(m) {
            return Ok(None);
        }
        let batch = pair_batch(c.noise_seed, c.pair, &self.split.shards[c.pair], round, self.cfg.batch);
        let x = stack_batch(self.samples, &batch, m, mc, c.noise_seed, round as u64)?;
        let mut tape = Tape::<f32>::new();
        let leaves: Vec<Var> = c.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let vars = self.template.with_values(leaves.clone())?;
        let xv = tape.leaf(x);
        let feature = encode_branch(&mut tape, xv, m, &vars)?;
        let target = target_leaf(&mut tape, self.samples, &batch, mc.classes)?;
        Ok(Some(Forward {
            tape,
            leaves,
            vars,
            feature,
            target,
        }))
    }

    fn backward(&self, c: &ClientState, fw: Option<Forward>, round: usize) -> Result<Option<(GradientSet, f64)>> {
        let Some(mut fw) = fw else { return Ok(None) };
        let Role::Only(m) = c.role else { return Ok(None) };
        let mc = &self.cfg.model;
        let (f_own, f_other) = if mc.mode == ModalityMode::Fused {
            let partner = if m == Modality::Hsi { c.id + 1 } else { c.id - 1 };
            let f = c
                .inbox
                .get(&partner)
                .ok_or(Error::MissingFeature { round, client: partner })?;
            (fw.feature, Some(fw.tape.leaf(f.clone())))
        } else {
            (fw.feature, None)
        };
        let (fh, fl) = match m {
            Modality::Hsi => (Some(f_own), f_other),
            Modality::Lidar => (f_other, Some(f_own)),
        };
        let obj = pair_objective(&mut fw.tape, fh, fl, fw.target, &fw.vars.fusion, mc.mode)?;
        let touched = self.layout.touched(c.role, mc.mode);
        let weights: Vec<Var> = fw
            .leaves
            .iter()
            .zip(&touched)
            .filter(|(_, &t)| t)
            .map(|(&v, _)| v)
            .collect();
        let mut total = obj.data;
        if let Some(r) = l2_penalty(&mut fw.tape, &weights, mc.lambda)? {
            total = fw.tape.add(total, r)?;
        }
        finish(fw.tape, total, &fw.leaves, &touched, round).map(Some)
    }

    /// One lockstep round at learning rate `lr`: local forward, feature
    /// AllGather, fusion and loss, gradient AllReduce, global update.
    pub fn train_round(&mut self, lr: f64) -> Result<&RoundLog> {
        let r = self.round;
        self.step_round(lr).map_err(|e| match e {
            Error::NonFinite(op) => Error::NonFiniteIn { round: r, op },
            e => e,
        })?;
        Ok(self.ledger.rounds.last().expect("just pushed"))
    }

    fn step_round(&mut self, lr: f64) -> Result<()> {
        let r = self.round;
        let mut log = RoundLog::new(r);
        let n = self.clients.len();
        let grads = if n == 1 {
            let c = &self.clients[0];
            let shards = std::slice::from_ref(&self.split.shards[0]);
            let (g, loss) = central_grads(&c.params, &self.template, &self.layout, &self.cfg, self.samples, shards, r)?;
            log.loss = loss;
            g
        } else {
            let fws: Vec<Result<Option<Forward>>> = {
                let this = &*self;
                par::map_range(n, usize::MAX, |i| this.forward(&this.clients[i], r))
            };
            let fws: Vec<Option<Forward>> = fws.into_iter().collect::<Result<_>>()?;
            if self.cfg.model.mode == ModalityMode::Fused {
                let features: Vec<Option<Tensor<f32>>> =
                    fws.iter().map(|f| f.as_ref().map(|f| f.tape.value(f.feature).clone())).collect();
                let modalities: Vec<Modality> = self.clients.iter().map(|c| c.modality().expect("paired")).collect();
                let mut inboxes: Vec<Inbox> = self.clients.iter_mut().map(|c| std::mem::take(&mut c.inbox)).collect();
                let res = allgather_features(
                    &features,
                    &modalities,
                    r,
                    self.cfg.interval,
                    &self.cfg.codec,
                    &mut inboxes,
                    &mut log,
                );
                for (c, ib) in self.clients.iter_mut().zip(inboxes) {
                    c.inbox = ib;
                }
                res?;
            }
            let mut slots: Vec<Option<Forward>> = fws;
            let outs: Vec<Result<Option<(GradientSet, f64)>>> = {
                let this = &*self;
                par::map_mut(&mut slots, usize::MAX, |i, fw| this.backward(&this.clients[i], fw.take(), r))
            };
            let mut sets = Vec::with_capacity(n);
            let mut losses = Vec::new();
            for o in outs {
                match o? {
                    Some((g, l)) => {
                        sets.push(g);
                        losses.push(l);
                    }
                    None => sets.push(vec![None; self.layout.len()]),
                }
            }
            log.loss = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
            allreduce_mean(&sets, &mut log)?
        };
        let optim = self.cfg.optim;
        let results = par::map_mut(&mut self.clients, usize::MAX, |_, c| {
            global_update(&mut c.params, &grads, &optim, lr, &mut c.opt)
        });
        results.into_iter().collect::<Result<Vec<()>>>()?;
        self.check_replicas(r)?;
        self.round += 1;
        self.ledger.push(log);
        Ok(())
    }

    /// Largest parameter difference from client 0 over all replicas.
    pub fn max_divergence(&self) -> f64 {
        let base = &self.clients[0].params;
        self.clients[1..]
            .iter()
            .flat_map(|c| c.params.iter().zip(base).map(|(a, b)| a.max_abs_diff(b).unwrap_or(f64::INFINITY)))
            .fold(0.0, f64::max)
    }

    pub fn replicas_identical(&self) -> bool {
        let base = &self.clients[0].params;
        self.clients[1..].iter().all(|c| {
            c.params
                .iter()
                .zip(base)
                .all(|(a, b)| a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()))
        })
    }

    fn check_replicas(&self, round: usize) -> Result<()> {
        let base = &self.clients[0].params;
        for (i, name) in self.layout.names.iter().enumerate() {
            for c in &self.clients[1..] {
                let diff = c.params[i].max_abs_diff(&base[i])?;
                if !(diff <= DIVERGENCE_TOL) {
                    return Err(Error::Divergence {
                        round,
                        client: c.id,
                        param: name.clone(),
                        diff,
                    });
                }
            }
        }
        Ok(())
    }

    /// Confusion matrix of client 0's replica on the validation split.
    pub fn validate(&self) -> Result<Option<ConfusionMatrix>> {
        if self.split.val.is_empty() {
            return Ok(None);
        }
        evaluate_indices(&self.model(), &self.cfg.model, self.samples, &self.split.val, self.cfg.seed, self.cfg.batch)
            .map(|(m, _)| Some(m))
    }

    /// Runs one epoch of rounds at the step-decayed learning rate.
    pub fn train_epoch(&mut self, epoch: usize) -> Result<EpochSummary> {
        let lr = self.cfg.optim.lr_at(epoch);
        let rounds = self.rounds_per_epoch();
        let (mut loss, mut fb, mut gb) = (0.0, 0, 0);
        for _ in 0..rounds {
            let log = self.train_round(lr)?;
            loss += log.loss;
            fb += log.feature_bytes();
            gb += log.gradient_bytes();
        }
        let val_oa = self.validate()?.map(|m| m.scores().map(|s| s.oa)).transpose()?;
        Ok(EpochSummary {
            epoch,
            lr,
            loss: loss / rounds as f64,
            rounds,
            feature_bytes: fb,
            gradient_bytes: gb,
            val_oa,
        })
    }

    /// All configured epochs, reporting each summary as it completes.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&EpochSummary)) -> Result<Vec<EpochSummary>> {
        let mut out = Vec::with_capacity(self.cfg.epochs);
        for e in 0..self.cfg.epochs {
            let s = self.train_epoch(e)?;
            on_epoch(&s);
            out.push(s);
        }
        Ok(out)
    }
}

/// Confusion matrix and arg-max predictions (1-based) for `indices`.
pub fn evaluate_indices(
    params: &ModelParams<Tensor<f32>>,
    cfg: &ModelConfig,
    samples: &[Sample],
    indices: &[usize],
    seed: u64,
    batch: usize,
) -> Result<(ConfusionMatrix, Vec<usize>)> {
    let probs = predict(params, cfg, samples, indices, seed, batch)?;
    let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let truths: Vec<usize> = indices.iter().map(|&i| samples[i].label).collect();
    Ok((accumulate(cfg.classes, &preds, &truths)?, preds))
}

/// Single-process trainer holding every modality and every shard in one
/// address space; the reference the federation must reproduce.
pub struct Centralized<'a> {
    cfg: FedConfig,
    samples: &'a [Sample],
    split: Split,
    template: ModelParams<Tensor<f32>>,
    layout: Layout,
    params: Vec<Tensor<f32>>,
    opt: OptimState,
    round: usize,
}

impl<'a> Centralized<'a> {
    pub fn new(cfg: FedConfig, samples: &'a [Sample]) -> Result<Self> {
        cfg.validate()?;
        let split = Split::new(&cfg, samples)?;
        let template = ModelParams::<Tensor<f32>>::init(&cfg.model, cfg.seed)?;
        let layout = Layout::of(&template);
        let params = template.to_vec();
        let opt = OptimState::new(&params);
        Ok(Self {
            cfg,
            samples,
            split,
            template,
            layout,
            params,
            opt,
            round: 0,
        })
    }

    /// One step over every pair's batch; returns the loss.
    pub fn step(&mut self, lr: f64) -> Result<f64> {
        let (g, loss) = central_grads(
            &self.params,
            &self.template,
            &self.layout,
            &self.cfg,
            self.samples,
            &self.split.shards,
            self.round,
        )?;
        global_update(&mut self.params, &g, &self.cfg.optim, lr, &mut self.opt)?;
        self.round += 1;
        Ok(loss)
    }

    pub fn params(&self) -> &[Tensor<f32>] {
        &self.params
    }

    pub fn model(&self) -> ModelParams<Tensor<f32>> {
        self.template.with_values(self.params.clone()).expect("layout matches")
    }
}

/// Largest element-wise difference between two flat parameter lists.
pub fn max_param_diff(a: &[Tensor<f32>], b: &[Tensor<f32>]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid(format!("{} vs {} parameters", a.len(), b.len())));
    }
    a.iter()
        .zip(b)
        .try_fold(0.0f64, |m, (x, y)| Ok(m.max(x.max_abs_diff(y)?)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_batch_covers_shard_each_pass() {
        let shard: Vec<usize> = (100..110).collect();
        let mut seen: Vec<usize> = (0..5).flat_map(|r| pair_batch(7, 0, &shard, r, 2)).collect();
        seen.sort_unstable();
        assert_eq!(seen, shard);
        assert_eq!(pair_batch(7, 0, &shard, 3, 4), pair_batch(7, 0, &shard, 3, 4));
    }

    #[test]
    fn odd_client_count_rejected() {
        let mut cfg = FedConfig::new(ModelConfig::new(2, 1, 3));
        cfg.clients = 3;
        let e = cfg.validate().unwrap_err().to_string();
        assert!(e.contains("clients"), "{e}");
    }
}
