use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::Sample;
use crate::diffusion::{multiscale_stack, NoiseKey, NoiseSchedule, DEFAULT_TIMESTEPS};
use crate::error::{invalid, shape_err, Result};
use crate::fusion::{self, classify_map, fuse, FusionParams, LogitsBundle, DEFAULT_LAMBDA};
use crate::net::{branch, BranchConfig, BranchParams};
use crate::numkit::{par, Element, Tape, Tensor, Var};

/// Noise stream reserved for evaluation forward passes.
pub const EVAL_ROUND: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Hsi,
    Lidar,
}

impl Modality {
    pub fn stream(self) -> u64 {
        match self {
            Modality::Hsi => 1,
            Modality::Lidar => 2,
        }
    }

    pub fn other(self) -> Self {
        match self {
            Modality::Hsi => Modality::Lidar,
            Modality::Lidar => Modality::Hsi,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Hsi => "hsi",
            Modality::Lidar => "lidar",
        }
    }
}

/// Which inputs the classifier sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModalityMode {
    Fused,
    HsiOnly,
    LidarOnly,
}

impl ModalityMode {
    pub fn uses(self, m: Modality) -> bool {
        !matches!(
            (self, m),
            (ModalityMode::HsiOnly, Modality::Lidar) | (ModalityMode::LidarOnly, Modality::Hsi)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModalityMode::Fused => "fused",
            ModalityMode::HsiOnly => "hsi",
            ModalityMode::LidarOnly => "lidar",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fused" => Some(ModalityMode::Fused),
            "hsi" => Some(ModalityMode::HsiOnly),
            "lidar" => Some(ModalityMode::LidarOnly),
            _ => None,
        }
    }
}

/// Parameter family, used to decide which client contributes a gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Hsi,
    Lidar,
    /// `C_b`, `C_d`, `C_l`
    Gate,
    Head,
}

/// What a participant computes in a round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Only(Modality),
    /// single-process training that holds both modalities
    Both,
}

impl Role {
    pub fn holds(self, m: Modality) -> bool {
        match self {
            Role::Only(x) => x == m,
            Role::Both => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub hsi: BranchConfig,
    pub lidar: BranchConfig,
    pub classes: usize,
    pub timesteps: Vec<usize>,
    pub schedule: NoiseSchedule,
    pub lambda: f64,
    pub mode: ModalityMode,
}

impl ModelConfig {
    /// Default branches for raw channel counts `c_a`/`c_b`, fed with
    /// multi-scale stacks over the default timesteps.
    pub fn new(c_a: usize, c_b: usize, classes: usize) -> Self {
        let k = DEFAULT_TIMESTEPS.len();
        Self {
            hsi: BranchConfig::new(c_a * k),
            lidar: BranchConfig::new(c_b * k),
            classes,
            timesteps: DEFAULT_TIMESTEPS.to_vec(),
            schedule: NoiseSchedule::default(),
            lambda: DEFAULT_LAMBDA,
            mode: ModalityMode::Fused,
        }
    }

    /// Sets both branch input widths from raw channel counts.
    pub fn set_raw_channels(&mut self, c_a: usize, c_b: usize) {
        self.hsi.in_channels = c_a * self.timesteps.len();
        self.lidar.in_channels = c_b * self.timesteps.len();
    }

    pub fn window(&self) -> usize {
        self.hsi.patch
    }

    pub fn validate(&self) -> Result<()> {
        self.hsi.validate()?;
        self.lidar.validate()?;
        crate::diffusion::check_timesteps(&self.timesteps, &self.schedule)?;
        if self.classes < 2 {
            return Err(invalid(format!("classes must be ≥ 2, got {}", self.classes)));
        }
        if self.hsi.patch != self.lidar.patch {
            return Err(invalid("both branches must read the same patch size"));
        }
        if self.hsi.feature_shape() != self.lidar.feature_shape() {
            return Err(invalid(format!(
                "branch outputs differ: {:?} vs {:?}",
                self.hsi.feature_shape(),
                self.lidar.feature_shape()
            )));
        }
        let k = self.timesteps.len();
        if !self.hsi.in_channels.is_multiple_of(k) || !self.lidar.in_channels.is_multiple_of(k) {
            return Err(invalid("branch input widths must be multiples of the timestep count"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!("lambda {} must be finite and ≥ 0", self.lambda)));
        }
        Ok(())
    }

    pub fn branch(&self, m: Modality) -> &BranchConfig {
        match m {
            Modality::Hsi => &self.hsi,
            Modality::Lidar => &self.lidar,
        }
    }
}

/// Both branch encoders and the fusion/classifier parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<W> {
    pub hsi: BranchParams<W>,
    pub lidar: BranchParams<W>,
    pub fusion: FusionParams<W>,
}

impl<W> ModelParams<W> {
    /// Visits every slot in a fixed order with its dotted name.
    pub fn map<U>(&self, f: &mut impl FnMut(String, &W) -> U) -> ModelParams<U> {
        ModelParams {
            hsi: self.hsi.map("hsi", f),
            lidar: self.lidar.map("lidar", f),
            fusion: self.fusion.map("fusion", f),
        }
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.map(&mut |n, _| out.push(n));
        out
    }

    pub fn to_vec(&self) -> Vec<W>
    where
        W: Clone,
    {
        let mut out = Vec::new();
        self.map(&mut |_, w| out.push(w.clone()));
        out
    }

    /// Same structure with slots taken in order from `values`.
    pub fn with_values<U>(&self, values: Vec<U>) -> Result<ModelParams<U>> {
        let n = self.names().len();
        if values.len() != n {
            return Err(invalid(format!("model has {n} parameters, got {}", values.len())));
        }
        let mut it = values.into_iter();
        Ok(self.map(&mut |_, _| it.next().expect("length checked")))
    }
}

impl<T: Element> ModelParams<Tensor<T>> {
    /// Seeded initialisation shared by every replica.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hsi = BranchParams::init(&cfg.hsi, &mut rng)?;
        let lidar = BranchParams::init(&cfg.lidar, &mut rng)?;
        let c = cfg.hsi.feature_shape()[2];
        let fusion = FusionParams::init(c, cfg.classes, &mut rng)?;
        Ok(Self { hsi, lidar, fusion })
    }

    /// Rebuilds and validates a model from named tensors in layout order.
    pub fn from_named(cfg: &ModelConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let template = Self::init(cfg, 0)?;
        let names = template.names();
        if names.len() != named.len() {
            return Err(invalid(format!(
                "expected {} parameters, found {}",
                names.len(),
                named.len()
            )));
        }
        let shapes = template.to_vec();
        for ((want, shape), (got, t)) in names.iter().zip(&shapes).zip(&named) {
            if want != got {
                return Err(invalid(format!("expected parameter `{want}`, found `{got}`")));
            }
            if shape.shape() != t.shape() {
                return Err(shape_err(
                    "from_named",
                    format!("`{want}` is {:?}, expected {:?}", t.shape(), shape.shape()),
                ));
            }
        }
        template.with_values(named.into_iter().map(|(_, t)| t).collect())
    }

    pub fn parameter_count(&self) -> usize {
        self.to_vec().iter().map(Tensor::len).sum()
    }
}

/// Flat view metadata: names and groups in `ModelParams::map` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub names: Vec<String>,
    pub groups: Vec<Group>,
}

impl Layout {
    pub fn of<W>(p: &ModelParams<W>) -> Self {
        let names = p.names();
        let groups = names
            .iter()
            .map(|n| {
                if n.starts_with("hsi.") {
                    Group::Hsi
                } else if n.starts_with("lidar.") {
                    Group::Lidar
                } else if n.starts_with("fusion.head") {
                    Group::Head
                } else {
                    Group::Gate
                }
            })
            .collect();
        Self { names, groups }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Parameters a participant in `role` reads under `mode`; its gradient
    /// and L2 term cover exactly these.
    pub fn touched(&self, role: Role, mode: ModalityMode) -> Vec<bool> {
        let active = |m: Modality| role.holds(m) && mode.uses(m);
        let any = active(Modality::Hsi) || active(Modality::Lidar);
        self.groups
            .iter()
            .map(|g| match g {
                Group::Hsi => active(Modality::Hsi),
                Group::Lidar => active(Modality::Lidar),
                Group::Gate => any && mode == ModalityMode::Fused,
                Group::Head => any,
            })
            .collect()
    }
}

/// Multi-scale stacks of one modality for a batch: `[B, w, w, c·K]`.
/// Noise for sample `i` comes from key `(seed, modality, round, i)`.
pub fn stack_batch(
    samples: &[Sample],
    indices: &[usize],
    modality: Modality,
    cfg: &ModelConfig,
    seed: u64,
    round: u64,
) -> Result<Tensor<f32>> {
    if indices.is_empty() {
        return Err(invalid("empty batch"));
    }
    if let Some(&i) = indices.iter().find(|&&i| i >= samples.len()) {
        return Err(invalid(format!("sample {i} out of range ({} samples)", samples.len())));
    }
    let pick = |s: &Sample| -> Tensor<f32> {
        match modality {
            Modality::Hsi => s.a.clone(),
            Modality::Lidar => s.b.clone(),
        }
    };
    let work = indices.len() * samples[0].a.len() * cfg.timesteps.len() * 64;
    let stacks = par::map_range(indices.len(), work, |j| {
        let i = indices[j];
        let key = NoiseKey {
            seed,
            stream: modality.stream(),
            round,
            sample: i as u64,
        };
        multiscale_stack(&pick(&samples[i]), &cfg.timesteps, &cfg.schedule, &mut key.rng()).map(|s| s.stack)
    });
    let mut shape = vec![indices.len()];
    let mut data = Vec::new();
    for s in stacks {
        let s = s?;
        if shape.len() == 1 {
            shape.extend_from_slice(s.shape());
        }
        data.extend_from_slice(s.data());
    }
    if shape[3] != cfg.branch(modality).in_channels {
        return Err(shape_err(
            "stack_batch",
            format!(
                "{} stack has {} channels, branch expects {}",
                modality.as_str(),
                shape[3],
                cfg.branch(modality).in_channels
            ),
        ));
    }
    Tensor::new(&shape, data)
}

/// Records the branch for `m` on a stacked batch.
pub fn encode_branch<T: Element>(
    tape: &mut Tape<T>,
    stack: Var,
    m: Modality,
    p: &ModelParams<Var>,
) -> Result<Var> {
    match m {
        Modality::Hsi => branch(tape, stack, &p.hsi),
        Modality::Lidar => branch(tape, stack, &p.lidar),
    }
}

/// Data term of one aligned batch and the probabilities used for
/// prediction.
#[derive(Clone, Copy, Debug)]
pub struct PairObjective {
    /// `CE + MSE` (fused) or `CE` (single modality)
    pub data: Var,
    pub probs: Var,
}

/// Classifier outputs and loss without the L2 term. `f_hsi`/`f_lidar` must
/// be present for every modality `mode` uses.
pub fn pair_objective<T: Element>(
    tape: &mut Tape<T>,
    f_hsi: Option<Var>,
    f_lidar: Option<Var>,
    target: Var,
    p: &FusionParams<Var>,
    mode: ModalityMode,
) -> Result<PairObjective> {
    let need = |v: Option<Var>, what: &str| v.ok_or_else(|| invalid(format!("{what} features missing")));
    let bundle = match mode {
        ModalityMode::Fused => {
            let (fh, fl) = (need(f_hsi, "hsi")?, need(f_lidar, "lidar")?);
            let fused = fuse(tape, fh, fl, p)?;
            let o_f = classify_map(tape, fused.fusion, p)?;
            let o_1 = classify_map(tape, fh, p)?;
            let o_2 = classify_map(tape, fl, p)?;
            LogitsBundle {
                fusion: o_f,
                hsi: Some(o_1),
                lidar: Some(o_2),
                target,
            }
        }
        ModalityMode::HsiOnly | ModalityMode::LidarOnly => {
            let f = if mode == ModalityMode::HsiOnly {
                need(f_hsi, "hsi")?
            } else {
                need(f_lidar, "lidar")?
            };
            LogitsBundle {
                fusion: classify_map(tape, f, p)?,
                hsi: None,
                lidar: None,
                target,
            }
        }
    };
    let parts = fusion::loss(tape, &bundle, &[], 0.0)?;
    Ok(PairObjective {
        data: parts.total,
        probs: bundle.fusion,
    })
}

/// One-hot target leaf for 1-based labels.
pub fn target_leaf<T: Element>(tape: &mut Tape<T>, samples: &[Sample], indices: &[usize], classes: usize) -> Result<Var> {
    let labels: Vec<usize> = indices.iter().map(|&i| samples[i].label - 1).collect();
    Ok(tape.leaf(fusion::one_hot(&labels, classes)?))
}

/// Class probabilities for `indices`, computed in batches of `batch` with
/// the evaluation noise stream.
pub fn predict(
    params: &ModelParams<Tensor<f32>>,
    cfg: &ModelConfig,
    samples: &[Sample],
    indices: &[usize],
    seed: u64,
    batch: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch.max(1)) {
        let mut tape = Tape::<f32>::new();
        let pv = params.map(&mut |_, w| tape.leaf(w.clone()));
        let mut feat = [None, None];
        for (slot, m) in [Modality::Hsi, Modality::Lidar].into_iter().enumerate() {
            if cfg.mode.uses(m) {
                let x = tape.leaf(stack_batch(samples, chunk, m, cfg, seed, EVAL_ROUND)?);
                feat[slot] = Some(encode_branch(&mut tape, x, m, &pv)?);
            }
        }
        let target = target_leaf(&mut tape, samples, chunk, cfg.classes)?;
        let obj = pair_objective(&mut tape, feat[0], feat[1], target, &pv.fusion, cfg.mode)?;
        let probs = tape.value(obj.probs);
        let n = cfg.classes;
        out.extend(probs.data().chunks_exact(n).map(|r| r.iter().map(|&v| v as f64).collect()));
    }
    Ok(out)
}

/// 1-based arg-max class of a probability row (first maximum wins).
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best + 1
}
