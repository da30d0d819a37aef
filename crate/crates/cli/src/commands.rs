//! The five subcommands. Each writes human-readable progress to `out` and
//! returns what the caller needs to check or chain.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use mmfed_core::dataio::{extract_patches, generate_synthetic, load_dataset, save_dataset, Sample, SceneDataset};
use mmfed_core::fedsim::{
    argmax, format_mib, lowrank_elements, predict, stack_batch, svd_encode, Federation, Ledger, ModelParams,
    Modality, RankPolicy, Split, BYTES_PER_ELEMENT,
};
use mmfed_core::fusion::threshold_map;
use mmfed_core::metrics::{accumulate, Scores};
use mmfed_core::net::{branch_forward, Encoder};
use mmfed_core::numkit::Tensor;
use sha2::{Digest, Sha256};

use crate::checkpoint::{self, Checkpoint};
use crate::config::{hex, CodecMode, RunConfig, TrainMode};
use crate::error::{CliError, CliResult};

pub const CHECKPOINT_FILE: &str = "checkpoint.mmck";
pub const LEDGER_FILE: &str = "ledger.csv";
pub const LOG_FILE: &str = "train_log.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const REPORT_FILE: &str = "report.txt";
pub const MAP_FILE: &str = "predictions.txt";
pub const PPM_FILE: &str = "predictions.ppm";

/// Training variants of the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Ablation {
    /// downsample and 1×1 projections only, trained locally
    Plain,
    /// full encoder trained on one process
    Local,
    /// full encoder across clients, raw feature exchange
    Federated,
    /// full encoder across clients, low-rank feature exchange
    FederatedCodec,
}

impl Ablation {
    pub fn apply(self, cfg: &mut RunConfig) {
        match self {
            Ablation::Plain => {
                cfg.encoder = Encoder::Plain;
                cfg.mode = TrainMode::Local;
            }
            Ablation::Local => {
                cfg.encoder = Encoder::Improved;
                cfg.mode = TrainMode::Local;
            }
            Ablation::Federated => {
                cfg.encoder = Encoder::Improved;
                cfg.mode = TrainMode::Federated;
                cfg.codec = CodecMode::Off;
            }
            Ablation::FederatedCodec => {
                cfg.encoder = Encoder::Improved;
                cfg.mode = TrainMode::Federated;
                if matches!(cfg.codec, CodecMode::Off | CodecMode::Lossless) {
                    cfg.codec = CodecMode::Energy;
                }
            }
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::io(path, e)
}

fn say(out: &mut dyn Write, text: impl AsRef<str>) -> CliResult<()> {
    writeln!(out, "{}", text.as_ref()).map_err(|e| CliError::Runtime(format!("writing output: {e}")))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

/// Dataset named by the config, or the seeded synthetic scene.
pub fn load_scene(cfg: &RunConfig) -> CliResult<SceneDataset> {
    match &cfg.data_path {
        Some(p) => load_dataset(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display()))),
        None => Ok(generate_synthetic(&cfg.synth_config())?),
    }
}

fn class_counts(ds: &SceneDataset) -> Vec<usize> {
    let mut counts = vec![0usize; ds.classes];
    for &l in ds.labels.iter().filter(|&&l| l > 0) {
        counts[l as usize - 1] += 1;
    }
    counts
}

fn describe_scene(ds: &SceneDataset) -> String {
    let counts = class_counts(ds);
    let per_class: Vec<String> = counts.iter().enumerate().map(|(i, n)| format!("{}:{n}", i + 1)).collect();
    format!(
        "scene {}x{}, channels {}+{}, {} classes, {} labelled pixels ({})",
        ds.height,
        ds.width,
        ds.channels_a(),
        ds.channels_b(),
        ds.classes,
        ds.labeled_count(),
        per_class.join(" ")
    )
}

pub fn cmd_generate(cfg: &RunConfig, path: &Path, out: &mut dyn Write) -> CliResult<SceneDataset> {
    let ds = generate_synthetic(&cfg.synth_config())?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    save_dataset(&ds, path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    say(out, format!("wrote {}", path.display()))?;
    say(out, describe_scene(&ds))?;
    say(out, format!("sha256 {}", sha256_file(path)?))?;
    Ok(ds)
}

/// Artifacts and headline numbers of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub dir: PathBuf,
    pub final_val_oa: Option<f64>,
    pub feature_bytes: u64,
    pub gradient_bytes: u64,
    pub epochs: usize,
}

fn epoch_csv(log: &[mmfed_core::fedsim::EpochSummary]) -> String {
    let mut s = String::from("epoch,lr,loss,rounds,feature_bytes,gradient_bytes,val_oa\n");
    for e in log {
        let oa = e.val_oa.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            s,
            "{},{},{},{},{},{},{oa}",
            e.epoch, e.lr, e.loss, e.rounds, e.feature_bytes, e.gradient_bytes
        )
        .unwrap();
    }
    s
}

/// Trains under `runs/<hash>-s<seed>` and writes the checkpoint, ledger,
/// per-epoch log, validation report and checksums there.
pub fn cmd_train(cfg: &RunConfig, runs: &Path, out: &mut dyn Write) -> CliResult<TrainOutcome> {
    cfg.validate()?;
    let ds = load_scene(cfg)?;
    let fed_cfg = cfg.fed_config(ds.channels_a(), ds.channels_b(), ds.classes)?;
    let samples = extract_patches(&ds, cfg.window)?;
    let dir = runs.join(cfg.run_name());
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write_file(&dir.join(CONFIG_FILE), cfg.to_text())?;
    say(out, format!("run {}", dir.display()))?;
    say(out, describe_scene(&ds))?;

    let mut fed = Federation::new(fed_cfg, &samples)?;
    say(
        out,
        format!(
            "{} client(s), {} training / {} validation samples, {} rounds per epoch",
            fed.clients().len(),
            fed.split().train.len(),
            fed.split().val.len(),
            fed.rounds_per_epoch()
        ),
    )?;
    let mut lines = Vec::new();
    let log = fed.run(|e| {
        lines.push(format!(
            "epoch {:>4}  lr {:.3e}  loss {:>10.5}  feature {:>12} B  gradient {:>12} B  val OA {}",
            e.epoch,
            e.lr,
            e.loss,
            e.feature_bytes,
            e.gradient_bytes,
            e.val_oa.map_or("-".into(), |v| format!("{v:.4}"))
        ));
    });
    for l in &lines {
        say(out, l)?;
    }
    let log = log?;

    let model = fed.model();
    let ckpt = Checkpoint::new(cfg, ds.channels_a(), ds.channels_b(), ds.classes, &model);
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    ckpt.save(&ckpt_path)?;
    let ledger_path = dir.join(LEDGER_FILE);
    write_file(&ledger_path, fed.ledger().to_csv())?;
    write_file(&dir.join(LOG_FILE), epoch_csv(&log))?;
    let report = match fed.validate()? {
        Some(m) => m.scores()?.table(),
        None => "no validation split\n".into(),
    };
    write_file(&dir.join(REPORT_FILE), &report)?;
    write_file(
        &dir.join("checksums.txt"),
        format!(
            "{}  {CHECKPOINT_FILE}\n{}  {LEDGER_FILE}\n",
            sha256_file(&ckpt_path)?,
            sha256_file(&ledger_path)?
        ),
    )?;

    let ledger: &Ledger = fed.ledger();
    let (fb, gb) = (ledger.feature_bytes(), ledger.gradient_bytes());
    say(out, report.trim_end())?;
    say(
        out,
        format!(
            "traffic: feature {fb} B ({} MiB), gradient {gb} B ({} MiB), {} messages",
            format_mib(fb),
            format_mib(gb),
            ledger.messages().count()
        ),
    )?;
    Ok(TrainOutcome {
        dir,
        final_val_oa: log.last().and_then(|e| e.val_oa),
        feature_bytes: fb,
        gradient_bytes: gb,
        epochs: log.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalSplit {
    /// the run's held-out validation samples
    Val,
    /// every labelled pixel
    All,
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub scores: Scores,
    pub evaluated: usize,
    /// nonzero entries of the written class map
    pub mapped: usize,
    pub confident: usize,
    pub map_path: PathBuf,
}

const PALETTE: [[u8; 3]; 16] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
];

fn class_map_text(h: usize, w: usize, map: &[usize]) -> String {
    let mut s = format!("{h} {w}\n");
    for row in map.chunks(w) {
        let cells: Vec<String> = row.iter().map(usize::to_string).collect();
        s.push_str(&cells.join(" "));
        s.push('\n');
    }
    s
}

fn class_map_ppm(h: usize, w: usize, map: &[usize]) -> Vec<u8> {
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for &c in map {
        let rgb = if c == 0 { [0, 0, 0] } else { PALETTE[(c - 1) % PALETTE.len()] };
        out.extend_from_slice(&rgb);
    }
    out
}

/// Scores a checkpoint on its validation split (or every labelled pixel)
/// and writes the class-id map and its colour rendering.
pub fn cmd_evaluate(
    ckpt_path: &Path,
    data: Option<&Path>,
    split: EvalSplit,
    out_dir: Option<&Path>,
    out: &mut dyn Write,
) -> CliResult<EvalOutcome> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let mut cfg = ckpt.config.clone();
    if let Some(p) = data {
        cfg.data_path = Some(p.to_path_buf());
    }
    let ds = load_scene(&cfg)?;
    if (ds.channels_a(), ds.channels_b(), ds.classes) != (ckpt.channels_a, ckpt.channels_b, ckpt.classes) {
        return Err(CliError::Validation(format!(
            "dataset has channels {}+{} and {} classes, checkpoint expects {}+{} and {}",
            ds.channels_a(),
            ds.channels_b(),
            ds.classes,
            ckpt.channels_a,
            ckpt.channels_b,
            ckpt.classes
        )));
    }
    let fed_cfg = cfg.fed_config(ds.channels_a(), ds.channels_b(), ds.classes)?;
    let model: ModelParams<Tensor<f32>> = ckpt.model()?;
    let samples = extract_patches(&ds, cfg.window)?;
    let indices: Vec<usize> = match split {
        EvalSplit::Val => Split::new(&fed_cfg, &samples)?.val,
        EvalSplit::All => (0..samples.len()).collect(),
    };
    if indices.is_empty() {
        return Err(CliError::Validation("nothing to evaluate: the selected split is empty".into()));
    }
    let probs = predict(&model, &fed_cfg.model, &samples, &indices, fed_cfg.seed, fed_cfg.batch)?;
    let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let truths: Vec<usize> = indices.iter().map(|&i| samples[i].label).collect();
    let scores = accumulate(ds.classes, &preds, &truths)?.scores()?;
    let confident = probs
        .iter()
        .map(|p| threshold_map(p, cfg.tau).map(usize::from))
        .sum::<mmfed_core::Result<usize>>()?;

    let mut map = vec![0usize; ds.height * ds.width];
    for (&i, &p) in indices.iter().zip(&preds) {
        let s: &Sample = &samples[i];
        map[s.row * ds.width + s.col] = p;
    }
    let dir = out_dir
        .map(Path::to_path_buf)
        .or_else(|| ckpt_path.parent().map(Path::to_path_buf))
        .unwrap_or_default();
    if !dir.as_os_str().is_empty() {
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }
    let map_path = dir.join(MAP_FILE);
    write_file(&map_path, class_map_text(ds.height, ds.width, &map))?;
    write_file(&dir.join(PPM_FILE), class_map_ppm(ds.height, ds.width, &map))?;
    write_file(&dir.join("evaluation.csv"), scores.records())?;

    say(out, format!("evaluated {} samples", indices.len()))?;
    say(out, scores.table().trim_end())?;
    say(out, format!("confident (max probability ≥ {}): {confident}/{}", cfg.tau, indices.len()))?;
    say(out, format!("class map written to {}", map_path.display()))?;
    Ok(EvalOutcome {
        scores,
        evaluated: indices.len(),
        mapped: map.iter().filter(|&&c| c > 0).count(),
        confident,
        map_path,
    })
}

/// One row of the communication table.
#[derive(Clone, Debug, PartialEq)]
pub struct CommRow {
    pub label: String,
    pub elements: u64,
    pub raw_elements: u64,
    pub fallback: bool,
}

impl CommRow {
    pub fn bytes(&self) -> u64 {
        self.elements * BYTES_PER_ELEMENT
    }

    /// `bytes_off / bytes_on`
    pub fn ratio(&self) -> f64 {
        self.raw_elements as f64 / self.elements as f64
    }
}

fn comm_table(rows: &[CommRow]) -> String {
    let mut s = format!(
        "{:<34} {:>12} {:>14} {:>10} {:>8}\n",
        "mode", "elements", "bytes", "MiB", "ratio"
    );
    for r in rows {
        writeln!(
            s,
            "{:<34} {:>12} {:>14} {:>10} {:>8.3}{}",
            r.label,
            r.elements,
            r.bytes(),
            format_mib(r.bytes()),
            r.ratio(),
            if r.fallback { "  (fallback to raw)" } else { "" }
        )
        .unwrap();
    }
    s
}

/// Codec-off vs codec-on traffic for one batch of freshly initialised
/// feature maps at the configured shapes, plus optional element totals.
pub fn cmd_bench_comm(cfg: &RunConfig, totals: Option<(u64, u64)>, out: &mut dyn Write) -> CliResult<Vec<CommRow>> {
    cfg.validate()?;
    let ds = load_scene(cfg)?;
    let fed_cfg = cfg.fed_config(ds.channels_a(), ds.channels_b(), ds.classes)?;
    let samples = extract_patches(&ds, cfg.window)?;
    let model = ModelParams::<Tensor<f32>>::init(&fed_cfg.model, cfg.seed)?;
    let batch: Vec<usize> = (0..cfg.batch.min(samples.len())).collect();
    let mut rows = Vec::new();
    for (m, branch) in [(Modality::Hsi, &model.hsi), (Modality::Lidar, &model.lidar)] {
        let x = stack_batch(&samples, &batch, m, &fed_cfg.model, cfg.seed, 0)?;
        let f = branch_forward(&x, branch)?;
        let q = *f.shape().last().expect("feature map");
        let p = f.len() / q;
        let raw = (p * q) as u64;
        let name = m.as_str();
        let mut push = |label: String, elements: usize, fallback: bool| {
            rows.push(CommRow {
                label,
                elements: elements as u64,
                raw_elements: raw,
                fallback,
            })
        };
        push(format!("{name} {p}x{q} off"), p * q, false);
        let full = p.min(q);
        let lossless = lowrank_elements(p, q, full);
        push(format!("{name} {p}x{q} lossless t={full}"), lossless.min(p * q), lossless >= p * q);
        let t = cfg.rank.min(full);
        let fixed = lowrank_elements(p, q, t);
        push(format!("{name} {p}x{q} fixed t={t}"), fixed.min(p * q), fixed >= p * q);
        let policy = RankPolicy::Energy {
            theta: cfg.theta,
            capped: cfg.cap,
        };
        let wire = svd_encode(&f, policy)?;
        let label = match &wire {
            mmfed_core::fedsim::Encoded::LowRank(lr) => format!("{name} {p}x{q} energy {} t={}", cfg.theta, lr.rank()),
            mmfed_core::fedsim::Encoded::Raw(_) => format!("{name} {p}x{q} energy {}", cfg.theta),
        };
        push(label, wire.element_count(), !wire.is_lowrank());
    }
    if let Some((off, on)) = totals {
        rows.push(CommRow {
            label: "totals".into(),
            elements: on,
            raw_elements: off,
            fallback: false,
        });
    }
    say(out, comm_table(&rows).trim_end())?;
    if let Some((off, _)) = totals {
        let b = off * BYTES_PER_ELEMENT;
        say(out, format!("totals without codec: {off} elements, {b} B, {} MiB", format_mib(b)))?;
    }
    Ok(rows)
}

/// Prints the header of an FDSC1 dataset or MMCK1 checkpoint.
pub fn cmd_inspect(path: &Path, out: &mut dyn Write) -> CliResult<()> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    say(out, format!("{} ({} bytes, sha256 {})", path.display(), bytes.len(), hex(&Sha256::digest(&bytes))))?;
    if bytes.starts_with(mmfed_core::dataio::MAGIC.as_bytes()) {
        let ds = mmfed_core::dataio::decode_dataset(&bytes)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        let header = bytes.split(|&b| b == b'\n').next().unwrap_or_default();
        say(out, format!("dataset header: {}", String::from_utf8_lossy(header)))?;
        say(out, describe_scene(&ds))?;
    } else if bytes.starts_with(checkpoint::MAGIC.as_bytes()) {
        let c = Checkpoint::decode(&bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        say(
            out,
            format!(
                "checkpoint: channels {}+{}, {} classes, {} tensors, {} parameters, run {}",
                c.channels_a,
                c.channels_b,
                c.classes,
                c.params.len(),
                c.parameter_count(),
                c.config.run_name()
            ),
        )?;
        for (name, t) in &c.params {
            say(out, format!("  {name:<28} {:?}", t.shape()))?;
        }
        say(out, "config:")?;
        for line in c.config.to_text().lines() {
            say(out, format!("  {line}"))?;
        }
    } else {
        return Err(CliError::Runtime(format!(
            "{}: neither an FDSC1 dataset nor an MMCK1 checkpoint",
            path.display()
        )));
    }
    Ok(())
}
