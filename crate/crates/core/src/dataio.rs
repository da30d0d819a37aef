//! Two-modality scenes: synthetic generation, the FDSC1 file format, patch
//! extraction and non-IID client partitioning.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::numkit::{reflect_index, Tensor};

pub const MAGIC: &str = "FDSC1";
/// Maximum header length in bytes, newline included.
const MAX_HEADER: usize = 256;

/// Co-registered cubes `a: [h,w,c_a]`, `b: [h,w,c_b]` and a label map with
/// ids in `0..=classes` (0 = background).
#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub a: Tensor<f32>,
    pub b: Tensor<f32>,
    pub labels: Vec<u32>,
}

impl SceneDataset {
    pub fn new(classes: usize, a: Tensor<f32>, b: Tensor<f32>, labels: Vec<u32>) -> Result<Self> {
        let (&[h, w, _], &[hb, wb, _]) = (a.shape(), b.shape()) else {
            return Err(invalid("modality cubes must be [h, w, c]"));
        };
        if (h, w) != (hb, wb) || labels.len() != h * w {
            return Err(invalid(format!(
                "cube {:?}, cube {:?} and {} labels do not share a grid",
                a.shape(),
                b.shape(),
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&l| l as usize > classes) {
            return Err(invalid(format!("label {} at pixel {i} exceeds {classes} classes", labels[i])));
        }
        Ok(Self {
            height: h,
            width: w,
            classes,
            a,
            b,
            labels,
        })
    }

    pub fn channels_a(&self) -> usize {
        self.a.shape()[2]
    }

    pub fn channels_b(&self) -> usize {
        self.b.shape()[2]
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub channels_a: usize,
    pub channels_b: usize,
    /// standard deviation of the additive Gaussian noise
    pub noise: f64,
    pub cells_per_class: usize,
    /// pixels closer than this to a boundary between different classes are
    /// left as background
    pub margin: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            height: 64,
            width: 64,
            classes: 6,
            channels_a: 8,
            channels_b: 1,
            noise: 0.1,
            cells_per_class: 2,
            margin: 2.0,
        }
    }
}

/// Signature group of 1-based class `k` in modality A: classes 1 and 2
/// share a group, as do 3 and 4.
pub fn group_a(k: usize) -> usize {
    match k {
        1 | 2 => 0,
        3 | 4 => 1,
        _ => k - 3,
    }
}

/// Signature group in modality B: classes 1 and 3 share a group, as do 2
/// and 4.
pub fn group_b(k: usize) -> usize {
    match k {
        1 | 3 => 0,
        2 | 4 => 1,
        _ => k - 3,
    }
}

fn group_count(classes: usize, group: fn(usize) -> usize) -> usize {
    (1..=classes).map(group).max().map_or(0, |g| g + 1)
}

/// Noise-free per-class signatures `(a, b)`, indexed by 0-based class.
pub fn class_signatures(cfg: &SynthConfig) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5157_a7e5);
    let ga = group_count(cfg.classes, group_a);
    let sig_a: Vec<Vec<f64>> = (0..ga)
        .map(|_| (0..cfg.channels_a).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    // levels 0 and 1 separate the pairs that collide in A; the rest sit
    // evenly in between
    let gb = group_count(cfg.classes, group_b);
    let mut levels: Vec<f64> = vec![0.0, 1.0];
    let inner = gb.saturating_sub(2);
    levels.extend((1..=inner).map(|i| i as f64 / (inner + 1) as f64));
    levels.truncate(gb);
    let sig_b: Vec<Vec<f64>> = levels
        .iter()
        .map(|&l| (0..cfg.channels_b).map(|j| l * (1.0 - 0.1 * j as f64)).collect())
        .collect();
    let a = (1..=cfg.classes).map(|k| sig_a[group_a(k)].clone()).collect();
    let b = (1..=cfg.classes).map(|k| sig_b[group_b(k)].clone()).collect();
    (a, b)
}

/// Voronoi scene with class-specific signatures plus Gaussian noise.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SceneDataset> {
    if cfg.classes < 2 {
        return Err(invalid(format!("need at least 2 classes, got {}", cfg.classes)));
    }
    if cfg.height == 0 || cfg.width == 0 || cfg.channels_a == 0 || cfg.channels_b == 0 || cfg.cells_per_class == 0 {
        return Err(invalid("scene dimensions, channels and cells must be positive"));
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) || !(cfg.margin >= 0.0) {
        return Err(invalid("noise and margin must be finite and ≥ 0"));
    }
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cells = cfg.classes * cfg.cells_per_class;
    let seeds: Vec<(f64, f64, usize)> = (0..cells)
        .map(|i| {
            let y = rng.random_range(0.0..h as f64);
            let x = rng.random_range(0.0..w as f64);
            (y, x, i % cfg.classes + 1)
        })
        .collect();

    let mut labels = vec![0u32; h * w];
    let mut region = vec![0usize; h * w];
    for r in 0..h {
        for c in 0..w {
            let (py, px) = (r as f64 + 0.5, c as f64 + 0.5);
            let d2 = |s: &(f64, f64, usize)| (s.0 - py).powi(2) + (s.1 - px).powi(2);
            let near = (0..cells)
                .min_by(|&i, &j| d2(&seeds[i]).total_cmp(&d2(&seeds[j])))
                .expect("at least one cell");
            let class = seeds[near].2;
            // distance to the nearest bisector with a cell of another class
            let gap = seeds
                .iter()
                .filter(|s| s.2 != class)
                .map(|s| {
                    let sep = ((s.0 - seeds[near].0).powi(2) + (s.1 - seeds[near].1).powi(2)).sqrt();
                    (d2(s) - d2(&seeds[near])) / (2.0 * sep.max(1e-12))
                })
                .fold(f64::INFINITY, f64::min);
            region[r * w + c] = class;
            if gap >= cfg.margin {
                labels[r * w + c] = class as u32;
            }
        }
    }

    let (sig_a, sig_b) = class_signatures(cfg);
    let mut cube = |sig: &[Vec<f64>], ch: usize| -> Tensor<f32> {
        let mut data = Vec::with_capacity(h * w * ch);
        for &class in &region {
            for &v in &sig[class - 1] {
                let n: f64 = rng.sample(StandardNormal);
                data.push((v + cfg.noise * n) as f32);
            }
        }
        Tensor::new(&[h, w, ch], data).expect("cube shape")
    };
    let a = cube(&sig_a, cfg.channels_a);
    let b = cube(&sig_b, cfg.channels_b);
    SceneDataset::new(cfg.classes, a, b, labels)
}

/// One labeled pixel with its surrounding windows.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `[window, window, c_a]`
    pub a: Tensor<f32>,
    /// `[window, window, c_b]`
    pub b: Tensor<f32>,
    /// 1-based class id
    pub label: usize,
    pub row: usize,
    pub col: usize,
}

fn window_of(cube: &Tensor<f32>, row: usize, col: usize, window: usize) -> Tensor<f32> {
    let &[h, w, c] = cube.shape() else { unreachable!("validated cube") };
    let off = (window / 2) as isize;
    let src = cube.data();
    let mut out = Vec::with_capacity(window * window * c);
    for di in 0..window {
        let r = reflect_index(row as isize - off + di as isize, h);
        for dj in 0..window {
            let cc = reflect_index(col as isize - off + dj as isize, w);
            out.extend_from_slice(&src[(r * w + cc) * c..(r * w + cc + 1) * c]);
        }
    }
    Tensor::new(&[window, window, c], out).expect("window shape")
}

/// One sample per labeled pixel, in row-major pixel order. Windows start
/// `window/2` pixels above and left of the centre and mirror at borders.
pub fn extract_patches(ds: &SceneDataset, window: usize) -> Result<Vec<Sample>> {
    if window == 0 || window > ds.height.min(ds.width) {
        return Err(invalid(format!(
            "window {window} must be in 1..={}",
            ds.height.min(ds.width)
        )));
    }
    let mut out = Vec::with_capacity(ds.labeled_count());
    for r in 0..ds.height {
        for c in 0..ds.width {
            let l = ds.labels[r * ds.width + c];
            if l != 0 {
                out.push(Sample {
                    a: window_of(&ds.a, r, c, window),
                    b: window_of(&ds.b, r, c, window),
                    label: l as usize,
                    row: r,
                    col: c,
                });
            }
        }
    }
    Ok(out)
}

/// Stacked training unit for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchBatch {
    /// `[B, window, window, c_a]`
    pub a: Tensor<f32>,
    /// `[B, window, window, c_b]`
    pub b: Tensor<f32>,
    /// 1-based class ids
    pub labels: Vec<usize>,
    pub coords: Vec<(usize, usize)>,
}

impl PatchBatch {
    pub fn gather(samples: &[Sample], indices: &[usize]) -> Result<Self> {
        let first = samples
            .get(*indices.first().ok_or_else(|| invalid("empty batch"))?)
            .ok_or_else(|| invalid("batch index out of range"))?;
        let stack = |f: fn(&Sample) -> &Tensor<f32>| -> Result<Tensor<f32>> {
            let mut shape = vec![indices.len()];
            shape.extend_from_slice(f(first).shape());
            let mut data = Vec::with_capacity(shape.iter().product());
            for &i in indices {
                let s = samples.get(i).ok_or_else(|| invalid(format!("sample {i} out of range")))?;
                data.extend_from_slice(f(s).data());
            }
            Tensor::new(&shape, data)
        };
        Ok(Self {
            a: stack(|s| &s.a)?,
            b: stack(|s| &s.b)?,
            labels: indices.iter().map(|&i| samples[i].label).collect(),
            coords: indices.iter().map(|&i| (samples[i].row, samples[i].col)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Resampling budget when a client ends up empty.
pub const PARTITION_ATTEMPTS: usize = 10;

fn dirichlet<R: Rng + ?Sized>(k: usize, alpha: f64, rng: &mut R) -> Vec<f64> {
    let g = Gamma::new(alpha, 1.0).expect("alpha validated");
    let mut v: Vec<f64> = (0..k).map(|_| rng.sample(g)).collect();
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    } else {
        v.iter_mut().for_each(|x| *x = 1.0 / k as f64);
    }
    v
}

/// Splits sample indices over `n_clients` with per-class Dirichlet(α)
/// proportions. Each list is sorted ascending.
pub fn partition_noniid(labels: &[usize], n_clients: usize, alpha: f64, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n_clients == 0 {
        return Err(invalid("need at least one client"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(invalid(format!("Dirichlet concentration must be > 0, got {alpha}")));
    }
    if n_clients == 1 {
        return Ok(vec![(0..labels.len()).collect()]);
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sizes = Vec::new();
    for attempt in 0..PARTITION_ATTEMPTS {
        let mut parts = vec![Vec::new(); n_clients];
        for &c in &classes {
            let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            idx.shuffle(&mut rng);
            let p = dirichlet(n_clients, alpha, &mut rng);
            let n = idx.len();
            let mut start = 0;
            let mut acc = 0.0;
            for (k, part) in parts.iter_mut().enumerate() {
                acc += p[k];
                let end = if k + 1 == n_clients { n } else { ((acc * n as f64).round() as usize).clamp(start, n) };
                part.extend_from_slice(&idx[start..end]);
                start = end;
            }
        }
        sizes = parts.iter().map(Vec::len).collect();
        if sizes.iter().all(|&s| s > 0) {
            for p in &mut parts {
                p.sort_unstable();
            }
            return Ok(parts);
        }
        let _ = attempt;
    }
    Err(Error::Partition(format!(
        "a client stayed empty after {PARTITION_ATTEMPTS} draws (α={alpha}, {} samples, last sizes {sizes:?})",
        labels.len()
    )))
}

/// Seeded shuffle of `0..n` split into (train, validation); the
/// validation share is `round(n·val_fraction)`, at least one when n ≥ 2.
pub fn split_train_val(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(invalid(format!("validation fraction {val_fraction} outside [0, 1)")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x7a11_da7e));
    let mut nv = (n as f64 * val_fraction).round() as usize;
    if val_fraction > 0.0 && n >= 2 {
        nv = nv.max(1);
    }
    let mut val = idx.split_off(n - nv);
    idx.sort_unstable();
    val.sort_unstable();
    Ok((idx, val))
}

fn header(ds: &SceneDataset) -> String {
    format!(
        "{MAGIC} {} {} {} {} {}\n",
        ds.height,
        ds.width,
        ds.channels_a(),
        ds.channels_b(),
        ds.classes
    )
}

/// Serialises to the FDSC1 byte layout.
pub fn encode_dataset(ds: &SceneDataset) -> Vec<u8> {
    let mut out = header(ds).into_bytes();
    for v in ds.a.data().iter().chain(ds.b.data()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for l in &ds.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

/// Parses the FDSC1 byte layout.
pub fn decode_dataset(bytes: &[u8]) -> Result<SceneDataset> {
    let fmt = |offset: usize, detail: String| Error::Format {
        offset: offset as u64,
        detail,
    };
    let nl = bytes
        .iter()
        .take(MAX_HEADER)
        .position(|&b| b == b'\n')
        .ok_or_else(|| fmt(0, format!("no header line within {MAX_HEADER} bytes")))?;
    let text = std::str::from_utf8(&bytes[..nl]).map_err(|_| fmt(0, "header is not UTF-8".into()))?;
    let mut fields = text.split(' ');
    if fields.next() != Some(MAGIC) {
        return Err(fmt(0, format!("bad magic, expected {MAGIC}")));
    }
    let nums: Vec<usize> = fields
        .map(|f| f.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| fmt(MAGIC.len() + 1, format!("bad header field: {e}")))?;
    let &[h, w, ca, cb, classes] = nums.as_slice() else {
        return Err(fmt(MAGIC.len() + 1, format!("expected 5 header fields, got {}", nums.len())));
    };
    if h == 0 || w == 0 || ca == 0 || cb == 0 {
        return Err(fmt(MAGIC.len() + 1, format!("zero dimension in header {h} {w} {ca} {cb}")));
    }
    let body = nl + 1;
    let px = h
        .checked_mul(w)
        .ok_or_else(|| fmt(MAGIC.len() + 1, "dimensions overflow".into()))?;
    let expected = px
        .checked_mul(ca + cb + 1)
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(body))
        .ok_or_else(|| fmt(MAGIC.len() + 1, "dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(fmt(
            bytes.len().min(expected),
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let f32s = |start: usize, n: usize| -> Vec<f32> {
        bytes[start..start + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect()
    };
    let a = f32s(body, px * ca);
    let b = f32s(body + 4 * px * ca, px * cb);
    let lstart = body + 4 * px * (ca + cb);
    let labels: Vec<u32> = bytes[lstart..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    if let Some(i) = labels.iter().position(|&l| l as usize > classes) {
        return Err(fmt(lstart + 4 * i, format!("label {} exceeds {classes} classes", labels[i])));
    }
    SceneDataset::new(classes, Tensor::new(&[h, w, ca], a)?, Tensor::new(&[h, w, cb], b)?, labels)
}

pub fn save_dataset(ds: &SceneDataset, path: &Path) -> Result<()> {
    let io = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(&encode_dataset(ds)).map_err(io)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<SceneDataset> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_dataset(&bytes)
}
