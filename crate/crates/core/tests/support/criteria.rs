//! One function per headline criterion. `Ok` carries a short summary of
//! the measured values, `Err` the first violated bound.

use mmfed_core::dataio::{extract_patches, generate_synthetic, Sample, SynthConfig};
use mmfed_core::diffusion::{posterior_step, q_sample, q_step, standard_normal, NoiseSchedule};
use mmfed_core::fedsim::{
    format_mib, lowrank_elements, max_param_diff, svd_decode, svd_encode, Centralized, Codec, FedConfig, Federation,
    LowRankFactors, ModalityMode, ModelConfig, OptimConfig, PayloadKind, RankPolicy, RoundLog,
};
use mmfed_core::fusion::{self, classify, fuse, FusionParams, LogitsBundle};
use mmfed_core::metrics::{accumulate, ConfusionMatrix};
use mmfed_core::net::{fdp, fdp_forward, msa, AttentionParams, SpectralFilterParams};
use mmfed_core::numkit::{fft2, grad_check_many, Tape, Tensor, Var};
use rand::Rng;

use super::oracle::{self, rng, uniform};

pub type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Iterated single steps vs the closed form at t ∈ {1,10,100} over 10⁵
/// scalar trials, and the reverse-step mean vs the conjugate posterior on
/// 50 cases.
pub fn diffusion_math() -> Outcome {
    let s = NoiseSchedule::default();
    let n = 100_000;
    let mut r = rng(11);
    let mut worst_sigma: f64 = 0.0;
    for t in [1usize, 10, 100] {
        let ones = Tensor::<f64>::full(&[n], 1.0);
        let mut x = ones.clone();
        for step in 1..=t {
            let eps = standard_normal(&[n], &mut r);
            x = q_step(&x, step, &eps, &s).map_err(e2s)?;
        }
        let eps = standard_normal(&[n], &mut r);
        let y = q_sample(&ones, t, &eps, &s).map_err(e2s)?;
        let (m1, v1) = oracle::mean_var(x.data());
        let (m2, v2) = oracle::mean_var(y.data());
        let nf = n as f64;
        let se_m = (v1 / nf + v2 / nf).sqrt();
        let se_v = (2.0 * v1 * v1 / (nf - 1.0) + 2.0 * v2 * v2 / (nf - 1.0)).sqrt();
        let zm = (m1 - m2).abs() / se_m;
        let zv = (v1 - v2).abs() / se_v;
        let ab = s.alpha_bar(t);
        let za = (m2 - ab.sqrt()).abs() / (v2 / nf).sqrt();
        let zb = (v2 - (1.0 - ab)).abs() / ((2.0 / (nf - 1.0)).sqrt() * (1.0 - ab));
        for (what, z) in [("mean", zm), ("variance", zv), ("closed-form mean", za), ("closed-form variance", zb)] {
            ensure(z <= 3.0, || format!("t={t}: {what} differs by {z:.2} standard errors"))?;
            worst_sigma = worst_sigma.max(z);
        }
    }
    let t_max = s.steps();
    let beta: Vec<f64> = (0..t_max)
        .map(|i| 1e-4 + (0.02 - 1e-4) * i as f64 / (t_max - 1) as f64)
        .collect();
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let x0: f64 = r.random_range(-2.0..2.0);
        let t: usize = r.random_range(1..=t_max);
        let e: f64 = r.sample(rand_distr::StandardNormal);
        let xt = q_sample(&Tensor::full(&[1], x0), t, &Tensor::full(&[1], e), &s).map_err(e2s)?;
        let mu = posterior_step(&xt, &Tensor::full(&[1], e), t, &s, &Tensor::zeros(&[1])).map_err(e2s)?;
        let want = oracle::bayes_posterior_mean(x0, xt.data()[0], &beta, t);
        let d = (mu.data()[0] - want).abs();
        ensure(d < 1e-6, || format!("posterior mean off by {d:e} at t={t}, x0={x0}"))?;
        worst = worst.max(d);
    }
    Ok(format!("max deviation {worst_sigma:.2} SE; posterior max error {worst:.1e}"))
}

/// FDP with the all-pass filter and the FFT against the direct DFT on
/// every shape in {2..8}².
pub fn spectral_layer() -> Outcome {
    let mut r = rng(21);
    let mut fdp_dev: f64 = 0.0;
    for shape in [[4usize, 4, 3], [5, 7, 2], [8, 8, 4], [3, 6, 1]] {
        let x = uniform::<f32>(&shape, &mut r);
        let p = SpectralFilterParams::identity(shape[0], shape[1], shape[2]);
        let y = fdp_forward(&x, &p).map_err(e2s)?;
        fdp_dev = fdp_dev.max(y.max_abs_diff(&x).map_err(e2s)?);
    }
    ensure(fdp_dev < 1e-5, || format!("identity filter deviates by {fdp_dev:e}"))?;
    let mut fft_dev: f64 = 0.0;
    for h in 2..=8 {
        for w in 2..=8 {
            let x = uniform::<f32>(&[h, w], &mut r);
            let got = fft2(&x).map_err(e2s)?;
            let want = oracle::dft2(&x.to_f64_vec(), h, w);
            for (i, (re, im)) in want.iter().enumerate() {
                let (gr, gi) = got.get(i);
                fft_dev = fft_dev.max((gr as f64 - re).abs()).max((gi as f64 - im).abs());
            }
        }
    }
    ensure(fft_dev < 1e-4, || format!("fft2 deviates from the DFT by {fft_dev:e}"))?;
    Ok(format!("identity filter deviation {fdp_dev:.1e}; fft2 vs DFT {fft_dev:.1e} over 49 shapes"))
}

type Objective = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> mmfed_core::Result<Var>>;

/// `Σ y ⊙ R` for a fixed random weight `R` shaped like `y`.
fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> mmfed_core::Result<Var> {
    let shape = tape.shape(y).to_vec();
    let r = tape.leaf(uniform::<f64>(&shape, &mut rng(seed)));
    let z = tape.mul(y, r)?;
    Ok(tape.sum(z))
}

/// `(layer, inputs, objective)` cases, at least three shapes per layer.
pub fn gradient_cases() -> Vec<(&'static str, Vec<Tensor<f64>>, Objective)> {
    let mut r = rng(31);
    let mut cases: Vec<(&'static str, Vec<Tensor<f64>>, Objective)> = Vec::new();
    for (m, k, n) in [(2, 3, 4), (4, 2, 5), (1, 6, 1)] {
        cases.push((
            "matmul",
            vec![uniform(&[m, k], &mut r), uniform(&[k, n], &mut r)],
            Box::new(|t, v| {
                let y = t.matmul(v[0], v[1])?;
                weighted_sum(t, y, 1)
            }),
        ));
    }
    for shape in [vec![2, 3], vec![4, 5], vec![1, 7]] {
        cases.push((
            "softmax",
            vec![uniform(&shape, &mut r)],
            Box::new(|t, v| {
                let y = t.softmax(v[0])?;
                weighted_sum(t, y, 2)
            }),
        ));
    }
    for (shape, heads) in [(vec![3usize, 4usize], 2usize), (vec![5, 6], 3), (vec![2, 4, 4], 1)] {
        let d = *shape.last().unwrap();
        let mut inputs = vec![uniform(&shape, &mut r)];
        for _ in 0..4 {
            inputs.push(uniform(&[d, d], &mut r));
        }
        cases.push((
            "msa",
            inputs,
            Box::new(move |t, v| {
                let p = AttentionParams {
                    heads,
                    wq: v[1],
                    wk: v[2],
                    wv: v[3],
                    wo: v[4],
                };
                let y = msa(t, v[0], &p)?;
                weighted_sum(t, y, 3)
            }),
        ));
    }
    for (x_shape, f_shape) in [
        (vec![3usize, 3, 2], vec![3usize, 3, 2]),
        (vec![4, 5, 1], vec![4, 5, 1]),
        (vec![2, 2, 6, 3], vec![2, 6, 3]),
    ] {
        cases.push((
            "fdp",
            vec![uniform(&x_shape, &mut r), uniform(&f_shape, &mut r), uniform(&f_shape, &mut r)],
            Box::new(|t, v| {
                let y = fdp(t, v[0], &SpectralFilterParams { re: v[1], im: v[2] })?;
                weighted_sum(t, y, 4)
            }),
        ));
    }
    for shape in [vec![1usize, 2, 2, 3], vec![2, 1, 3, 4], vec![3, 2, 2, 2]] {
        let c = *shape.last().unwrap();
        let mut inputs = vec![uniform(&shape, &mut r), uniform(&shape, &mut r)];
        for _ in 0..3 {
            inputs.push(uniform(&[c, c], &mut r));
        }
        cases.push((
            "fuse",
            inputs,
            Box::new(|t, v| {
                let p = FusionParams {
                    cb: v[2],
                    cd: v[3],
                    cl: v[4],
                    head_w: v[2],
                    head_b: v[2],
                };
                let f = fuse(t, v[0], v[1], &p)?;
                weighted_sum(t, f.fusion, 5)
            }),
        ));
    }
    for (b, c, n) in [(1usize, 3usize, 2usize), (2, 4, 3), (4, 2, 5)] {
        cases.push((
            "classify",
            vec![uniform(&[b, c], &mut r), uniform(&[c, n], &mut r), uniform(&[n], &mut r)],
            Box::new(|t, v| {
                let head = FusionParams {
                    cb: v[1],
                    cd: v[1],
                    cl: v[1],
                    head_w: v[1],
                    head_b: v[2],
                };
                let y = classify(t, v[0], &head)?;
                weighted_sum(t, y, 6)
            }),
        ));
    }
    for (n, classes) in [(1usize, 3usize), (2, 4), (4, 2)] {
        let labels: Vec<usize> = (0..n).map(|i| (i * 7 + 1) % classes).collect();
        let target = fusion::one_hot::<f64>(&labels, classes).unwrap();
        cases.push((
            "loss",
            vec![
                uniform(&[n, classes], &mut r),
                uniform(&[n, classes], &mut r),
                uniform(&[n, classes], &mut r),
                uniform(&[2, 3], &mut r),
            ],
            Box::new(move |t, v| {
                let o_f = t.softmax(v[0])?;
                let o_1 = t.softmax(v[1])?;
                let o_2 = t.softmax(v[2])?;
                let target = t.leaf(target.clone());
                let b = LogitsBundle {
                    fusion: o_f,
                    hsi: Some(o_1),
                    lidar: Some(o_2),
                    target,
                };
                Ok(fusion::loss(t, &b, &[v[3]], 0.1)?.total)
            }),
        ));
    }
    cases
}

/// Central-difference checks of every differentiable layer.
pub fn gradient_integrity() -> Outcome {
    let mut per_layer: Vec<(&str, usize, f64)> = Vec::new();
    for (layer, inputs, f) in gradient_cases() {
        let report = grad_check_many(|t, v| f(t, v), &inputs, 1e-4).map_err(e2s)?;
        let shape = inputs[0].shape().to_vec();
        ensure(report.max_rel_error < 1e-3, || {
            format!(
                "{layer} on {shape:?}: relative error {:.2e} at input {} coordinate {}",
                report.max_rel_error, report.worst.0, report.worst.1
            )
        })?;
        match per_layer.iter_mut().find(|(l, _, _)| *l == layer) {
            Some(e) => {
                e.1 += 1;
                e.2 = e.2.max(report.max_rel_error);
            }
            None => per_layer.push((layer, 1, report.max_rel_error)),
        }
    }
    for (layer, shapes, _) in &per_layer {
        ensure(*shapes >= 3, || format!("{layer} checked on only {shapes} shapes"))?;
    }
    Ok(per_layer
        .iter()
        .map(|(l, n, e)| format!("{l} {n}×{e:.1e}"))
        .collect::<Vec<_>>()
        .join(", "))
}

fn rel_frobenius(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let d: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| *x as f64 - *y as f64).collect();
    oracle::frobenius(&d) / oracle::frobenius(&b.to_f64_vec()).max(1e-12)
}

/// Lossless round trip, Eckart–Young tail energy, element-count formula.
pub fn codec() -> Outcome {
    let mut r = rng(41);
    let mut rt: f64 = 0.0;
    for (p, q) in [(8usize, 8usize), (12, 5), (4, 9), (32, 16)] {
        let x = uniform::<f32>(&[p, q], &mut r);
        let wire = Codec::Lossless.encode(&x).map_err(e2s)?;
        rt = rt.max(rel_frobenius(&wire.decode().map_err(e2s)?, &x));
        let full = LowRankFactors::factorize(&x, RankPolicy::Fixed(p.min(q))).map_err(e2s)?;
        rt = rt.max(rel_frobenius(&svd_decode(&full).map_err(e2s)?, &x));
    }
    ensure(rt < 1e-4, || format!("lossless round trip error {rt:e}"))?;

    let mut ey: f64 = 0.0;
    for _ in 0..20 {
        let p = r.random_range(2..=12);
        let q = r.random_range(2..=12);
        let t = r.random_range(1..=p.min(q));
        let x = uniform::<f32>(&[p, q], &mut r);
        let lr = LowRankFactors::factorize(&x, RankPolicy::Fixed(t)).map_err(e2s)?;
        let approx = svd_decode(&lr).map_err(e2s)?;
        let d: Vec<f64> = approx.data().iter().zip(x.data()).map(|(a, b)| *a as f64 - *b as f64).collect();
        let err = oracle::frobenius(&d);
        let sv = oracle::singular_values(&x.to_f64_vec(), p, q);
        let tail = sv[t..].iter().map(|s| s * s).sum::<f64>().sqrt();
        ey = ey.max((err - tail).abs());
    }
    ensure(ey < 1e-4, || format!("truncation error misses the tail energy by {ey:e}"))?;

    for _ in 0..100 {
        let p = r.random_range(1..=40);
        let q = r.random_range(1..=40);
        let t = r.random_range(1..=p.min(q));
        let x = uniform::<f32>(&[p, q], &mut r);
        let lr = LowRankFactors::factorize(&x, RankPolicy::Fixed(t)).map_err(e2s)?;
        let want = p * t + t + t * q;
        ensure(lr.element_count() == want && lowrank_elements(p, q, t) == want, || {
            format!("{p}×{q} rank {t}: {} elements, expected {want}", lr.element_count())
        })?;
        let wire = svd_encode(&x, RankPolicy::Fixed(t)).map_err(e2s)?;
        ensure(wire.element_count() == want.min(p * q) && wire.is_lowrank() == (want < p * q), || {
            format!("{p}×{q} rank {t}: fallback rule violated")
        })?;
    }
    Ok(format!("round trip {rt:.1e}; tail-energy gap {ey:.1e}; 100 element counts exact"))
}

pub fn synthetic_samples() -> (Vec<Sample>, usize, usize, usize) {
    let ds = generate_synthetic(&SynthConfig::default()).expect("default scene");
    let samples = extract_patches(&ds, 8).expect("patches");
    (samples, ds.channels_a(), ds.channels_b(), ds.classes)
}

pub fn small_run_config(ca: usize, cb: usize, classes: usize) -> FedConfig {
    let mut cfg = FedConfig::new(ModelConfig::new(ca, cb, classes));
    cfg.batch = 16;
    cfg
}

/// Published element totals through the ledger, and codec-on vs codec-off bytes
/// on a short synthetic run against the element-count formula.
pub fn communication_accounting() -> Outcome {
    let mut off = RoundLog::new(0);
    off.push(0, 1, PayloadKind::Feature, 3_227_872, false);
    let mut on = RoundLog::new(0);
    on.push(0, 1, PayloadKind::FeatureLowRank, 1_394_329, false);
    let (a, b) = (format_mib(off.total_bytes()), format_mib(on.total_bytes()));
    let ratio = off.total_bytes() as f64 / on.total_bytes() as f64;
    ensure(a == "12.313" && b == "5.318" && (ratio - 2.315).abs() <= 1e-3, || {
        format!("reference totals: {a} MiB vs {b} MiB, ratio {ratio:.5}")
    })?;

    let (samples, ca, cb, classes) = synthetic_samples();
    let mut base = small_run_config(ca, cb, classes);
    base.clients = 2;
    let [h, w, c] = base.model.hsi.feature_shape();
    let (p, q) = (base.batch * h * w, c);
    let t = p * q / (2 * (p + q + 1));
    let rounds = 3;
    let mut totals = Vec::new();
    for codec in [Codec::Off, Codec::LowRank(RankPolicy::Fixed(t))] {
        let mut cfg = base.clone();
        cfg.codec = codec;
        let mut fed = Federation::new(cfg, &samples).map_err(e2s)?;
        for _ in 0..rounds {
            fed.train_round(1e-3).map_err(e2s)?;
        }
        let per_msg = if codec == Codec::Off { p * q } else { lowrank_elements(p, q, t) };
        for log in &fed.ledger().rounds {
            let want = 2 * 4 * per_msg as u64;
            ensure(log.feature_bytes() == want, || {
                format!("round {}: {} feature bytes, expected {want}", log.round, log.feature_bytes())
            })?;
        }
        totals.push(fed.ledger().feature_bytes());
    }
    ensure(totals[1] < totals[0], || format!("codec on {} ≥ off {}", totals[1], totals[0]))?;
    Ok(format!(
        "reference {a}/{b} MiB ratio {ratio:.3}; synthetic {} vs {} feature bytes (t={t})",
        totals[0], totals[1]
    ))
}

/// Lockstep SGD with lossless codec and k=1 against the single-process
/// trainer, 20 rounds each for 2 and 8 clients.
pub fn federated_equivalence() -> Outcome {
    let (samples, ca, cb, classes) = synthetic_samples();
    let mut summary = Vec::new();
    for clients in [2usize, 8] {
        let mut cfg = small_run_config(ca, cb, classes);
        cfg.clients = clients;
        cfg.codec = Codec::Lossless;
        cfg.interval = 1;
        cfg.optim = OptimConfig::sgd(0.05);
        let lr = cfg.optim.lr;
        let mut fed = Federation::new(cfg.clone(), &samples).map_err(e2s)?;
        let mut central = Centralized::new(cfg, &samples).map_err(e2s)?;
        for round in 0..20 {
            fed.train_round(lr).map_err(e2s)?;
            central.step(lr).map_err(e2s)?;
            ensure(fed.replicas_identical(), || format!("{clients} clients: replicas differ after round {round}"))?;
        }
        let diff = max_param_diff(&fed.clients()[0].params, central.params()).map_err(e2s)?;
        ensure(diff <= 1e-5, || format!("{clients} clients: max parameter difference {diff:e}"))?;
        summary.push(format!("{clients} clients {diff:.1e}"));
    }
    Ok(format!("{}; replicas bitwise identical every round", summary.join(", ")))
}

/// Hand matrix plus brute-force recount on 100 random instances.
pub fn metrics() -> Outcome {
    let s = ConfusionMatrix::from_rows(&[vec![2, 0], vec![1, 1]])
        .and_then(|m| m.scores())
        .map_err(e2s)?;
    ensure(s.oa == 0.75 && s.aa == 0.75 && s.kappa == 0.5, || {
        format!("hand matrix gave OA {}, AA {}, Kappa {}", s.oa, s.aa, s.kappa)
    })?;
    let mut r = rng(51);
    for case in 0..100 {
        let classes = r.random_range(2..=8);
        let n = r.random_range(1..=200);
        let truths: Vec<usize> = (0..n).map(|_| r.random_range(1..=classes)).collect();
        let preds: Vec<usize> = truths
            .iter()
            .map(|&t| if r.random_bool(0.6) { t } else { r.random_range(1..=classes) })
            .collect();
        let got = accumulate(classes, &preds, &truths).and_then(|m| m.scores()).map_err(e2s)?;
        let (oa, ca, aa, kappa) = oracle::brute_scores(classes, &preds, &truths);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
        let ca_ok = got.ca.iter().zip(&ca).all(|(a, b)| match (a, b) {
            (Some(a), Some(b)) => close(*a, *b),
            (None, None) => true,
            _ => false,
        });
        ensure(close(got.oa, oa) && close(got.aa, aa) && close(got.kappa, kappa) && ca_ok, || {
            format!("instance {case}: scores differ from the recount")
        })?;
    }
    Ok("hand matrix exact; 100 recounts agree".into())
}

/// Per-epoch validation OA of one configuration.
pub fn train_curve(samples: &[Sample], cfg: FedConfig) -> Result<Vec<f64>, String> {
    let mut fed = Federation::new(cfg, samples).map_err(e2s)?;
    let log = fed.run(|_| {}).map_err(e2s)?;
    Ok(log.iter().map(|s| s.val_oa.unwrap_or(f64::NAN)).collect())
}

/// Fused federated training vs both single-modality ablations on the
/// seed-0 scene, 50 epochs each.
pub fn end_to_end() -> Outcome {
    let (samples, ca, cb, classes) = synthetic_samples();
    let base = {
        let mut cfg = FedConfig::new(ModelConfig::new(ca, cb, classes));
        cfg.epochs = 50;
        cfg
    };
    let run = |mode: ModalityMode| {
        let mut cfg = base.clone();
        cfg.model.mode = mode;
        train_curve(&samples, cfg)
    };
    let fused = run(ModalityMode::Fused)?;
    let hsi = run(ModalityMode::HsiOnly)?;
    let lidar = run(ModalityMode::LidarOnly)?;
    let best = |c: &[f64]| c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let reached = fused.iter().position(|&oa| oa >= 0.95);
    let final_oa = *fused.last().unwrap();
    let (hb, lb) = (best(&hsi), best(&lidar));
    let detail = format!(
        "fused final OA {final_oa:.4} (≥0.95 first at epoch {}), hsi-only best {hb:.4}, lidar-only best {lb:.4}",
        reached.map_or("never".to_string(), |e| (e + 1).to_string())
    );
    ensure(reached.is_some(), || format!("never reached 0.95: {detail}"))?;
    ensure(final_oa >= 0.95 && final_oa - hb.max(lb) >= 0.03, || format!("margin too small: {detail}"))?;
    Ok(detail)
}
