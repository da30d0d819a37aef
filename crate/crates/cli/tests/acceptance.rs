//! Acceptance suite: every headline criterion at its stated tolerance and
//! runtime budget, one PASS/FAIL line each.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::path::Path;
use std::time::{Duration, Instant};

use support::criteria::{self, Outcome};

fn train_once(root: &Path) -> Outcome {
    let mut sink = Vec::new();
    let runs = root.to_str().ok_or("temp path is not UTF-8")?;
    let args = [
        "mmfed", "train", "--runs", runs, "-s", "train.epochs=3", "-s", "fed.clients=4", "-s", "seed=7",
    ];
    mmfed_cli::run(args, &mut sink).map_err(|e| e.to_string())?;
    let dir = std::fs::read_dir(root)
        .map_err(|e| e.to_string())?
        .next()
        .ok_or("no run directory")?
        .map_err(|e| e.to_string())?
        .path();
    std::fs::read_to_string(dir.join("checksums.txt")).map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (ca, cb) = (train_once(a.path())?, train_once(b.path())?);
    if ca != cb {
        return Err(format!("checksums differ:\n{ca}---\n{cb}"));
    }
    Ok(format!("checkpoint and ledger sha256 match ({})", &ca[..12]))
}

#[test]
fn acceptance() {
    let suite: [(&str, fn() -> Outcome, Duration); 9] = [
        ("diffusion math", criteria::diffusion_math, Duration::from_secs(30)),
        ("spectral layer", criteria::spectral_layer, Duration::from_secs(10)),
        ("gradient integrity", criteria::gradient_integrity, Duration::from_secs(60)),
        ("codec", criteria::codec, Duration::from_secs(20)),
        ("communication accounting", criteria::communication_accounting, Duration::from_secs(10)),
        ("federated-centralized equivalence", criteria::federated_equivalence, Duration::from_secs(300)),
        ("metrics", criteria::metrics, Duration::from_secs(5)),
        ("end-to-end learning", criteria::end_to_end, Duration::from_secs(900)),
        ("determinism", determinism, Duration::from_secs(300)),
    ];
    let mut failed = Vec::new();
    for (name, check, budget) in suite {
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let verdict = match &outcome {
            Ok(_) if took > budget => Err(format!("took {took:.1?}, budget {budget:?}")),
            Ok(d) => Ok(d.clone()),
            Err(e) => Err(e.clone()),
        };
        match verdict {
            Ok(d) => println!("PASS {name} [{took:.2?}]: {d}"),
            Err(e) => {
                println!("FAIL {name} [{took:.2?}]: {e}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
