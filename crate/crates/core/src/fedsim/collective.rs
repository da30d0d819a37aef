use std::collections::BTreeMap;

use super::codec::Codec;
use super::ledger::{PayloadKind, RoundLog};
use super::model::Modality;
use crate::error::{shape_err, Error, Result};
use crate::numkit::{Element, Tensor};

/// Per-parameter gradients; `None` where a client did not contribute.
pub type GradientSet<T = f32> = Vec<Option<Tensor<T>>>;

/// Decoded features a client holds, keyed by sender id.
pub type Inbox<T = f32> = BTreeMap<usize, Tensor<T>>;

/// Whether round `r` exchanges features under interval `k`.
pub fn exchanges(round: usize, interval: usize) -> bool {
    round.is_multiple_of(interval.max(1))
}

/// Sends every client's feature map to every client of the other modality.
/// On rounds where `round mod interval ≠ 0` nothing is sent and inboxes
/// keep their stale entries.
pub fn allgather_features<T: Element>(
    features: &[Option<Tensor<T>>],
    modalities: &[Modality],
    round: usize,
    interval: usize,
    codec: &Codec,
    inboxes: &mut [Inbox<T>],
    log: &mut RoundLog,
) -> Result<()> {
    let n = features.len();
    if modalities.len() != n || inboxes.len() != n {
        return Err(shape_err(
            "allgather_features",
            format!("{n} feature slots, {} modalities, {} inboxes", modalities.len(), inboxes.len()),
        ));
    }
    if let Some(client) = features.iter().position(Option::is_none) {
        return Err(Error::MissingFeature { round, client });
    }
    if !exchanges(round, interval) {
        return Ok(());
    }
    for (sender, f) in features.iter().enumerate() {
        let f = f.as_ref().expect("checked above");
        let wire = codec.encode(f)?;
        let kind = if wire.is_lowrank() {
            PayloadKind::FeatureLowRank
        } else {
            PayloadKind::Feature
        };
        let fallback = codec.is_on() && !wire.is_lowrank();
        let decoded = wire.decode()?;
        for receiver in 0..n {
            if modalities[receiver] == modalities[sender] {
                continue;
            }
            log.push(sender, receiver, kind, wire.element_count(), fallback);
            inboxes[receiver].insert(sender, decoded.clone());
        }
    }
    Ok(())
}

/// Element count of the gradients a client actually provides.
pub fn provided_elements<T: Element>(g: &GradientSet<T>) -> usize {
    g.iter().flatten().map(Tensor::len).sum()
}

/// Element-wise mean over the clients that provided each parameter,
/// accumulated in f64 in ascending client order. Each client's payload is
/// metered once per receiving peer.
pub fn allreduce_mean<T: Element>(sets: &[GradientSet<T>], log: &mut RoundLog) -> Result<GradientSet<T>> {
    let Some(first) = sets.first() else {
        return Ok(Vec::new());
    };
    let len = first.len();
    let mut shapes: Vec<Option<Vec<usize>>> = vec![None; len];
    for (c, s) in sets.iter().enumerate() {
        if s.len() != len {
            return Err(shape_err(
                "allreduce_mean",
                format!("client {c} sent {} entries, client 0 sent {len}", s.len()),
            ));
        }
        for (i, g) in s.iter().enumerate() {
            if let Some(g) = g {
                match &shapes[i] {
                    Some(sh) if sh.as_slice() != g.shape() => {
                        return Err(shape_err(
                            "allreduce_mean",
                            format!("entry {i}: client {c} sent {:?}, expected {sh:?}", g.shape()),
                        ))
                    }
                    Some(_) => {}
                    None => shapes[i] = Some(g.shape().to_vec()),
                }
            }
        }
    }
    let n = sets.len();
    for (sender, s) in sets.iter().enumerate() {
        let elements = provided_elements(s);
        if elements == 0 {
            continue;
        }
        for receiver in (0..n).filter(|&r| r != sender) {
            log.push(sender, receiver, PayloadKind::Gradient, elements, false);
        }
    }
    let mut out = Vec::with_capacity(len);
    for (i, shape) in shapes.iter().enumerate() {
        let Some(shape) = shape else {
            out.push(None);
            continue;
        };
        let size: usize = shape.iter().product();
        let mut acc = vec![0.0f64; size];
        let mut count = 0usize;
        for s in sets {
            if let Some(g) = &s[i] {
                count += 1;
                for (a, v) in acc.iter_mut().zip(g.data()) {
                    *a += v.f64();
                }
            }
        }
        let data = acc.into_iter().map(|a| T::of(a / count as f64)).collect();
        out.push(Some(Tensor::new(shape, data)?));
    }
    Ok(out)
}
