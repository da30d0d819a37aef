//! Confusion matrix with overall, per-class and average accuracy plus
//! Cohen's kappa.
//!
//! Class ids are 1-based (`1..=C`); background (0) is filtered upstream.

use std::fmt::Write as _;
use std::ops::AddAssign;

use crate::error::{invalid, Result};

/// Rows are actual classes, columns predicted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Count for (actual, predicted), both 1-based.
    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[(actual - 1) * self.classes + predicted - 1]
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(invalid("confusion matrix rows must form a square"));
        }
        Ok(Self {
            classes: c,
            counts: rows.concat(),
        })
    }

    /// Adds one (prediction, truth) pair per index.
    pub fn accumulate(&mut self, preds: &[usize], truths: &[usize]) -> Result<()> {
        if preds.len() != truths.len() {
            return Err(invalid(format!(
                "{} predictions vs {} truths",
                preds.len(),
                truths.len()
            )));
        }
        let c = self.classes;
        if let Some(i) = (0..preds.len()).find(|&i| !(1..=c).contains(&preds[i]) || !(1..=c).contains(&truths[i])) {
            return Err(invalid(format!(
                "class id out of range 1..={c} at index {i} (pred {}, truth {})",
                preds[i], truths[i]
            )));
        }
        for (&p, &t) in preds.iter().zip(truths) {
            self.counts[(t - 1) * c + p - 1] += 1;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.counts[i * self.classes + i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i * self.classes..(i + 1) * self.classes].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        (0..self.classes).map(|i| self.counts[i * self.classes + j]).sum()
    }

    pub fn is_diagonal(&self) -> bool {
        let c = self.classes;
        self.counts
            .iter()
            .enumerate()
            .all(|(k, &v)| v == 0 || k / c == k % c)
    }

    pub fn scores(&self) -> Result<Scores> {
        let na = self.total();
        if na == 0 {
            return Err(invalid("cannot score an empty confusion matrix"));
        }
        let c = self.classes;
        let oa = self.trace() as f64 / na as f64;
        let ca: Vec<Option<f64>> = (0..c)
            .map(|i| {
                let n = self.row_sum(i);
                (n > 0).then(|| self.counts[i * c + i] as f64 / n as f64)
            })
            .collect();
        let defined: Vec<f64> = ca.iter().flatten().copied().collect();
        let aa = defined.iter().sum::<f64>() / defined.len() as f64;
        let na2 = (na as f64) * (na as f64);
        let pe = (0..c)
            .map(|i| self.row_sum(i) as f64 * self.col_sum(i) as f64)
            .sum::<f64>()
            / na2;
        let kappa = if pe >= 1.0 {
            if oa >= 1.0 { 1.0 } else { 0.0 }
        } else {
            (oa - pe) / (1.0 - pe)
        };
        Ok(Scores { oa, ca, aa, kappa, pe })
    }
}

impl AddAssign<&ConfusionMatrix> for ConfusionMatrix {
    fn add_assign(&mut self, rhs: &ConfusionMatrix) {
        assert_eq!(self.classes, rhs.classes, "class count mismatch");
        for (a, b) in self.counts.iter_mut().zip(&rhs.counts) {
            *a += b;
        }
    }
}

/// Builds a matrix from (prediction, truth) pairs.
pub fn accumulate(classes: usize, preds: &[usize], truths: &[usize]) -> Result<ConfusionMatrix> {
    let mut m = ConfusionMatrix::new(classes);
    m.accumulate(preds, truths)?;
    Ok(m)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub oa: f64,
    /// `None` for classes absent from the ground truth
    pub ca: Vec<Option<f64>>,
    /// mean over defined per-class accuracies
    pub aa: f64,
    pub kappa: f64,
    /// chance agreement
    pub pe: f64,
}

impl Scores {
    /// Fixed-width table, one row per class, footer with OA/AA/Kappa.
    pub fn table(&self) -> String {
        let mut s = String::from("class        CA\n");
        for (i, ca) in self.ca.iter().enumerate() {
            match ca {
                Some(v) => writeln!(s, "{:>5}  {:>8.4}", i + 1, v).unwrap(),
                None => writeln!(s, "{:>5}  {:>8}", i + 1, "-").unwrap(),
            }
        }
        writeln!(s, "   OA  {:>8.4}", self.oa).unwrap();
        writeln!(s, "   AA  {:>8.4}", self.aa).unwrap();
        writeln!(s, "Kappa  {:>8.4}", self.kappa).unwrap();
        s
    }

    /// `key,value` records: one `class,<id>,<CA>` line per class, then
    /// `OA`, `AA` and `Kappa`.
    pub fn records(&self) -> String {
        let mut s = String::new();
        for (i, ca) in self.ca.iter().enumerate() {
            match ca {
                Some(v) => writeln!(s, "class,{},{v}", i + 1).unwrap(),
                None => writeln!(s, "class,{},", i + 1).unwrap(),
            }
        }
        writeln!(s, "OA,{}", self.oa).unwrap();
        writeln!(s, "AA,{}", self.aa).unwrap();
        writeln!(s, "Kappa,{}", self.kappa).unwrap();
        s
    }
}
