use std::fmt;

/// Bytes per transmitted element (IEEE-754 single precision).
pub const BYTES_PER_ELEMENT: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PayloadKind {
    Feature,
    FeatureLowRank,
    Gradient,
}

impl PayloadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PayloadKind::Feature => "feature",
            PayloadKind::FeatureLowRank => "feature_lowrank",
            PayloadKind::Gradient => "gradient",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "feature" => Some(PayloadKind::Feature),
            "feature_lowrank" => Some(PayloadKind::FeatureLowRank),
            "gradient" => Some(PayloadKind::Gradient),
            _ => None,
        }
    }

    pub fn is_feature(self) -> bool {
        !matches!(self, PayloadKind::Gradient)
    }
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub round: usize,
    pub sender: usize,
    pub receiver: usize,
    pub kind: PayloadKind,
    pub elements: u64,
    /// codec was on but the low-rank form was not smaller, so raw was sent
    pub fallback: bool,
}

impl Message {
    pub fn bytes(&self) -> u64 {
        self.elements * BYTES_PER_ELEMENT
    }

    /// `round,sender,receiver,kind,elements,bytes`
    pub fn record(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.round,
            self.sender,
            self.receiver,
            self.kind,
            self.elements,
            self.bytes()
        )
    }
}

/// Messages and loss of one lockstep round.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoundLog {
    pub round: usize,
    pub messages: Vec<Message>,
    /// mean of the per-client loss values
    pub loss: f64,
}

impl RoundLog {
    pub fn new(round: usize) -> Self {
        Self {
            round,
            ..Self::default()
        }
    }

    pub fn push(&mut self, sender: usize, receiver: usize, kind: PayloadKind, elements: usize, fallback: bool) {
        self.messages.push(Message {
            round: self.round,
            sender,
            receiver,
            kind,
            elements: elements as u64,
            fallback,
        });
    }

    fn sum(&self, keep: impl Fn(&Message) -> bool) -> u64 {
        self.messages.iter().filter(|m| keep(m)).map(Message::bytes).sum()
    }

    pub fn feature_bytes(&self) -> u64 {
        self.sum(|m| m.kind.is_feature())
    }

    pub fn gradient_bytes(&self) -> u64 {
        self.sum(|m| m.kind == PayloadKind::Gradient)
    }

    pub fn total_bytes(&self) -> u64 {
        self.sum(|_| true)
    }

    pub fn feature_elements(&self) -> u64 {
        self.messages
            .iter()
            .filter(|m| m.kind.is_feature())
            .map(|m| m.elements)
            .sum()
    }
}

/// All rounds of a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ledger {
    pub rounds: Vec<RoundLog>,
}

impl Ledger {
    pub fn push(&mut self, log: RoundLog) {
        self.rounds.push(log);
    }

    pub fn messages(&self) -> impl Iterator<Item = &Message> {
        self.rounds.iter().flat_map(|r| &r.messages)
    }

    pub fn feature_bytes(&self) -> u64 {
        self.rounds.iter().map(RoundLog::feature_bytes).sum()
    }

    pub fn gradient_bytes(&self) -> u64 {
        self.rounds.iter().map(RoundLog::gradient_bytes).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.rounds.iter().map(RoundLog::total_bytes).sum()
    }

    /// Header line plus one record per message.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("round,sender,receiver,kind,elements,bytes\n");
        for m in self.messages() {
            s.push_str(&m.record());
            s.push('\n');
        }
        s
    }
}

/// Bytes in binary megabytes (2²⁰).
pub fn mib(bytes: u64) -> f64 {
    bytes as f64 / (1u64 << 20) as f64
}

/// MiB truncated (not rounded) to three decimals.
pub fn format_mib(bytes: u64) -> String {
    let milli = bytes * 1000 / (1u64 << 20);
    format!("{}.{:03}", milli / 1000, milli % 1000)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_are_four_per_element() {
        let mut r = RoundLog::new(3);
        r.push(0, 1, PayloadKind::Feature, 10, false);
        r.push(1, 0, PayloadKind::Gradient, 7, false);
        assert_eq!(r.total_bytes(), 68);
        assert_eq!(r.feature_bytes(), 40);
        assert_eq!(r.messages[1].record(), "3,1,0,gradient,7,28");
    }

    #[test]
    fn mib_truncates() {
        assert_eq!(format_mib(1394329 * 4), "5.318");
        assert_eq!(format_mib(3227872 * 4), "12.313");
        assert_eq!(format_mib(1 << 20), "1.000");
    }

    #[test]
    fn kind_round_trip() {
        for k in [PayloadKind::Feature, PayloadKind::FeatureLowRank, PayloadKind::Gradient] {
            assert_eq!(PayloadKind::parse(k.as_str()), Some(k));
        }
    }
}
