use core::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    /// Rotating leader with votes and view change.
    Leaderled,
    /// Every node proposes; binary consensus per proposer builds a superblock.
    Leaderless,
    /// Mempool-less, fixed slot schedule of leaders.
    Scheduled,
    /// Repeated random-sample polling.
    Snow,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 4] =
        [ProtocolKind::Leaderled, ProtocolKind::Leaderless, ProtocolKind::Scheduled, ProtocolKind::Snow];

    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::Leaderled => "leaderled",
            ProtocolKind::Leaderless => "leaderless",
            ProtocolKind::Scheduled => "scheduled",
            ProtocolKind::Snow => "snow",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Whether client txs pass through a mempool with dedup.
    pub fn has_mempool(self) -> bool {
        !matches!(self, ProtocolKind::Scheduled)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnowParams {
    /// Sample size per poll.
    pub k: usize,
    /// Replies needed for a successful poll.
    pub alpha: usize,
    /// Consecutive successful polls needed to decide.
    pub beta: u32,
}

impl Default for SnowParams {
    fn default() -> Self {
        SnowParams { k: 10, alpha: 7, beta: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolParams {
    pub kind: ProtocolKind,
    pub n: usize,
    /// Fault bound; `None` means the largest t with 3t < n.
    pub t: Option<usize>,
    #[serde(with = "secs")]
    pub view_timeout: Duration,
    pub block_cap: usize,
    pub snow: SnowParams,
    #[serde(with = "secs")]
    pub slot_length: Duration,
    pub slots_per_leader: u32,
    pub schedule_seed: u64,
    /// Leaderled/leaderless: how long a proposer with nothing to propose
    /// waits before proposing an empty batch.
    #[serde(with = "secs")]
    pub idle_propose: Duration,
    /// Snow: how long a poll waits for replies.
    #[serde(with = "secs")]
    pub poll_timeout: Duration,
    /// Snow: delay per fallback rank before a node proposes itself.
    #[serde(with = "secs")]
    pub propose_timeout: Duration,
    /// Snow: pending txs older than this are pushed to peers again.
    #[serde(with = "secs")]
    pub regossip_interval: Duration,
    pub regossip_cap: usize,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams::new(ProtocolKind::Leaderled, 10)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParamsError {
    #[error("need at least one node")]
    NoNodes,
    #[error("fault bound t={t} violates 3t < n for n={n}")]
    FaultBound { t: usize, n: usize },
    #[error("snow sample size k={k} exceeds n-1={max}")]
    SnowSampleTooLarge { k: usize, max: usize },
    #[error("snow alpha={alpha} must satisfy k/2 < alpha <= k (k={k})")]
    SnowAlpha { alpha: usize, k: usize },
    #[error("snow beta must be positive")]
    SnowBeta,
    #[error("{0} must be positive")]
    NotPositive(&'static str),
}

impl ProtocolParams {
    pub fn new(kind: ProtocolKind, n: usize) -> Self {
        ProtocolParams {
            kind,
            n,
            t: None,
            view_timeout: Duration::from_secs(1),
            block_cap: 500,
            snow: SnowParams::default(),
            slot_length: Duration::from_millis(500),
            slots_per_leader: 2,
            schedule_seed: 0,
            idle_propose: Duration::from_millis(200),
            poll_timeout: Duration::from_millis(500),
            propose_timeout: Duration::from_millis(300),
            regossip_interval: Duration::from_secs(1),
            regossip_cap: 300,
        }
    }

    pub fn t(&self) -> usize {
        self.t.unwrap_or_else(|| default_t(self.n))
    }

    pub fn quorum(&self) -> usize {
        self.n - self.t()
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        if self.n == 0 {
            return Err(ParamsError::NoNodes);
        }
        if 3 * self.t() >= self.n {
            return Err(ParamsError::FaultBound { t: self.t(), n: self.n });
        }
        if self.block_cap == 0 {
            return Err(ParamsError::NotPositive("block_cap"));
        }
        for (name, d) in [
            ("view_timeout", self.view_timeout),
            ("slot_length", self.slot_length),
            ("poll_timeout", self.poll_timeout),
            ("regossip_interval", self.regossip_interval),
        ] {
            if d.is_zero() {
                return Err(ParamsError::NotPositive(name));
            }
        }
        if self.slots_per_leader == 0 {
            return Err(ParamsError::NotPositive("slots_per_leader"));
        }
        if self.kind == ProtocolKind::Snow {
            let SnowParams { k, alpha, beta } = self.snow;
            if k > self.n - 1 {
                return Err(ParamsError::SnowSampleTooLarge { k, max: self.n - 1 });
            }
            if 2 * alpha <= k || alpha > k {
                return Err(ParamsError::SnowAlpha { alpha, k });
            }
            if beta == 0 {
                return Err(ParamsError::SnowBeta);
            }
        }
        Ok(())
    }
}

/// Largest t with 3t < n.
pub fn default_t(n: usize) -> usize {
    n.saturating_sub(1) / 3
}

/// Durations as fractional seconds in documents.
pub(crate) mod secs {
    use core::time::Duration;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}
