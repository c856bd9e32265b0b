//! Server-to-client compression by replaying codebook indices.
//!
//! Between two participations of a client the server queues every round's
//! messages. When the client is sampled again the server sends either that
//! history or the full model, whichever is smaller, and the client replays
//! the history on top of the last model it knew.

use std::sync::Arc;

use crate::codec::{decode, message_size_bits, RecConfig, RecMessage, SEED_BITS};
use crate::error::{Error, Result};
use crate::model::{Model, ModelKind};
use crate::param::ParamVector;

/// Bits per parameter when a full model is sent.
pub const FULL_MODEL_BITS_PER_PARAM: u64 = 32;

#[derive(Debug, Clone, PartialEq)]
pub enum HistoryEntry {
    /// Model initialisation marker; only legal as the first entry.
    Init { seed: u64 },
    /// All messages aggregated in `round`, in canonical order.
    Round {
        round: u32,
        messages: Arc<[RecMessage]>,
    },
}

impl HistoryEntry {
    pub fn size_bits(&self, cfg: &RecConfig) -> u64 {
        match self {
            HistoryEntry::Init { .. } => SEED_BITS,
            HistoryEntry::Round { messages, .. } => {
                messages.iter().map(|m| message_size_bits(m, cfg)).sum()
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClientHistory {
    pub entries: Vec<HistoryEntry>,
}

impl ClientHistory {
    pub fn fresh(init_seed: u64) -> Self {
        Self {
            entries: vec![HistoryEntry::Init { seed: init_seed }],
        }
    }

    pub fn size_bits(&self, cfg: &RecConfig) -> u64 {
        self.entries.iter().map(|e| e.size_bits(cfg)).sum()
    }

    pub fn push(&mut self, entry: HistoryEntry) {
        self.entries.push(entry);
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Downlink {
    FullModel { bits: u64 },
    History { bits: u64 },
}

impl Downlink {
    pub fn bits(&self) -> u64 {
        match self {
            Downlink::FullModel { bits } | Downlink::History { bits } => *bits,
        }
    }
}

pub fn full_model_bits(model: &ParamVector, optimizer_state_bits: u64) -> u64 {
    FULL_MODEL_BITS_PER_PARAM * model.len() as u64 + optimizer_state_bits
}

/// Picks the cheaper downlink; the history wins ties.
pub fn downlink_payload(history: &ClientHistory, model: &ParamVector, cfg: &RecConfig) -> Downlink {
    choose_downlink(history.size_bits(cfg), full_model_bits(model, 0))
}

pub fn choose_downlink(history_bits: u64, model_bits: u64) -> Downlink {
    if history_bits > model_bits {
        Downlink::FullModel { bits: model_bits }
    } else {
        Downlink::History { bits: history_bits }
    }
}

/// Architecture needed to turn an init seed into weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelTemplate {
    pub kind: ModelKind,
    pub feature_dim: usize,
    pub num_classes: usize,
}

impl ModelTemplate {
    pub fn initialize(&self, seed: u64) -> Result<ParamVector> {
        Ok(
            Model::initialize(self.kind, self.feature_dim, self.num_classes, seed)?
                .weights()
                .clone(),
        )
    }
}

/// What a client knows: weights as of the start of `next_round`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientSnapshot {
    pub weights: ParamVector,
    pub next_round: u32,
}

/// `weights += mean(decode(m) for m in messages)`, summed in the given order.
///
/// Server and clients both go through this function so replay is bit-exact.
pub fn apply_messages(
    weights: &mut ParamVector,
    messages: &[RecMessage],
    cfg: &RecConfig,
) -> Result<()> {
    let decoded = messages
        .iter()
        .map(|m| decode(m, cfg)?.with_partition(weights.partition().clone()))
        .collect::<Result<Vec<_>>>()?;
    apply_mean(weights, &decoded)
}

/// `weights += (1/n) Σ updates`.
pub fn apply_mean(weights: &mut ParamVector, updates: &[ParamVector]) -> Result<()> {
    let mean = mean_update(weights, updates)?;
    weights.add_scaled(&mean, 1.0)
}

pub fn mean_update(like: &ParamVector, updates: &[ParamVector]) -> Result<ParamVector> {
    let mut sum = ParamVector::zeros(like.partition().clone());
    if updates.is_empty() {
        return Ok(sum);
    }
    for u in updates {
        sum.add_scaled(u, 1.0)?;
    }
    sum.scale(1.0 / updates.len() as f64);
    Ok(sum)
}

/// Replays `history` on top of `last` and returns the current server model.
pub fn client_reconstruct(
    last: &ClientSnapshot,
    history: &ClientHistory,
    cfg: &RecConfig,
    template: &ModelTemplate,
) -> Result<ClientSnapshot> {
    let mut current = last.clone();
    for (i, entry) in history.entries.iter().enumerate() {
        match entry {
            HistoryEntry::Init { seed } => {
                if i != 0 {
                    return Err(Error::Desync(format!("init marker at position {i}")));
                }
                current = ClientSnapshot {
                    weights: template.initialize(*seed)?,
                    next_round: 0,
                };
            }
            HistoryEntry::Round { round, messages } => {
                if *round != current.next_round {
                    return Err(Error::Desync(format!(
                        "expected round {}, history holds round {round}",
                        current.next_round
                    )));
                }
                apply_messages(&mut current.weights, messages, cfg)?;
                current.next_round += 1;
            }
        }
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::GroupPartition;

    fn cfg() -> RecConfig {
        RecConfig::new(0.1, 1.0, 4, GroupPartition::from_lengths(&[3, 2]).unwrap()).unwrap()
    }

    fn msg(seed: u64) -> RecMessage {
        RecMessage {
            seed,
            indices: vec![(seed % 16) as u32, 3],
        }
    }

    #[test]
    fn empty_history_is_noop() {
        let last = ClientSnapshot {
            weights: ParamVector::zeros(cfg().partition),
            next_round: 4,
        };
        let t = ModelTemplate {
            kind: ModelKind::LogisticRegression,
            feature_dim: 1,
            num_classes: 2,
        };
        assert_eq!(
            client_reconstruct(&last, &ClientHistory::default(), &cfg(), &t).unwrap(),
            last
        );
    }

    #[test]
    fn single_message_replay() {
        let c = cfg();
        let t = ModelTemplate {
            kind: ModelKind::LogisticRegression,
            feature_dim: 1,
            num_classes: 2,
        };
        let base = ParamVector::new(vec![1.0, 2.0, 3.0, 4.0, 5.0], c.partition.clone()).unwrap();
        let last = ClientSnapshot {
            weights: base.clone(),
            next_round: 2,
        };
        let m = msg(77);
        let hist = ClientHistory {
            entries: vec![HistoryEntry::Round {
                round: 2,
                messages: vec![m.clone()].into(),
            }],
        };
        let got = client_reconstruct(&last, &hist, &c, &t).unwrap();
        let mut want = base;
        want.add_scaled(&decode(&m, &c).unwrap(), 1.0).unwrap();
        assert_eq!(got.weights, want);
        assert_eq!(got.next_round, 3);
    }

    #[test]
    fn gaps_are_desync() {
        let c = cfg();
        let t = ModelTemplate {
            kind: ModelKind::LogisticRegression,
            feature_dim: 1,
            num_classes: 2,
        };
        let last = ClientSnapshot {
            weights: ParamVector::zeros(c.partition.clone()),
            next_round: 0,
        };
        let hist = ClientHistory {
            entries: vec![
                HistoryEntry::Round {
                    round: 0,
                    messages: vec![msg(1)].into(),
                },
                HistoryEntry::Round {
                    round: 2,
                    messages: vec![msg(2)].into(),
                },
            ],
        };
        assert!(matches!(
            client_reconstruct(&last, &hist, &c, &t),
            Err(Error::Desync(_))
        ));
        let late_init = ClientHistory {
            entries: vec![
                HistoryEntry::Round {
                    round: 0,
                    messages: vec![].into(),
                },
                HistoryEntry::Init { seed: 1 },
            ],
        };
        assert!(matches!(
            client_reconstruct(&last, &late_init, &c, &t),
            Err(Error::Desync(_))
        ));
    }

    #[test]
    fn fresh_client_prefers_history_unless_tiny() {
        let c = cfg();
        let h = ClientHistory::fresh(5);
        let big = ParamVector::zeros(GroupPartition::single(100).unwrap());
        assert!(matches!(
            downlink_payload(&h, &big, &c),
            Downlink::History { bits: 64 }
        ));
        let tiny = ParamVector::zeros(GroupPartition::single(1).unwrap());
        assert!(matches!(
            downlink_payload(&h, &tiny, &c),
            Downlink::FullModel { bits: 32 }
        ));
        let two = ParamVector::zeros(GroupPartition::single(2).unwrap());
        assert!(matches!(
            downlink_payload(&h, &two, &c),
            Downlink::History { bits: 64 }
        ));
    }
}
