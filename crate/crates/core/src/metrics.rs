//! Evaluation quantities, computed only from a transcript so that a
//! persisted run can be re-scored exactly.

use std::collections::{BTreeMap, BTreeSet};

use crate::config::Mode;
use crate::context::EntityId;
use crate::protocol::MessageKind;
use crate::transcript::{Entry, Outcome, Transcript};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CostStats {
    pub decisions: u64,
    pub total_ms: u64,
    pub mean_per_decision_ms: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overhead {
    pub messages: u64,
    /// Payload bytes summed over every hop crossed.
    pub bytes: u64,
    /// Share of `bytes` that is device context sharing.
    pub context_share_bytes: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Detections {
    /// Compromised devices flagged at least once.
    pub true_detections: u64,
    /// Compromised devices never flagged.
    pub missed: u64,
    /// Clean devices flagged at least once.
    pub false_positives: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RoundStats {
    pub opened: u64,
    pub re_registered: u64,
    pub eliminated: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PeriodMetrics {
    pub tick: u64,
    pub cost: CostStats,
    pub overhead: Overhead,
    pub threats: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub mode: Mode,
    pub devices: usize,
    pub seed: u64,
    pub cost: CostStats,
    pub overhead: Overhead,
    pub detections: Detections,
    pub rounds: RoundStats,
    /// Decisions are bucketed by the tick they close, messages by the
    /// period they were sent in.
    pub per_period: Vec<PeriodMetrics>,
}

fn finish_mean(c: &mut CostStats) {
    c.mean_per_decision_ms = if c.decisions == 0 {
        0.0
    } else {
        c.total_ms as f64 / c.decisions as f64
    };
}

/// Time from period start to verdict for every decision in the transcript.
pub fn cost_of_operation(t: &Transcript) -> CostStats {
    let mut c = CostStats::default();
    for e in &t.entries {
        if let Entry::Decide { at, tick_at, .. } = e {
            c.decisions += 1;
            c.total_ms += at - tick_at;
        }
    }
    finish_mean(&mut c);
    c
}

pub fn comm_overhead(t: &Transcript) -> Overhead {
    let mut o = Overhead::default();
    for e in &t.entries {
        if let Entry::Send {
            kind,
            payload_bytes,
            hops,
            ..
        } = e
        {
            let bytes = u64::from(*payload_bytes) * u64::from(*hops);
            o.messages += 1;
            o.bytes += bytes;
            if *kind == MessageKind::ContextShare {
                o.context_share_bytes += bytes;
            }
        }
    }
    o
}

impl RunMetrics {
    pub fn from_transcript(t: &Transcript) -> RunMetrics {
        let period = t.meta.period_ms.max(1);
        let mut compromised: BTreeSet<EntityId> = BTreeSet::new();
        let mut flagged_true: BTreeSet<EntityId> = BTreeSet::new();
        let mut flagged_false: BTreeSet<EntityId> = BTreeSet::new();
        let mut rounds = RoundStats::default();
        let mut buckets: BTreeMap<u64, PeriodMetrics> = BTreeMap::new();
        fn bucket(b: &mut BTreeMap<u64, PeriodMetrics>, tick: u64) -> &mut PeriodMetrics {
            b.entry(tick).or_insert_with(|| PeriodMetrics {
                tick,
                ..PeriodMetrics::default()
            })
        }

        for e in &t.entries {
            match e {
                Entry::Compromise { device, .. } => {
                    compromised.insert(*device);
                }
                Entry::Decide {
                    at,
                    device,
                    tick,
                    tick_at,
                    verdict,
                    compromised: truth,
                } => {
                    let b = bucket(&mut buckets, *tick);
                    b.cost.decisions += 1;
                    b.cost.total_ms += at - tick_at;
                    if verdict.is_threat() {
                        b.threats += 1;
                        if *truth {
                            flagged_true.insert(*device);
                        } else {
                            flagged_false.insert(*device);
                        }
                    }
                }
                Entry::Send {
                    sent_at,
                    kind,
                    payload_bytes,
                    hops,
                    ..
                } => {
                    let bytes = u64::from(*payload_bytes) * u64::from(*hops);
                    let b = bucket(&mut buckets, sent_at / period);
                    b.overhead.messages += 1;
                    b.overhead.bytes += bytes;
                    if *kind == MessageKind::ContextShare {
                        b.overhead.context_share_bytes += bytes;
                    }
                }
                Entry::Round { .. } => rounds.opened += 1,
                Entry::Resolve { outcome, .. } => match outcome {
                    Outcome::ReRegistered => rounds.re_registered += 1,
                    Outcome::Eliminated => rounds.eliminated += 1,
                },
                Entry::Attack { .. } | Entry::Patch { .. } => {}
            }
        }
        let mut per_period: Vec<PeriodMetrics> = buckets.into_values().collect();
        for p in &mut per_period {
            finish_mean(&mut p.cost);
        }
        RunMetrics {
            mode: t.meta.mode,
            devices: t.meta.devices,
            seed: t.meta.seed,
            cost: cost_of_operation(t),
            overhead: comm_overhead(t),
            detections: Detections {
                true_detections: flagged_true.len() as u64,
                missed: compromised.difference(&flagged_true).count() as u64,
                false_positives: flagged_false.len() as u64,
            },
            rounds,
            per_period,
        }
    }

    /// Devices that received at least one Threat verdict.
    pub fn suspects(t: &Transcript) -> BTreeSet<EntityId> {
        t.entries
            .iter()
            .filter_map(|e| match e {
                Entry::Decide {
                    device, verdict, ..
                } if verdict.is_threat() => Some(*device),
                _ => None,
            })
            .collect()
    }
}

/// Relative savings of distributed over centralized, in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeDeltas {
    /// On total cost.
    pub cost_reduction_pct: f64,
    /// On mean cost per decision.
    pub mean_cost_reduction_pct: f64,
    /// On total bytes.
    pub overhead_reduction_pct: f64,
    /// On message count.
    pub message_reduction_pct: f64,
}

fn reduction(centralized: f64, distributed: f64) -> f64 {
    if centralized == 0.0 {
        0.0
    } else {
        100.0 * (centralized - distributed) / centralized
    }
}

pub fn compare_modes(centralized: &RunMetrics, distributed: &RunMetrics) -> ModeDeltas {
    let (c, d) = (centralized, distributed);
    ModeDeltas {
        cost_reduction_pct: reduction(c.cost.total_ms as f64, d.cost.total_ms as f64),
        mean_cost_reduction_pct: reduction(
            c.cost.mean_per_decision_ms,
            d.cost.mean_per_decision_ms,
        ),
        overhead_reduction_pct: reduction(c.overhead.bytes as f64, d.overhead.bytes as f64),
        message_reduction_pct: reduction(c.overhead.messages as f64, d.overhead.messages as f64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::{ThreatCause, Verdict};
    use crate::transcript::Meta;

    fn meta() -> Meta {
        Meta {
            mode: Mode::Distributed,
            devices: 2,
            seed: 1,
            period_ms: 100,
            duration_ms: 400,
        }
    }

    #[test]
    fn empty_transcript_scores_zero() {
        let m = RunMetrics::from_transcript(&Transcript::new(meta()));
        assert_eq!(m.cost, CostStats::default());
        assert_eq!(m.overhead, Overhead::default());
        assert!(m.per_period.is_empty());
    }

    #[test]
    fn hand_built_transcript() {
        let mut t = Transcript::new(meta());
        t.push(Entry::Send {
            sent_at: 100,
            kind: MessageKind::ContextShare,
            src: EntityId(1),
            dst: EntityId(0),
            device: EntityId(1),
            payload_bytes: 10,
            hops: 2,
            delivered: true,
        });
        t.push(Entry::Compromise {
            at: 120,
            device: EntityId(2),
            epoch: 1,
        });
        t.push(Entry::Decide {
            at: 147,
            device: EntityId(1),
            tick: 1,
            tick_at: 100,
            verdict: Verdict::Consistent,
            compromised: false,
        });
        t.push(Entry::Decide {
            at: 253,
            device: EntityId(2),
            tick: 2,
            tick_at: 200,
            verdict: Verdict::Threat(ThreatCause::CounterMismatch),
            compromised: true,
        });
        let m = RunMetrics::from_transcript(&t);
        assert_eq!(m.cost.decisions, 2);
        assert_eq!(m.cost.total_ms, 100);
        assert_eq!(m.cost.mean_per_decision_ms, 50.0);
        assert_eq!(
            m.overhead,
            Overhead {
                messages: 1,
                bytes: 20,
                context_share_bytes: 20
            }
        );
        assert_eq!(
            m.detections,
            Detections {
                true_detections: 1,
                missed: 0,
                false_positives: 0
            }
        );
        assert_eq!(m.per_period.len(), 2);
        assert_eq!(m.per_period[1].threats, 1);
    }

    #[test]
    fn reductions() {
        let mut c = RunMetrics::from_transcript(&Transcript::new(meta()));
        let mut d = c.clone();
        c.cost.total_ms = 300;
        d.cost.total_ms = 200;
        c.overhead.bytes = 100;
        d.overhead.bytes = 79;
        let r = compare_modes(&c, &d);
        assert!((r.cost_reduction_pct - 100.0 / 3.0).abs() < 1e-9);
        assert!((r.overhead_reduction_pct - 21.0).abs() < 1e-9);
        assert_eq!(r.message_reduction_pct, 0.0);
    }
}
