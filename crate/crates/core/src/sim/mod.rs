//! Scenario construction and the discrete-event run.

mod engine;
pub mod topology;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::config::{ConfigError, Mode, ScenarioConfig};
use crate::context::{EntityId, FieldSet, Millis};
use crate::metrics::RunMetrics;
use crate::protocol::{transcript_is_well_ordered, MessageKind};
use crate::rng::{keyed_rng, Domain};
use crate::roles::{Disposition, Trust};
use crate::transcript::{Entry, Outcome, Transcript};

pub use topology::{DevicePlacement, Topology, CDS_ID};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("attack plan names unknown device {0}")]
    UnknownAttacker(EntityId),
    #[error("attack timeline for device {0} is out of order")]
    BadTimeline(EntityId),
}

/// Window-of-vulnerability phases of one device.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttackTimeline {
    pub discovery_at: Millis,
    pub exploit_at: Millis,
    pub patch_available_at: Millis,
    /// Filled in by the run when a patch reaches the device.
    pub patch_applied_at: Option<Millis>,
}

impl AttackTimeline {
    pub fn is_ordered(&self) -> bool {
        self.discovery_at <= self.exploit_at
            && self.discovery_at <= self.patch_available_at
            && self
                .patch_applied_at
                .is_none_or(|a| a >= self.patch_available_at)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttackPlan {
    pub device: EntityId,
    /// Empty for stealth attackers.
    pub profile: FieldSet,
    pub disposition: Disposition,
    pub timeline: AttackTimeline,
}

/// A fully drawn scenario: topology plus attack plans. Running it in either
/// mode replays the same devices, tamper traces and patch outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub topology: Topology,
    pub attacks: Vec<AttackPlan>,
}

fn share(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).min(n)
}

impl Scenario {
    pub fn build(config: &ScenarioConfig) -> Result<Scenario, SimError> {
        let topology = Topology::build(config)?;
        let attacks = draw_attacks(config, &topology);
        Ok(Scenario {
            config: config.clone(),
            topology,
            attacks,
        })
    }

    /// Replaces the drawn attack plans.
    pub fn with_attacks(mut self, mut attacks: Vec<AttackPlan>) -> Result<Scenario, SimError> {
        for a in &attacks {
            if self.topology.device(a.device).is_none() {
                return Err(SimError::UnknownAttacker(a.device));
            }
            if !a.timeline.is_ordered() {
                return Err(SimError::BadTimeline(a.device));
            }
        }
        attacks.sort_by_key(|a| a.device);
        attacks.dedup_by_key(|a| a.device);
        self.attacks = attacks;
        Ok(self)
    }

    pub fn run(&self, mode: Mode) -> RunOutput {
        engine::Engine::new(self, mode).run()
    }
}

fn draw_attacks(config: &ScenarioConfig, topology: &Topology) -> Vec<AttackPlan> {
    let n = topology.devices.len();
    let mut ids: Vec<EntityId> = topology.devices.iter().map(|d| d.id).collect();
    ids.shuffle(&mut keyed_rng(Domain::Attack, config.seed, 0, 0));
    let attackers = share(n, config.attacker_fraction);
    ids.truncate(attackers);
    let malicious = share(attackers, config.malicious_share_of_attackers);
    let stealth = share(attackers, config.stealth_share_of_attackers);

    let p = config.period_ms;
    let mut plans: Vec<AttackPlan> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let mut rng = keyed_rng(Domain::Attack, config.seed, id.0, 1);
            let exploit_at = rng.gen_range(0..config.duration_ms / 2);
            let discovery_at = exploit_at.saturating_sub(rng.gen_range(0..p / 2));
            let patch_available_at = discovery_at + rng.gen_range(0..p / 2);
            let profile = if i < stealth {
                FieldSet::EMPTY
            } else {
                FieldSet::from_bits(rng.gen_range(1..64)).expect("six-bit mask")
            };
            // Malicious attackers are counted from the other end so the
            // stealth and malicious subsets overlap as little as possible.
            let disposition = if i >= attackers - malicious {
                Disposition::Malicious
            } else {
                Disposition::Exploited
            };
            AttackPlan {
                device: *id,
                profile,
                disposition,
                timeline: AttackTimeline {
                    discovery_at,
                    exploit_at,
                    patch_available_at,
                    patch_applied_at: None,
                },
            }
        })
        .collect();
    plans.sort_by_key(|a| a.device);
    plans
}

/// End-of-run view of who holds which device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinalState {
    pub cds_trust: BTreeMap<EntityId, Trust>,
    /// Devices held by each LDS/SDS registry.
    pub node_registries: BTreeMap<EntityId, BTreeSet<EntityId>>,
    pub unresolved_rounds: usize,
    /// `(holder, device)` pairs whose Eliminate had not landed when the
    /// run ended.
    pub eliminations_in_flight: BTreeSet<(EntityId, EntityId)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub transcript: Transcript,
    /// Attack plans with `patch_applied_at` realized.
    pub attacks: Vec<AttackPlan>,
    pub final_state: FinalState,
}

impl RunOutput {
    /// Run-level invariants. Returns one message per violation.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let t = &self.transcript;
        let period = t.meta.period_ms;
        let m = &self.metrics;
        if m.overhead.bytes < m.overhead.messages {
            out.push("fewer bytes than messages".to_string());
        }
        match Transcript::parse(&t.to_text()) {
            Ok(back) if RunMetrics::from_transcript(&back) == *m => {}
            _ => out.push("metrics do not survive a transcript round trip".to_string()),
        }
        for a in &self.attacks {
            if !a.timeline.is_ordered() {
                out.push(format!("attack timeline of {} is out of order", a.device));
            }
        }

        let mut last_sent = 0;
        let mut open: BTreeMap<EntityId, Millis> = BTreeMap::new();
        let mut eliminated: BTreeSet<EntityId> = BTreeSet::new();
        let mut reregistered: BTreeSet<EntityId> = BTreeSet::new();
        let mut round_sends: BTreeMap<EntityId, Vec<MessageKind>> = BTreeMap::new();
        // Devices with at least one lost message so far; their later
        // verdicts may legitimately reflect the loss.
        let mut lossy: BTreeSet<EntityId> = BTreeSet::new();
        // (holder, device) pairs whose Eliminate was lost on the way.
        let mut missed_elim: BTreeSet<(EntityId, EntityId)> = BTreeSet::new();
        for e in &t.entries {
            match e {
                Entry::Send {
                    sent_at,
                    kind,
                    src,
                    dst,
                    device,
                    delivered,
                    ..
                } => {
                    if !delivered {
                        lossy.insert(*device);
                        if *kind == MessageKind::Eliminate {
                            missed_elim.insert((*dst, *device));
                        }
                    }
                    if *sent_at < last_sent {
                        out.push(format!("send at {sent_at} recorded after {last_sent}"));
                    }
                    last_sent = *sent_at;
                    if *src == CDS_ID && *kind != MessageKind::PeriodStart {
                        if let Some(sent) = round_sends.get_mut(device) {
                            sent.push(*kind);
                        }
                    }
                }
                Entry::Round { at, device } => {
                    if open.insert(*device, *at).is_some() {
                        out.push(format!("second concurrent round for {device}"));
                    }
                    round_sends.insert(*device, Vec::new());
                }
                Entry::Resolve {
                    at,
                    device,
                    outcome,
                    ..
                } => {
                    let sent = round_sends.remove(device).unwrap_or_default();
                    if !transcript_is_well_ordered(&sent) {
                        out.push(format!("round for {device} sent {sent:?}"));
                    }
                    match open.remove(device) {
                        Some(opened) if at - opened <= 4 * period => {}
                        Some(opened) => {
                            out.push(format!("round for {device} took {} ms", at - opened))
                        }
                        None => out.push(format!("resolve without round for {device}")),
                    }
                    match outcome {
                        Outcome::Eliminated => {
                            eliminated.insert(*device);
                        }
                        Outcome::ReRegistered => {
                            reregistered.insert(*device);
                        }
                    }
                }
                Entry::Decide {
                    device,
                    verdict,
                    compromised,
                    ..
                } => {
                    if eliminated.contains(device) {
                        out.push(format!("eliminated device {device} was diagnosed again"));
                    }
                    if reregistered.contains(device)
                        && !compromised
                        && !lossy.contains(device)
                        && verdict.is_threat()
                    {
                        out.push(format!("re-registered honest device {device} flagged"));
                    }
                }
                _ => {}
            }
        }
        for (device, opened) in open {
            if opened + 4 * period <= t.meta.duration_ms {
                out.push(format!("round for {device} never resolved"));
            }
        }
        for d in &eliminated {
            if self.final_state.cds_trust.get(d) != Some(&Trust::Eliminated) {
                out.push(format!("eliminated device {d} is trusted again"));
            }
            for (node, held) in &self.final_state.node_registries {
                // A holder the Eliminate never reached still has the old
                // entry; anything else means the device was let back in.
                let key = (*node, *d);
                let unreached = missed_elim.contains(&key)
                    || self.final_state.eliminations_in_flight.contains(&key);
                if held.contains(d) && !unreached {
                    out.push(format!(
                        "eliminated device {d} is back in registry of {node}"
                    ));
                }
            }
        }
        out
    }
}

/// Builds the scenario and runs it once in `mode`.
pub fn run(config: &ScenarioConfig, mode: Mode) -> Result<RunOutput, SimError> {
    Ok(Scenario::build(config)?.run(mode))
}
