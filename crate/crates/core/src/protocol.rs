//! Critical data sharing protocol run by the CDS once a device is Suspect:
//! alarm fan-out, patch dispatch, trust revalidation, then re-registration
//! or elimination.

use std::collections::BTreeMap;
use std::fmt;

use crate::context::{ContextRecord, EntityId, FirmwareVersion, Millis, Route};
use crate::detection::{mutual_exclusion_check, required_sources, Report, Verdict};
use crate::roles::{RegistryEntry, RoleError, RoleState, Trust};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    ContextShare,
    DigestReport,
    PeriodStart,
    Alarm,
    PatchDispatch,
    TrustRevalidate,
    TrustAck,
    ReRegister,
    Eliminate,
}

impl MessageKind {
    pub const ALL: [MessageKind; 9] = [
        MessageKind::ContextShare,
        MessageKind::DigestReport,
        MessageKind::PeriodStart,
        MessageKind::Alarm,
        MessageKind::PatchDispatch,
        MessageKind::TrustRevalidate,
        MessageKind::TrustAck,
        MessageKind::ReRegister,
        MessageKind::Eliminate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::ContextShare => "ContextShare",
            MessageKind::DigestReport => "DigestReport",
            MessageKind::PeriodStart => "PeriodStart",
            MessageKind::Alarm => "Alarm",
            MessageKind::PatchDispatch => "PatchDispatch",
            MessageKind::TrustRevalidate => "TrustRevalidate",
            MessageKind::TrustAck => "TrustAck",
            MessageKind::ReRegister => "ReRegister",
            MessageKind::Eliminate => "Eliminate",
        }
    }

    pub fn parse(s: &str) -> Option<MessageKind> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Message body sizes in bytes, excluding the per-device header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SizeTable {
    pub context_share: u32,
    pub digest_report: u32,
    pub period_start: u32,
    pub alarm: u32,
    pub patch_dispatch: u32,
    pub trust_revalidate: u32,
    pub trust_ack: u32,
    pub re_register: u32,
    pub eliminate: u32,
}

impl Default for SizeTable {
    fn default() -> Self {
        SizeTable {
            context_share: 80,
            digest_report: 24,
            period_start: 16,
            alarm: 32,
            patch_dispatch: 128,
            trust_revalidate: 16,
            trust_ack: 24,
            re_register: 64,
            eliminate: 16,
        }
    }
}

impl SizeTable {
    pub fn body(&self, kind: MessageKind) -> u32 {
        match kind {
            MessageKind::ContextShare => self.context_share,
            MessageKind::DigestReport => self.digest_report,
            MessageKind::PeriodStart => self.period_start,
            MessageKind::Alarm => self.alarm,
            MessageKind::PatchDispatch => self.patch_dispatch,
            MessageKind::TrustRevalidate => self.trust_revalidate,
            MessageKind::TrustAck => self.trust_ack,
            MessageKind::ReRegister => self.re_register,
            MessageKind::Eliminate => self.eliminate,
        }
    }
}

/// A size-accounted wire message. `hops` counts the positive-latency links
/// it crosses; co-located LDS/SDS links are not hops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ProtocolMessage {
    pub kind: MessageKind,
    pub src: EntityId,
    pub dst: EntityId,
    pub device_id: EntityId,
    pub payload_bytes: u32,
    pub hops: u32,
    pub sent_at: Millis,
}

impl ProtocolMessage {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: MessageKind,
        src: EntityId,
        dst: EntityId,
        device_id: EntityId,
        header_bytes: u32,
        sizes: &SizeTable,
        hops: u32,
        sent_at: Millis,
    ) -> Self {
        ProtocolMessage {
            kind,
            src,
            dst,
            device_id,
            payload_bytes: header_bytes + sizes.body(kind),
            hops,
            sent_at,
        }
    }

    /// Bytes carried over all hops.
    pub fn wire_bytes(&self) -> u64 {
        u64::from(self.payload_bytes) * u64::from(self.hops)
    }
}

/// Where a device sits relative to the CDS.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteContext {
    pub cds: EntityId,
    pub device: EntityId,
    pub route: Route,
    /// HGW for `ViaLds`, AP otherwise.
    pub gateway: EntityId,
    pub diagnosis_node: Option<EntityId>,
    pub header_bytes: u32,
    pub distributed: bool,
}

impl RouteContext {
    /// Diagnosis node that takes part in this mode, if any.
    pub fn active_node(&self) -> Option<EntityId> {
        if self.distributed {
            self.diagnosis_node
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RoundState {
    Alarmed,
    Patching,
    Revalidating,
    ReRegistered,
    Eliminated,
}

impl RoundState {
    pub fn is_resolved(self) -> bool {
        matches!(self, RoundState::ReRegistered | RoundState::Eliminated)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolRound {
    pub device_id: EntityId,
    pub state: RoundState,
    pub opened_at: Millis,
    pub deadline: Millis,
    pub resolved_at: Option<Millis>,
    /// Kinds of every message the CDS sent for this round, in order.
    pub sent: Vec<MessageKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("device {0} is not Suspect")]
    NotSuspect(EntityId),
    #[error("a round for device {0} is already open")]
    RoundOpen(EntityId),
    #[error("no round for device {0}")]
    NoRound(EntityId),
    #[error("round for device {device} is {state:?}, expected {expected:?}")]
    WrongState {
        device: EntityId,
        state: RoundState,
        expected: RoundState,
    },
    #[error("round for device {0} is already resolved")]
    AlreadyResolved(EntityId),
    #[error("verdict is not a threat")]
    NotAThreat,
    #[error(transparent)]
    Role(#[from] RoleError),
}

/// Outcome of a resolved round, with what subordinates need to hear.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Resolution {
    ReRegistered {
        entry: Box<RegistryEntry>,
        messages: Vec<ProtocolMessage>,
    },
    Eliminated {
        messages: Vec<ProtocolMessage>,
    },
}

impl Resolution {
    pub fn messages(&self) -> &[ProtocolMessage] {
        match self {
            Resolution::ReRegistered { messages, .. } | Resolution::Eliminated { messages } => {
                messages
            }
        }
    }
}

/// Rounds owned by the CDS; at most one open round per device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CriticalProtocol {
    pub sizes: SizeTable,
    pub period_ms: Millis,
    rounds: BTreeMap<EntityId, ProtocolRound>,
    history: Vec<ProtocolRound>,
}

impl CriticalProtocol {
    pub fn new(sizes: SizeTable, period_ms: Millis) -> Self {
        CriticalProtocol {
            sizes,
            period_ms,
            rounds: BTreeMap::new(),
            history: Vec::new(),
        }
    }

    pub fn round(&self, device: EntityId) -> Option<&ProtocolRound> {
        self.rounds.get(&device)
    }

    pub fn open_rounds(&self) -> impl Iterator<Item = &ProtocolRound> {
        self.rounds.values()
    }

    /// Resolved rounds in resolution order.
    pub fn history(&self) -> &[ProtocolRound] {
        &self.history
    }

    pub fn deadline_for(&self, opened_at: Millis) -> Millis {
        opened_at + 4 * self.period_ms
    }

    fn msg(
        &self,
        ctx: &RouteContext,
        kind: MessageKind,
        dst: EntityId,
        hops: u32,
        now: Millis,
    ) -> ProtocolMessage {
        ProtocolMessage::new(
            kind,
            ctx.cds,
            dst,
            ctx.device,
            ctx.header_bytes,
            &self.sizes,
            hops,
            now,
        )
    }

    fn open_round_mut(
        &mut self,
        device: EntityId,
        expected: RoundState,
    ) -> Result<&mut ProtocolRound, ProtocolError> {
        let round = self
            .rounds
            .get_mut(&device)
            .ok_or(ProtocolError::NoRound(device))?;
        if round.state != expected {
            return Err(ProtocolError::WrongState {
                device,
                state: round.state,
                expected,
            });
        }
        Ok(round)
    }

    /// Opens a round and fans alarms out in the fixed order SDS (threat
    /// information), HGW (trust information), LDS (device information),
    /// keeping only recipients present on the device's route.
    pub fn raise_alarm(
        &mut self,
        cds: &RoleState,
        ctx: &RouteContext,
        verdict: Verdict,
        now: Millis,
    ) -> Result<Vec<ProtocolMessage>, ProtocolError> {
        if !verdict.is_threat() {
            return Err(ProtocolError::NotAThreat);
        }
        if self.rounds.contains_key(&ctx.device) {
            return Err(ProtocolError::RoundOpen(ctx.device));
        }
        if cds.trust(ctx.device) != Some(Trust::Suspect) {
            return Err(ProtocolError::NotSuspect(ctx.device));
        }
        let mut recipients = Vec::new();
        let node = ctx.active_node();
        if ctx.route == Route::ViaSds {
            recipients.extend(node);
        }
        if ctx.route == Route::ViaLds {
            recipients.push(ctx.gateway);
            recipients.extend(node);
        }
        let messages: Vec<_> = recipients
            .into_iter()
            .map(|dst| self.msg(ctx, MessageKind::Alarm, dst, 1, now))
            .collect();
        self.rounds.insert(
            ctx.device,
            ProtocolRound {
                device_id: ctx.device,
                state: RoundState::Alarmed,
                opened_at: now,
                deadline: self.deadline_for(now),
                resolved_at: None,
                sent: messages.iter().map(|m| m.kind).collect(),
            },
        );
        Ok(messages)
    }

    /// Sends the patch toward the device along its route.
    pub fn dispatch_patch(
        &mut self,
        ctx: &RouteContext,
        now: Millis,
    ) -> Result<ProtocolMessage, ProtocolError> {
        let msg = self.msg(ctx, MessageKind::PatchDispatch, ctx.device, 2, now);
        let round = self.open_round_mut(ctx.device, RoundState::Alarmed)?;
        round.state = RoundState::Patching;
        round.sent.push(msg.kind);
        Ok(msg)
    }

    /// Asks the device's diagnosis node (or, without one, the device itself)
    /// for fresh context.
    pub fn revalidate_trust(
        &mut self,
        ctx: &RouteContext,
        now: Millis,
    ) -> Result<Vec<ProtocolMessage>, ProtocolError> {
        let msg = match ctx.active_node() {
            Some(node) => self.msg(ctx, MessageKind::TrustRevalidate, node, 1, now),
            None => self.msg(ctx, MessageKind::TrustRevalidate, ctx.device, 2, now),
        };
        let round = self.open_round_mut(ctx.device, RoundState::Patching)?;
        round.state = RoundState::Revalidating;
        round.sent.push(msg.kind);
        Ok(vec![msg])
    }

    /// Resolves a revalidating round. The device re-registers when its fresh
    /// context passes the matching rule at `tick`; otherwise it is
    /// eliminated.
    #[allow(clippy::too_many_arguments)]
    pub fn resolve(
        &mut self,
        cds: &mut RoleState,
        ctx: &RouteContext,
        fresh: &[Report],
        fresh_record: Option<&ContextRecord>,
        tick: u64,
        stages: u32,
        base_tick: u64,
        now: Millis,
    ) -> Result<Resolution, ProtocolError> {
        self.open_round_mut(ctx.device, RoundState::Revalidating)?;
        let entry = cds
            .entry(ctx.device)
            .ok_or(RoleError::UnknownDevice(ctx.device, cds.entity_id))?;
        let expected = cds
            .expected_counter(ctx.device, tick)
            .expect("entry exists");
        let verdict = mutual_exclusion_check(
            &entry.graph,
            fresh,
            expected,
            required_sources(ctx.route, ctx.distributed),
        )
        .map_err(RoleError::from)?;
        match (verdict, fresh_record) {
            (Verdict::Consistent, Some(record)) => {
                let mut firmware: FirmwareVersion = entry.firmware.clone();
                firmware.apply_patch(ctx.device.0);
                let entry = cds.reregister(ctx.device, *record, stages, base_tick, firmware)?;
                let mut messages = vec![self.msg(ctx, MessageKind::ReRegister, ctx.device, 2, now)];
                if let Some(node) = ctx.active_node() {
                    messages.push(self.msg(ctx, MessageKind::ReRegister, node, 1, now));
                }
                self.finish(ctx.device, RoundState::ReRegistered, &messages, now);
                Ok(Resolution::ReRegistered {
                    entry: Box::new(entry),
                    messages,
                })
            }
            _ => self.eliminate(cds, ctx, now),
        }
    }

    /// Deadline handler: any round still open at its deadline ends in
    /// elimination. Returns `None` when there is nothing to expire.
    pub fn expire(
        &mut self,
        cds: &mut RoleState,
        ctx: &RouteContext,
        now: Millis,
    ) -> Result<Option<Resolution>, ProtocolError> {
        match self.rounds.get(&ctx.device) {
            Some(r) if now >= r.deadline => self.eliminate(cds, ctx, now).map(Some),
            _ => Ok(None),
        }
    }

    fn eliminate(
        &mut self,
        cds: &mut RoleState,
        ctx: &RouteContext,
        now: Millis,
    ) -> Result<Resolution, ProtocolError> {
        if !self.rounds.contains_key(&ctx.device) {
            return Err(ProtocolError::NoRound(ctx.device));
        }
        cds.set_trust(ctx.device, Trust::Eliminated)?;
        let dst = ctx.active_node().unwrap_or(ctx.gateway);
        let messages = vec![self.msg(ctx, MessageKind::Eliminate, dst, 1, now)];
        self.finish(ctx.device, RoundState::Eliminated, &messages, now);
        Ok(Resolution::Eliminated { messages })
    }

    fn finish(
        &mut self,
        device: EntityId,
        state: RoundState,
        messages: &[ProtocolMessage],
        now: Millis,
    ) {
        let mut round = self.rounds.remove(&device).expect("round is open");
        round.state = state;
        round.resolved_at = Some(now);
        round.sent.extend(messages.iter().map(|m| m.kind));
        self.history.push(round);
    }

    /// Rejects operations on a device whose last round already ended.
    pub fn check_not_resolved(&self, device: EntityId) -> Result<(), ProtocolError> {
        if self.rounds.contains_key(&device) {
            return Ok(());
        }
        if self.history.iter().any(|r| r.device_id == device) {
            Err(ProtocolError::AlreadyResolved(device))
        } else {
            Err(ProtocolError::NoRound(device))
        }
    }
}

/// Whether a round's CDS transcript has the shape
/// `Alarm* [PatchDispatch TrustRevalidate*] (ReRegister+ | Eliminate)`.
pub fn transcript_is_well_ordered(sent: &[MessageKind]) -> bool {
    use MessageKind::*;
    let mut i = 0;
    while i < sent.len() && sent[i] == Alarm {
        i += 1;
    }
    if i < sent.len() && sent[i] == PatchDispatch {
        i += 1;
        while i < sent.len() && sent[i] == TrustRevalidate {
            i += 1;
        }
    }
    match &sent[i..] {
        [Eliminate] => true,
        rest => !rest.is_empty() && rest.iter().all(|k| *k == ReRegister),
    }
}
