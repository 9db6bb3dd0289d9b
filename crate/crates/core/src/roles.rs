//! Diagnosis roles and devices.
//!
//! The CDS owns the authoritative registry (stored graph, firmware, counter
//! generation, trust). LDS and SDS nodes keep a registry of the devices in
//! their region and turn raw context into digest reports. HGWs and APs are
//! plain forwarders and carry no registry.

use std::collections::BTreeMap;

use rand::Rng;

use crate::context::{
    counter_seed, ContextField, ContextRecord, EntityId, FieldSet, FirmwareVersion, Millis, Route,
    TrafficType,
};
use crate::detection::{
    build_graph, expected_counter_for, mutual_exclusion_check, required_sources, ContextGraph,
    DetectionError, Fingerprint, Report, ReportSource, Verdict,
};
use crate::rng::{keyed_rng, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Cds,
    Lds,
    Sds,
    Hgw,
    Ap,
    Device,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Trust {
    Trusted,
    Suspect,
    Eliminated,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RoleError {
    #[error("device {0} is already registered")]
    Duplicate(EntityId),
    #[error("device {0} was eliminated and may only return through the re-register path")]
    Eliminated(EntityId),
    #[error("device {0} is not in the registry of {1}")]
    UnknownDevice(EntityId, EntityId),
    #[error("{0:?} cannot perform this operation")]
    WrongRole(Role),
    #[error("illegal trust transition {from:?} -> {to:?} for device {device}")]
    IllegalTransition {
        device: EntityId,
        from: Trust,
        to: Trust,
    },
    #[error("route {route} needs a diagnosis node, none given for device {device}")]
    MissingDiagnosisNode { device: EntityId, route: Route },
    #[error(transparent)]
    Detection(#[from] DetectionError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistryEntry {
    /// Context as registered, counter at epoch 0 of the current generation.
    pub record: ContextRecord,
    pub graph: ContextGraph,
    pub firmware: FirmwareVersion,
    pub last_epoch: u64,
    pub trust: Trust,
    /// Number of re-registrations; keys the counter stream.
    pub generation: u32,
    /// Tick index that corresponds to epoch 0 of the current generation.
    pub base_tick: u64,
    /// Reports for earlier ticks are ignored (re-registration hand-over).
    pub diagnose_from_tick: u64,
    pub diagnosis_node: Option<EntityId>,
    /// Expected counter for the next epoch, as pushed in PeriodStart.
    pub expected_next: Option<u32>,
}

impl RegistryEntry {
    pub fn epoch_at(&self, tick: u64) -> u64 {
        tick.saturating_sub(self.base_tick)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistrationRequest {
    pub device: EntityId,
    pub record: ContextRecord,
    /// LDS or SDS responsible for the device; `None` for direct devices.
    pub diagnosis_node: Option<EntityId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegistrationAck {
    pub device: EntityId,
    pub diagnosis_node: Option<EntityId>,
    pub fingerprint: Fingerprint,
    pub at: Millis,
}

/// Digest-plus-counter view forwarded by an LDS or SDS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DigestReport {
    pub device: EntityId,
    pub source: ReportSource,
    pub fingerprint: Fingerprint,
    pub counter_value: u32,
    /// Fields that disagree with the node's stored graph at the expected
    /// counter it was told about. Informational only.
    pub local_mismatch: FieldSet,
    /// Full graph retained at the node; travels with the report inside the
    /// simulator so the CDS can attribute a cause.
    pub graph: ContextGraph,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleState {
    pub role: Role,
    pub entity_id: EntityId,
    pub registry: BTreeMap<EntityId, RegistryEntry>,
    /// Reports collected per `(device, tick)` until the CDS decides.
    pub pending_reports: BTreeMap<(EntityId, u64), Vec<Report>>,
    seed: u64,
}

impl RoleState {
    pub fn new(role: Role, entity_id: EntityId, seed: u64) -> Self {
        RoleState {
            role,
            entity_id,
            registry: BTreeMap::new(),
            pending_reports: BTreeMap::new(),
            seed,
        }
    }

    fn require(&self, roles: &[Role]) -> Result<(), RoleError> {
        if roles.contains(&self.role) {
            Ok(())
        } else {
            Err(RoleError::WrongRole(self.role))
        }
    }

    pub fn entry(&self, device: EntityId) -> Option<&RegistryEntry> {
        self.registry.get(&device)
    }

    pub fn trust(&self, device: EntityId) -> Option<Trust> {
        self.registry.get(&device).map(|e| e.trust)
    }

    /// Stores a newly activated device at the CDS.
    pub fn register_device(
        &mut self,
        req: RegistrationRequest,
        stages: u32,
        now: Millis,
    ) -> Result<RegistrationAck, RoleError> {
        self.require(&[Role::Cds])?;
        if let Some(e) = self.registry.get(&req.device) {
            return Err(match e.trust {
                Trust::Eliminated => RoleError::Eliminated(req.device),
                _ => RoleError::Duplicate(req.device),
            });
        }
        if req.record.route != Route::DirectCds && req.diagnosis_node.is_none() {
            return Err(RoleError::MissingDiagnosisNode {
                device: req.device,
                route: req.record.route,
            });
        }
        let graph = build_graph(req.device, &req.record, stages)?;
        let ack = RegistrationAck {
            device: req.device,
            diagnosis_node: req.diagnosis_node,
            fingerprint: graph.fingerprint(),
            at: now,
        };
        self.registry.insert(
            req.device,
            RegistryEntry {
                record: req.record,
                graph,
                firmware: FirmwareVersion::default(),
                last_epoch: 0,
                trust: Trust::Trusted,
                generation: 0,
                base_tick: 0,
                diagnose_from_tick: 0,
                diagnosis_node: req.diagnosis_node,
                expected_next: None,
            },
        );
        Ok(ack)
    }

    /// Copies a CDS registry entry into this LDS/SDS.
    pub fn admit(&mut self, device: EntityId, entry: RegistryEntry) -> Result<(), RoleError> {
        self.require(&[Role::Lds, Role::Sds])?;
        if self.registry.contains_key(&device) {
            return Err(RoleError::Duplicate(device));
        }
        self.registry.insert(device, entry);
        Ok(())
    }

    /// Replaces a subordinate entry after a re-registration.
    pub fn readmit(&mut self, device: EntityId, entry: RegistryEntry) -> Result<(), RoleError> {
        self.require(&[Role::Lds, Role::Sds])?;
        self.registry.insert(device, entry);
        Ok(())
    }

    pub fn remove(&mut self, device: EntityId) -> Option<RegistryEntry> {
        self.pending_reports.retain(|(d, _), _| *d != device);
        self.registry.remove(&device)
    }

    fn source(&self) -> ReportSource {
        match self.role {
            Role::Lds => ReportSource::Lds,
            Role::Sds => ReportSource::Sds,
            Role::Hgw => ReportSource::Hgw,
            _ => ReportSource::Device,
        }
    }

    /// Records the expected next counter value carried by PeriodStart.
    pub fn note_expected(&mut self, device: EntityId, value: u32) {
        if let Some(e) = self.registry.get_mut(&device) {
            e.expected_next = Some(value);
        }
    }

    /// Builds the graph locally and produces the digest report for the CDS.
    pub fn local_diagnose(
        &self,
        device: EntityId,
        record: &ContextRecord,
        stages: u32,
    ) -> Result<DigestReport, RoleError> {
        self.require(&[Role::Lds, Role::Sds])?;
        let entry = self
            .registry
            .get(&device)
            .ok_or(RoleError::UnknownDevice(device, self.entity_id))?;
        let graph = build_graph(device, record, stages)?;
        let mut reference = entry.record;
        if let Some(v) = entry.expected_next {
            reference.counter.value = v;
        } else {
            reference.counter = record.counter;
        }
        Ok(DigestReport {
            device,
            source: self.source(),
            fingerprint: graph.fingerprint(),
            counter_value: record.counter.value,
            local_mismatch: reference.differing_fields(record),
            graph,
        })
    }

    /// Counter the CDS expects from `device` at simulation tick `tick`.
    pub fn expected_counter(
        &self,
        device: EntityId,
        tick: u64,
    ) -> Option<crate::context::UpdateCounter> {
        let e = self.registry.get(&device)?;
        Some(expected_counter_for(
            device,
            e.epoch_at(tick),
            counter_seed(self.seed, e.generation),
        ))
    }

    pub fn add_report(&mut self, device: EntityId, tick: u64, report: Report) {
        self.pending_reports
            .entry((device, tick))
            .or_default()
            .push(report);
    }

    pub fn has_required_reports(&self, device: EntityId, tick: u64, distributed: bool) -> bool {
        let Some(entry) = self.registry.get(&device) else {
            return false;
        };
        let have = self.pending_reports.get(&(device, tick));
        required_sources(entry.record.route, distributed)
            .iter()
            .all(|s| have.is_some_and(|v| v.iter().any(|r| r.source == *s)))
    }

    /// Closes the period of `device` at `tick` and applies the matching rule.
    /// A threat moves the device to Suspect; a consistent verdict refreshes
    /// the stored epoch.
    pub fn cds_decide(
        &mut self,
        device: EntityId,
        tick: u64,
        distributed: bool,
    ) -> Result<Verdict, RoleError> {
        self.require(&[Role::Cds])?;
        let reports = self
            .pending_reports
            .remove(&(device, tick))
            .unwrap_or_default();
        let expected = self
            .expected_counter(device, tick)
            .ok_or(RoleError::UnknownDevice(device, self.entity_id))?;
        let entry = self.registry.get_mut(&device).expect("checked above");
        let verdict = mutual_exclusion_check(
            &entry.graph,
            &reports,
            expected,
            required_sources(entry.record.route, distributed),
        )?;
        match verdict {
            Verdict::Consistent => entry.last_epoch = expected.epoch,
            Verdict::Threat(_) => self.set_trust(device, Trust::Suspect)?,
        }
        Ok(verdict)
    }

    pub fn set_trust(&mut self, device: EntityId, to: Trust) -> Result<(), RoleError> {
        let is_cds = self.role == Role::Cds;
        let entry = self
            .registry
            .get_mut(&device)
            .ok_or(RoleError::UnknownDevice(device, self.entity_id))?;
        let from = entry.trust;
        let legal = matches!(
            (from, to),
            (Trust::Trusted, Trust::Suspect)
                | (Trust::Suspect, Trust::Trusted)
                | (Trust::Suspect, Trust::Eliminated)
        ) && (to != Trust::Eliminated || is_cds);
        if !legal {
            return Err(RoleError::IllegalTransition { device, from, to });
        }
        entry.trust = to;
        Ok(())
    }

    /// Re-register path of the critical protocol: a Suspect device returns
    /// with a fresh graph and a counter re-seeded at epoch 0 of `base_tick`.
    pub fn reregister(
        &mut self,
        device: EntityId,
        fresh: ContextRecord,
        stages: u32,
        base_tick: u64,
        firmware: FirmwareVersion,
    ) -> Result<RegistryEntry, RoleError> {
        self.require(&[Role::Cds])?;
        let seed = self.seed;
        let entry = self
            .registry
            .get(&device)
            .ok_or(RoleError::UnknownDevice(device, self.entity_id))?;
        if entry.trust != Trust::Suspect {
            return Err(RoleError::IllegalTransition {
                device,
                from: entry.trust,
                to: Trust::Trusted,
            });
        }
        let generation = entry.generation + 1;
        let record = fresh.with_counter(crate::context::new_counter(
            counter_seed(seed, generation),
            device,
        ));
        let graph = build_graph(device, &record, stages)?;
        let entry = self.registry.get_mut(&device).expect("checked above");
        entry.record = record;
        entry.graph = graph;
        entry.firmware = firmware;
        entry.generation = generation;
        entry.base_tick = base_tick;
        entry.diagnose_from_tick = base_tick + 1;
        entry.last_epoch = 0;
        entry.expected_next = None;
        entry.trust = Trust::Trusted;
        self.pending_reports.retain(|(d, _), _| *d != device);
        Ok(entry.clone())
    }
}

/// How a compromised device behaves when it is patched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Disposition {
    /// Exploited but honest: an effective patch removes the compromise.
    Exploited,
    /// Ignores patches.
    Malicious,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceState {
    pub device_id: EntityId,
    /// Registered context, counter at epoch 0 of generation 0.
    pub base_record: ContextRecord,
    pub firmware: FirmwareVersion,
    pub generation: u32,
    pub base_tick: u64,
    pub compromised: bool,
    pub disposition: Disposition,
    pub tamper_profile: Option<FieldSet>,
    /// Epoch at which the counter froze, when Uc is tampered.
    pub compromise_epoch: u64,
    seed: u64,
}

impl DeviceState {
    pub fn new(device_id: EntityId, base_record: ContextRecord, seed: u64) -> Self {
        DeviceState {
            device_id,
            base_record,
            firmware: FirmwareVersion::default(),
            generation: 0,
            base_tick: 0,
            compromised: false,
            disposition: Disposition::Exploited,
            tamper_profile: None,
            compromise_epoch: 0,
            seed,
        }
    }

    pub fn epoch_at(&self, tick: u64) -> u64 {
        tick.saturating_sub(self.base_tick)
    }

    pub fn compromise(&mut self, profile: FieldSet, at_epoch: u64, disposition: Disposition) {
        self.compromised = true;
        self.tamper_profile = Some(profile);
        self.compromise_epoch = at_epoch;
        self.disposition = disposition;
    }

    /// Applies a delivered patch. Returns whether the compromise was removed.
    pub fn apply_patch(&mut self, effective: bool, vulnerability: u64) -> bool {
        if !self.compromised {
            self.firmware.apply_patch(vulnerability);
            return false;
        }
        if self.disposition == Disposition::Malicious || !effective {
            return false;
        }
        self.firmware.apply_patch(vulnerability);
        self.compromised = false;
        self.tamper_profile = None;
        true
    }

    pub fn reregistered(&mut self, generation: u32, base_tick: u64) {
        self.generation = generation;
        self.base_tick = base_tick;
    }

    /// Context the device reports for `epoch` of its current generation.
    pub fn emit_context(&self, epoch: u64) -> ContextRecord {
        let key = counter_seed(self.seed, self.generation);
        let honest =
            self.base_record
                .with_counter(expected_counter_for(self.device_id, epoch, key));
        match self.tamper_profile {
            Some(profile) if self.compromised => self.tamper(honest, profile, epoch),
            _ => honest,
        }
    }

    fn tamper(&self, mut r: ContextRecord, profile: FieldSet, epoch: u64) -> ContextRecord {
        let mut rng = keyed_rng(Domain::Tamper, self.seed, self.device_id.0, 0);
        let mask: u64 = rng.gen::<u64>() | 1;
        for field in profile.iter() {
            match field {
                ContextField::Sg => r.signature.id ^= mask,
                ContextField::Uc => {
                    let frozen = self.compromise_epoch.min(epoch);
                    r.counter = expected_counter_for(
                        self.device_id,
                        frozen,
                        counter_seed(self.seed, self.generation),
                    );
                }
                ContextField::Tp => {
                    let flip = 1 + (mask % 3) as u8;
                    r.traffic_type = TrafficType::from_index(r.traffic_type.index() ^ flip)
                        .expect("xor of 2-bit values stays in range");
                }
                ContextField::Hl => {
                    let bytes = r.header_bytes();
                    let mut m = 1 + (mask % 255) as u32;
                    if m == bytes {
                        m ^= 0x100;
                    }
                    r.header_length_bits = (bytes ^ m) * 8;
                }
                ContextField::Mr => {
                    let bit = 1u32 << (20 + (mask % 8));
                    r.memory_range.max_packet_bytes ^= bit;
                    if r.memory_range.max_packet_bytes < r.memory_range.min_packet_bytes {
                        r.memory_range.max_packet_bytes |= bit;
                    }
                }
                ContextField::Rt => {
                    let shift = 1 + (mask % 2) as u8;
                    r.route = Route::from_index((r.route.index() + shift) % 3)
                        .expect("mod 3 stays in range");
                }
            }
        }
        r
    }
}
