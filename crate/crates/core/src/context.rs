//! Strategic context of a device: identity, update counter, traffic type,
//! header length, packet memory range and route.
//!
//! Counters are driven by a keyed deterministic PRNG that the CDS and the
//! legitimate device evaluate independently. Nothing here holds mutable
//! shared state.

use std::collections::BTreeSet;
use std::fmt;

use rand::RngCore;

use crate::rng::{keyed_rng, Domain};

/// Opaque device or infrastructure identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(pub u64);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Simulation time in milliseconds.
pub type Millis = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DeviceSignature {
    pub id: u64,
    pub issued_at: Millis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct UpdateCounter {
    pub value: u32,
    /// Number of increments applied since (re-)registration.
    pub epoch: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TrafficType {
    Telemetry,
    Control,
    Media,
    Bulk,
}

impl TrafficType {
    pub const ALL: [TrafficType; 4] = [
        TrafficType::Telemetry,
        TrafficType::Control,
        TrafficType::Media,
        TrafficType::Bulk,
    ];

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Route {
    ViaLds,
    ViaSds,
    DirectCds,
}

impl Route {
    pub const ALL: [Route; 3] = [Route::ViaLds, Route::ViaSds, Route::DirectCds];

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Route::ViaLds => "via_lds",
            Route::ViaSds => "via_sds",
            Route::DirectCds => "direct_cds",
        })
    }
}

/// Smallest and largest packet a device produces, in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MemoryRange {
    pub min_packet_bytes: u32,
    pub max_packet_bytes: u32,
}

/// The six strategic context fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ContextField {
    Sg,
    Uc,
    Tp,
    Hl,
    Mr,
    Rt,
}

impl ContextField {
    pub const ALL: [ContextField; 6] = [
        ContextField::Sg,
        ContextField::Uc,
        ContextField::Tp,
        ContextField::Hl,
        ContextField::Mr,
        ContextField::Rt,
    ];

    pub fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for ContextField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContextField::Sg => "Sg",
            ContextField::Uc => "Uc",
            ContextField::Tp => "Tp",
            ContextField::Hl => "Hl",
            ContextField::Mr => "Mr",
            ContextField::Rt => "Rt",
        })
    }
}

/// Set of context fields, stored as a 6-bit mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct FieldSet(u8);

impl FieldSet {
    pub const EMPTY: FieldSet = FieldSet(0);
    pub const FULL: FieldSet = FieldSet(0b11_1111);

    /// Returns `None` for masks with bits outside the six fields.
    pub fn from_bits(bits: u8) -> Option<Self> {
        (bits & !Self::FULL.0 == 0).then_some(FieldSet(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, field: ContextField) -> bool {
        self.0 & field.bit() != 0
    }

    pub fn insert(&mut self, field: ContextField) {
        self.0 |= field.bit();
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = ContextField> {
        ContextField::ALL
            .into_iter()
            .filter(move |f| self.contains(*f))
    }
}

impl FromIterator<ContextField> for FieldSet {
    fn from_iter<I: IntoIterator<Item = ContextField>>(iter: I) -> Self {
        let mut set = FieldSet::EMPTY;
        for f in iter {
            set.insert(f);
        }
        set
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContextError {
    #[error("memory range min {min} exceeds max {max}")]
    InvertedMemoryRange { min: u32, max: u32 },
    #[error("header length must be a positive multiple of 8 bits, got {0}")]
    BadHeaderLength(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ContextRecord {
    pub signature: DeviceSignature,
    pub counter: UpdateCounter,
    pub traffic_type: TrafficType,
    pub header_length_bits: u32,
    pub memory_range: MemoryRange,
    pub route: Route,
}

impl ContextRecord {
    pub fn new(
        signature: DeviceSignature,
        counter: UpdateCounter,
        traffic_type: TrafficType,
        header_length_bits: u32,
        memory_range: MemoryRange,
        route: Route,
    ) -> Result<Self, ContextError> {
        let record = ContextRecord {
            signature,
            counter,
            traffic_type,
            header_length_bits,
            memory_range,
            route,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<(), ContextError> {
        let MemoryRange {
            min_packet_bytes: min,
            max_packet_bytes: max,
        } = self.memory_range;
        if min > max {
            return Err(ContextError::InvertedMemoryRange { min, max });
        }
        if self.header_length_bits == 0 || !self.header_length_bits.is_multiple_of(8) {
            return Err(ContextError::BadHeaderLength(self.header_length_bits));
        }
        Ok(())
    }

    pub fn header_bytes(&self) -> u32 {
        self.header_length_bits / 8
    }

    pub fn with_counter(mut self, counter: UpdateCounter) -> Self {
        self.counter = counter;
        self
    }

    /// Fields on which `self` and `other` disagree.
    pub fn differing_fields(&self, other: &ContextRecord) -> FieldSet {
        let mut set = FieldSet::EMPTY;
        if self.signature != other.signature {
            set.insert(ContextField::Sg);
        }
        if self.counter.value != other.counter.value {
            set.insert(ContextField::Uc);
        }
        if self.traffic_type != other.traffic_type {
            set.insert(ContextField::Tp);
        }
        if self.header_length_bits != other.header_length_bits {
            set.insert(ContextField::Hl);
        }
        if self.memory_range != other.memory_range {
            set.insert(ContextField::Mr);
        }
        if self.route != other.route {
            set.insert(ContextField::Rt);
        }
        set
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FirmwareVersion {
    pub version: u32,
    pub patched_against: BTreeSet<u64>,
}

impl FirmwareVersion {
    pub fn apply_patch(&mut self, vulnerability: u64) {
        self.version += 1;
        self.patched_against.insert(vulnerability);
    }
}

/// Counter at epoch 0, drawn from a PRNG keyed on `(seed, device_id)`.
pub fn new_counter(seed: u64, device_id: EntityId) -> UpdateCounter {
    let value = keyed_rng(Domain::Counter, seed, device_id.0, 0).next_u32();
    UpdateCounter { value, epoch: 0 }
}

/// Increment applied when moving from `epoch` to `epoch + 1`. Never zero.
pub fn next_delta(seed: u64, device_id: EntityId, epoch: u64) -> u32 {
    let mut rng = keyed_rng(Domain::Delta, seed, device_id.0, epoch);
    loop {
        let d = rng.next_u32();
        if d != 0 {
            return d;
        }
    }
}

pub fn advance_counter(c: UpdateCounter, delta: u32) -> UpdateCounter {
    UpdateCounter {
        value: c.value.wrapping_add(delta),
        epoch: c.epoch + 1,
    }
}

/// Seed used for a device's counter after `generation` re-registrations.
pub fn counter_seed(scenario_seed: u64, generation: u32) -> u64 {
    scenario_seed ^ u64::from(generation).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}
