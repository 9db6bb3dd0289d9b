//! Line-oriented run transcript. One record per line, tab-separated, first
//! column is the record tag:
//!
//! ```text
//! #dds-transcript v1
//! meta      mode devices seed period_ms duration_ms
//! attack    device profile_bits disposition discovery_at exploit_at patch_available_at
//! compromise at device epoch
//! send      sent_at kind src dst device payload_bytes hops delivered
//! decide    at device tick tick_at verdict compromised
//! round     at device
//! patch     at device applied
//! resolve   at device outcome opened_at
//! ```
//!
//! `verdict` is `consistent` or `threat:<cause>`; `disposition` is
//! `exploited` or `malicious`; `outcome` is `reregistered` or `eliminated`;
//! booleans are `0`/`1`.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::config::Mode;
use crate::context::{EntityId, FieldSet, Millis};
use crate::detection::{ThreatCause, Verdict};
use crate::protocol::MessageKind;
use crate::roles::Disposition;

pub const HEADER: &str = "#dds-transcript v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Meta {
    pub mode: Mode,
    pub devices: usize,
    pub seed: u64,
    pub period_ms: Millis,
    pub duration_ms: Millis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    ReRegistered,
    Eliminated,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Entry {
    Attack {
        device: EntityId,
        profile: FieldSet,
        disposition: Disposition,
        discovery_at: Millis,
        exploit_at: Millis,
        patch_available_at: Millis,
    },
    Compromise {
        at: Millis,
        device: EntityId,
        epoch: u64,
    },
    Send {
        sent_at: Millis,
        kind: MessageKind,
        src: EntityId,
        dst: EntityId,
        device: EntityId,
        payload_bytes: u32,
        hops: u32,
        delivered: bool,
    },
    Decide {
        at: Millis,
        device: EntityId,
        tick: u64,
        tick_at: Millis,
        verdict: Verdict,
        compromised: bool,
    },
    Round {
        at: Millis,
        device: EntityId,
    },
    Patch {
        at: Millis,
        device: EntityId,
        applied: bool,
    },
    Resolve {
        at: Millis,
        device: EntityId,
        outcome: Outcome,
        opened_at: Millis,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    pub meta: Meta,
    pub entries: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("transcript line {line}: {message}")]
pub struct TranscriptError {
    pub line: usize,
    pub message: String,
}

fn b(v: bool) -> u8 {
    u8::from(v)
}

fn verdict_str(v: Verdict) -> String {
    match v {
        Verdict::Consistent => "consistent".into(),
        Verdict::Threat(c) => format!("threat:{}", c.as_str()),
    }
}

impl Transcript {
    pub fn new(meta: Meta) -> Self {
        Transcript {
            meta,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, e: Entry) {
        self.entries.push(e);
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let m = &self.meta;
        let _ = writeln!(s, "{HEADER}");
        let _ = writeln!(
            s,
            "meta\t{}\t{}\t{}\t{}\t{}",
            m.mode, m.devices, m.seed, m.period_ms, m.duration_ms
        );
        for e in &self.entries {
            let _ = match e {
                Entry::Attack {
                    device,
                    profile,
                    disposition,
                    discovery_at,
                    exploit_at,
                    patch_available_at,
                } => writeln!(
                    s,
                    "attack\t{device}\t{}\t{}\t{discovery_at}\t{exploit_at}\t{patch_available_at}",
                    profile.bits(),
                    match disposition {
                        Disposition::Exploited => "exploited",
                        Disposition::Malicious => "malicious",
                    }
                ),
                Entry::Compromise { at, device, epoch } => {
                    writeln!(s, "compromise\t{at}\t{device}\t{epoch}")
                }
                Entry::Send {
                    sent_at,
                    kind,
                    src,
                    dst,
                    device,
                    payload_bytes,
                    hops,
                    delivered,
                } => writeln!(
                    s,
                    "send\t{sent_at}\t{kind}\t{src}\t{dst}\t{device}\t{payload_bytes}\t{hops}\t{}",
                    b(*delivered)
                ),
                Entry::Decide {
                    at,
                    device,
                    tick,
                    tick_at,
                    verdict,
                    compromised,
                } => writeln!(
                    s,
                    "decide\t{at}\t{device}\t{tick}\t{tick_at}\t{}\t{}",
                    verdict_str(*verdict),
                    b(*compromised)
                ),
                Entry::Round { at, device } => writeln!(s, "round\t{at}\t{device}"),
                Entry::Patch {
                    at,
                    device,
                    applied,
                } => writeln!(s, "patch\t{at}\t{device}\t{}", b(*applied)),
                Entry::Resolve {
                    at,
                    device,
                    outcome,
                    opened_at,
                } => writeln!(
                    s,
                    "resolve\t{at}\t{device}\t{}\t{opened_at}",
                    match outcome {
                        Outcome::ReRegistered => "reregistered",
                        Outcome::Eliminated => "eliminated",
                    }
                ),
            };
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, TranscriptError> {
        let mut lines = text.lines().enumerate();
        let err = |line: usize, message: &str| TranscriptError {
            line: line + 1,
            message: message.to_string(),
        };
        match lines.next() {
            Some((_, HEADER)) => {}
            _ => return Err(err(0, "missing transcript header")),
        }
        let (i, meta_line) = lines.next().ok_or_else(|| err(1, "missing meta line"))?;
        let f: Vec<&str> = meta_line.split('\t').collect();
        if f.len() != 6 || f[0] != "meta" {
            return Err(err(i, "malformed meta line"));
        }
        let mode = match f[1] {
            "centralized" => Mode::Centralized,
            "distributed" => Mode::Distributed,
            _ => return Err(err(i, "unknown mode")),
        };
        let meta = Meta {
            mode,
            devices: num(f[2]).ok_or_else(|| err(i, "bad devices"))?,
            seed: num(f[3]).ok_or_else(|| err(i, "bad seed"))?,
            period_ms: num(f[4]).ok_or_else(|| err(i, "bad period"))?,
            duration_ms: num(f[5]).ok_or_else(|| err(i, "bad duration"))?,
        };
        let mut t = Transcript::new(meta);
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let entry = parse_entry(line).ok_or_else(|| err(i, "malformed record"))?;
            t.push(entry);
        }
        Ok(t)
    }
}

fn num<T: FromStr>(s: &str) -> Option<T> {
    s.parse().ok()
}

fn flag(s: &str) -> Option<bool> {
    match s {
        "0" => Some(false),
        "1" => Some(true),
        _ => None,
    }
}

fn id(s: &str) -> Option<EntityId> {
    num(s).map(EntityId)
}

fn parse_entry(line: &str) -> Option<Entry> {
    let f: Vec<&str> = line.split('\t').collect();
    let entry = match (f[0], f.len()) {
        ("attack", 7) => Entry::Attack {
            device: id(f[1])?,
            profile: FieldSet::from_bits(num(f[2])?)?,
            disposition: match f[3] {
                "exploited" => Disposition::Exploited,
                "malicious" => Disposition::Malicious,
                _ => return None,
            },
            discovery_at: num(f[4])?,
            exploit_at: num(f[5])?,
            patch_available_at: num(f[6])?,
        },
        ("compromise", 4) => Entry::Compromise {
            at: num(f[1])?,
            device: id(f[2])?,
            epoch: num(f[3])?,
        },
        ("send", 9) => Entry::Send {
            sent_at: num(f[1])?,
            kind: MessageKind::parse(f[2])?,
            src: id(f[3])?,
            dst: id(f[4])?,
            device: id(f[5])?,
            payload_bytes: num(f[6])?,
            hops: num(f[7])?,
            delivered: flag(f[8])?,
        },
        ("decide", 7) => Entry::Decide {
            at: num(f[1])?,
            device: id(f[2])?,
            tick: num(f[3])?,
            tick_at: num(f[4])?,
            verdict: match f[5] {
                "consistent" => Verdict::Consistent,
                v => Verdict::Threat(ThreatCause::parse(v.strip_prefix("threat:")?)?),
            },
            compromised: flag(f[6])?,
        },
        ("round", 3) => Entry::Round {
            at: num(f[1])?,
            device: id(f[2])?,
        },
        ("patch", 4) => Entry::Patch {
            at: num(f[1])?,
            device: id(f[2])?,
            applied: flag(f[3])?,
        },
        ("resolve", 5) => Entry::Resolve {
            at: num(f[1])?,
            device: id(f[2])?,
            outcome: match f[3] {
                "reregistered" => Outcome::ReRegistered,
                "eliminated" => Outcome::Eliminated,
                _ => return None,
            },
            opened_at: num(f[4])?,
        },
        _ => return None,
    };
    Some(entry)
}
