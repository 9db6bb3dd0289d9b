//! Three devices: one exploited and patched, one malicious, one honest.
//! Prints the protocol traffic and outcome for each attacked device.
//!
//! cargo run --example critical_protocol

use dds_sim::context::{ContextField, EntityId, FieldSet};
use dds_sim::roles::Disposition;
use dds_sim::sim::{AttackPlan, AttackTimeline, Scenario};
use dds_sim::transcript::Entry;
use dds_sim::{Mode, ScenarioConfig};

fn attack(device: u64, field: ContextField, disposition: Disposition) -> AttackPlan {
    AttackPlan {
        device: EntityId(device),
        profile: FieldSet::from_iter([field]),
        disposition,
        timeline: AttackTimeline {
            discovery_at: 6_000,
            exploit_at: 7_000,
            patch_available_at: 8_000,
            patch_applied_at: None,
        },
    }
}

fn main() {
    let cfg = ScenarioConfig {
        devices: 3,
        duration_ms: 40_000,
        ..ScenarioConfig::default()
    };
    let scenario = Scenario::build(&cfg)
        .unwrap()
        .with_attacks(vec![
            attack(1, ContextField::Tp, Disposition::Exploited),
            attack(2, ContextField::Uc, Disposition::Malicious),
        ])
        .unwrap();
    for d in &scenario.topology.devices {
        println!("device {} route {}", d.id, d.route);
    }
    let out = scenario.run(Mode::Distributed);
    assert!(out.violations().is_empty());
    for e in &out.transcript.entries {
        match e {
            Entry::Decide {
                at,
                device,
                verdict,
                ..
            } if verdict.is_threat() => {
                println!("{at:>6}  {device}  flagged: {verdict:?}")
            }
            Entry::Round { at, device } => println!("{at:>6}  {device}  round opened"),
            Entry::Send {
                sent_at,
                kind,
                src,
                dst,
                device,
                ..
            } if !matches!(
                kind.as_str(),
                "ContextShare" | "DigestReport" | "PeriodStart"
            ) =>
            {
                println!("{sent_at:>6}  {device}  {kind} {src} -> {dst}")
            }
            Entry::Patch {
                at,
                device,
                applied,
            } => {
                println!("{at:>6}  {device}  patch applied={applied}")
            }
            Entry::Resolve {
                at,
                device,
                outcome,
                ..
            } => {
                println!("{at:>6}  {device}  resolved: {outcome:?}")
            }
            _ => {}
        }
    }
}
