//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use dds_sim::cli;
use dds_sim::config::{LatencyTable, Mode, ModeSelection, RouteMix, ScenarioConfig};
use dds_sim::context::{
    ContextField, ContextRecord, DeviceSignature, EntityId, FieldSet, MemoryRange, Route,
    TrafficType,
};
use dds_sim::detection::{
    build_graph, expected_counter_for, mutual_exclusion_check, required_sources, Report,
    ReportSource, ThreatCause, Verdict,
};
use dds_sim::metrics::{compare_modes, RunMetrics};
use dds_sim::sim::{RunOutput, Scenario};
use dds_sim::transcript::{Entry, Transcript};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_config(rng: &mut ChaCha8Rng, attacker_fraction: f64) -> ScenarioConfig {
    let a = rng.gen_range(0..=20u32);
    let b = rng.gen_range(0..=20 - a);
    let period = rng.gen_range(1_000..=8_000u64);
    ScenarioConfig {
        seed: rng.gen(),
        mode: ModeSelection::Both,
        devices: rng.gen_range(1..=40),
        attacker_fraction,
        malicious_share_of_attackers: rng.gen_range(0.0..=1.0),
        stealth_share_of_attackers: 0.0,
        route_mix: RouteMix {
            via_lds: f64::from(a) / 20.0,
            via_sds: f64::from(b) / 20.0,
            direct_cds: f64::from(20 - a - b) / 20.0,
        },
        period_ms: period,
        duration_ms: period * rng.gen_range(4..=12),
        stages: rng.gen_range(2..=8),
        gateway_fanout: rng.gen_range(1..=30),
        patch_efficacy: rng.gen_range(0.0..=1.0),
        loss_rate: 0.0,
        latency: LatencyTable {
            device_gateway_ms: rng.gen_range(1..=20),
            gateway_cds_ms: rng.gen_range(1..=80),
            graph_build_ms: rng.gen_range(0..=5),
            cds_check_ms: rng.gen_range(0..=5),
        },
        ..ScenarioConfig::default()
    }
}

fn fix_mix(mut cfg: ScenarioConfig) -> ScenarioConfig {
    // Twentieths can miss 1.0 by an ulp; fold the error into the last share.
    let m = &mut cfg.route_mix;
    m.direct_cds = 1.0 - m.via_lds - m.via_sds;
    if m.direct_cds < 0.0 {
        m.direct_cds = 0.0;
    }
    cfg
}

fn both(s: &Scenario) -> (RunOutput, RunOutput) {
    (s.run(Mode::Centralized), s.run(Mode::Distributed))
}

fn threat_decides(t: &Transcript) -> usize {
    t.entries
        .iter()
        .filter(|e| matches!(e, Entry::Decide { verdict, .. } if verdict.is_threat()))
        .count()
}

// 1. Default compare lands on the calibration targets.
fn calibration() -> Outcome {
    let cfg = ScenarioConfig::default();
    let s = Scenario::build(&cfg).map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let c = s.run(Mode::Centralized);
    let tc = t0.elapsed();
    let t1 = Instant::now();
    let d = s.run(Mode::Distributed);
    let td = t1.elapsed();
    let r = compare_modes(&c.metrics, &d.metrics);
    let detail = format!(
        "cost -{:.2}% (want 28..38), bytes -{:.2}% (want 16..26), runtime {:.2?}/{:.2?}",
        r.cost_reduction_pct, r.overhead_reduction_pct, tc, td
    );
    ensure((28.0..=38.0).contains(&r.cost_reduction_pct), || {
        detail.clone()
    })?;
    ensure((16.0..=26.0).contains(&r.overhead_reduction_pct), || {
        detail.clone()
    })?;
    let limit = Duration::from_secs(10);
    ensure(tc < limit && td < limit, || detail.clone())?;
    Ok(detail)
}

fn check_trend(rows: &[RunMetrics]) -> Result<(), String> {
    let mut last_cost_gap = i64::MIN;
    let mut last_byte_gap = i64::MIN;
    for pair in rows.chunks(2) {
        let (c, d) = (&pair[0], &pair[1]);
        ensure(
            c.mode == Mode::Centralized && d.mode == Mode::Distributed,
            || "sweep rows out of order".into(),
        )?;
        let n = c.devices;
        ensure(d.cost.total_ms < c.cost.total_ms, || {
            format!("cost not lower at {n}")
        })?;
        ensure(d.overhead.bytes < c.overhead.bytes, || {
            format!("bytes not lower at {n}")
        })?;
        let cg = c.cost.total_ms as i64 - d.cost.total_ms as i64;
        let bg = c.overhead.bytes as i64 - d.overhead.bytes as i64;
        ensure(cg >= last_cost_gap, || format!("cost gap shrank at {n}"))?;
        ensure(bg >= last_byte_gap, || format!("byte gap shrank at {n}"))?;
        last_cost_gap = cg;
        last_byte_gap = bg;
    }
    Ok(())
}

// 2. Distributed stays below centralized across the sweep, gaps widen.
fn trend() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let rows = cli::cmd_sweep(
        &ScenarioConfig::default(),
        &cli::DEFAULT_SWEEP,
        dir.path(),
        false,
    )
    .map_err(|e| e.to_string())?;
    ensure(rows.len() == 20, || format!("{} sweep rows", rows.len()))?;
    check_trend(&rows)?;
    let seeds = [1u64, 7, 1234, 0xdead_beef];
    seeds.par_iter().try_for_each(|seed| {
        let mut rows = Vec::new();
        for n in cli::DEFAULT_SWEEP {
            let cfg = ScenarioConfig {
                seed: *seed,
                devices: n,
                ..ScenarioConfig::default()
            };
            let s = Scenario::build(&cfg).map_err(|e| e.to_string())?;
            let (c, d) = both(&s);
            rows.push(c.metrics);
            rows.push(d.metrics);
        }
        check_trend(&rows).map_err(|e| format!("seed {seed}: {e}"))
    })?;
    Ok(format!("10 points x 2 modes, seeds 42 and {seeds:?}"))
}

// 3. Clean fleets never raise a threat.
fn soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let configs: Vec<ScenarioConfig> = (0..1000)
        .map(|_| fix_mix(random_config(&mut rng, 0.0)))
        .collect();
    configs.par_iter().try_for_each(|cfg| {
        let s = Scenario::build(cfg).map_err(|e| format!("{e}: {cfg:?}"))?;
        let (c, d) = both(&s);
        for out in [&c, &d] {
            let threats = threat_decides(&out.transcript);
            ensure(threats == 0 && out.metrics.rounds.opened == 0, || {
                format!(
                    "seed {} {}: {threats} threats, {} rounds",
                    cfg.seed, out.metrics.mode, out.metrics.rounds.opened
                )
            })?;
        }
        Ok::<_, String>(())
    })?;
    Ok("1000 scenarios x 2 modes, 0 threats, 0 rounds".into())
}

// 4. Every non-empty tamper profile is caught within two periods.
fn completeness() -> Outcome {
    let jobs: Vec<(u8, u64)> = (1..64u8)
        .flat_map(|p| (0..20u64).map(move |s| (p, s)))
        .collect();
    let worst = jobs
        .par_iter()
        .map(|(bits, seed)| {
            let cfg = ScenarioConfig {
                seed: *seed,
                devices: 10,
                attacker_fraction: 0.1,
                ..ScenarioConfig::default()
            };
            let s = Scenario::build(&cfg).map_err(|e| e.to_string())?;
            let mut plan = s.attacks[0];
            plan.profile = FieldSet::from_bits(*bits).expect("six bits");
            let s = s.with_attacks(vec![plan]).map_err(|e| e.to_string())?;
            let mut worst = 0;
            for mode in [Mode::Centralized, Mode::Distributed] {
                let out = s.run(mode);
                let first = out.transcript.entries.iter().find_map(|e| match e {
                    Entry::Decide {
                        at,
                        device,
                        verdict,
                        ..
                    } if *device == plan.device && verdict.is_threat() => Some(*at),
                    _ => None,
                });
                let at = first.ok_or_else(|| {
                    format!("profile {bits:06b} seed {seed} {mode}: never flagged")
                })?;
                let lag = at - plan.timeline.exploit_at;
                ensure(lag <= 2 * cfg.period_ms, || {
                    format!("profile {bits:06b} seed {seed} {mode}: flagged after {lag} ms")
                })?;
                worst = worst.max(lag);
            }
            Ok::<_, String>(worst)
        })
        .try_reduce(|| 0, |a, b| Ok(a.max(b)))?;
    Ok(format!(
        "63 profiles x 20 seeds x 2 modes, worst lag {worst} ms (limit 10000)"
    ))
}

fn base_record(i: u64, route: Route) -> ContextRecord {
    ContextRecord::new(
        DeviceSignature {
            id: 0x1000 + i,
            issued_at: i,
        },
        expected_counter_for(EntityId(i), 0, 5),
        TrafficType::ALL[(i % 4) as usize],
        8 * (1 + (i % 4) as u32),
        MemoryRange {
            min_packet_bytes: 16 + i as u32,
            max_packet_bytes: 600 + i as u32,
        },
        route,
    )
    .expect("valid")
}

fn tamper(mut r: ContextRecord, field: ContextField) -> ContextRecord {
    match field {
        ContextField::Sg => r.signature.id ^= 1,
        ContextField::Uc => r.counter.value = r.counter.value.wrapping_add(1),
        ContextField::Tp => {
            r.traffic_type = TrafficType::from_index(r.traffic_type.index() ^ 1).expect("2 bits")
        }
        ContextField::Hl => r.header_length_bits += 8,
        ContextField::Mr => r.memory_range.max_packet_bytes += 1,
        ContextField::Rt => r.route = Route::from_index((r.route.index() + 1) % 3).expect("mod 3"),
    }
    r
}

/// Field-by-field brute force over raw records, independent of graphs and
/// fingerprints.
fn oracle(
    reference: &ContextRecord,
    reports: &[(ReportSource, ContextRecord)],
    required: &[ReportSource],
) -> Verdict {
    let priority = [
        ThreatCause::CounterMismatch,
        ThreatCause::SignatureMismatch,
        ThreatCause::TrafficMismatch,
        ThreatCause::HeaderMismatch,
        ThreatCause::MemoryMismatch,
        ThreatCause::RouteMismatch,
    ];
    let mut found = Vec::new();
    for (_, r) in reports {
        if r.counter.value != reference.counter.value {
            found.push(ThreatCause::CounterMismatch);
        }
        if r.signature != reference.signature {
            found.push(ThreatCause::SignatureMismatch);
        }
        if r.traffic_type != reference.traffic_type {
            found.push(ThreatCause::TrafficMismatch);
        }
        if r.header_length_bits != reference.header_length_bits {
            found.push(ThreatCause::HeaderMismatch);
        }
        if r.memory_range != reference.memory_range {
            found.push(ThreatCause::MemoryMismatch);
        }
        if r.route != reference.route {
            found.push(ThreatCause::RouteMismatch);
        }
    }
    if let Some(c) = priority.iter().find(|c| found.contains(c)) {
        return Verdict::Threat(*c);
    }
    let missing = reports.is_empty()
        || required
            .iter()
            .any(|s| !reports.iter().any(|(src, _)| src == s));
    if missing {
        Verdict::Threat(ThreatCause::MissingReport)
    } else {
        Verdict::Consistent
    }
}

// 5. Matching rule equals the brute-force oracle on every combination.
fn oracle_equivalence() -> Outcome {
    // Bits: 0 tamper one context field, 1 stale counter, 2 drop the required
    // report, 3 add a tampered report from a non-required observer.
    let non_counter = [
        ContextField::Sg,
        ContextField::Tp,
        ContextField::Hl,
        ContextField::Mr,
        ContextField::Rt,
    ];
    let mut cases = 0;
    let mut threats = 0;
    for route in Route::ALL {
        for distributed in [false, true] {
            let required = required_sources(route, distributed);
            for i in 0..10u64 {
                let id = EntityId(i);
                let registered = base_record(i, route);
                let stored = build_graph(id, &registered, 4).map_err(|e| e.to_string())?;
                let expected = expected_counter_for(id, 3, 5);
                let reference = registered.with_counter(expected);
                let f = non_counter[(i % 5) as usize];
                let g = non_counter[((i + 2) % 5) as usize];
                for mask in 0..16u8 {
                    let mut primary = reference;
                    if mask & 1 != 0 {
                        primary = tamper(primary, f);
                    }
                    if mask & 2 != 0 {
                        primary = tamper(primary, ContextField::Uc);
                    }
                    let mut raw = Vec::new();
                    if mask & 4 == 0 {
                        raw.push((required[0], primary));
                    }
                    if mask & 8 != 0 {
                        raw.push((ReportSource::Hgw, tamper(reference, g)));
                    }
                    let reports: Vec<Report> = raw
                        .iter()
                        .map(|(s, r)| Report {
                            source: *s,
                            graph: build_graph(id, r, 4).expect("valid"),
                        })
                        .collect();
                    let got = mutual_exclusion_check(&stored, &reports, expected, required)
                        .map_err(|e| e.to_string())?;
                    let want = oracle(&reference, &raw, required);
                    ensure(got == want, || {
                        format!("{route} distributed={distributed} device {i} mask {mask:04b}: {got:?} vs {want:?}")
                    })?;
                    cases += 1;
                    threats += usize::from(got.is_threat());
                }
            }
        }
    }
    Ok(format!(
        "{cases} cases agree ({threats} threats, {} consistent)",
        cases - threats
    ))
}

fn attacker_configs() -> Vec<ScenarioConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut v = vec![ScenarioConfig::default()];
    for _ in 0..60 {
        let f = rng.gen_range(0.1..=0.6);
        v.push(fix_mix(random_config(&mut rng, f)));
    }
    v
}

// 6. Rounds resolve in time; eliminated devices stay out; re-registered
// honest devices stay clean.
fn liveness_safety() -> Outcome {
    let configs = attacker_configs();
    let totals = configs
        .par_iter()
        .map(|cfg| {
            let s = Scenario::build(cfg).map_err(|e| e.to_string())?;
            let (c, d) = both(&s);
            let mut tally = (0u64, 0u64, 0u64);
            for out in [c, d] {
                let v = out.violations();
                ensure(v.is_empty(), || {
                    format!("seed {} {}: {v:?}", cfg.seed, out.metrics.mode)
                })?;
                let r = out.metrics.rounds;
                ensure(
                    r.opened == r.re_registered + r.eliminated
                        && out.final_state.unresolved_rounds == 0,
                    || {
                        format!(
                            "seed {} {}: {r:?} with {} open",
                            cfg.seed, out.metrics.mode, out.final_state.unresolved_rounds
                        )
                    },
                )?;
                tally = (
                    tally.0 + r.opened,
                    tally.1 + r.re_registered,
                    tally.2 + r.eliminated,
                );
            }
            Ok::<_, String>(tally)
        })
        .try_reduce(|| (0, 0, 0), |a, b| Ok((a.0 + b.0, a.1 + b.1, a.2 + b.2)))?;
    Ok(format!(
        "{} runs, {} rounds all resolved within 4 periods ({} re-registered, {} eliminated)",
        2 * configs.len(),
        totals.0,
        totals.1,
        totals.2
    ))
}

// 7. Same config, same bytes; persisted transcripts re-score exactly.
fn determinism() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut configs = vec![ScenarioConfig::default()];
    configs.extend((0..10).map(|_| fix_mix(random_config(&mut rng, 0.3))));
    for cfg in &configs {
        for mode in [Mode::Centralized, Mode::Distributed] {
            let a = Scenario::build(cfg).map_err(|e| e.to_string())?.run(mode);
            let b = Scenario::build(cfg).map_err(|e| e.to_string())?.run(mode);
            ensure(a.transcript.to_text() == b.transcript.to_text(), || {
                format!("seed {} {mode}: transcripts differ", cfg.seed)
            })?;
            ensure(a.metrics == b.metrics, || {
                format!("seed {} {mode}: metrics differ", cfg.seed)
            })?;
        }
    }
    let dirs = [tempfile::tempdir(), tempfile::tempdir()];
    let mut csvs = Vec::new();
    for dir in &dirs {
        let dir = dir.as_ref().map_err(|e| e.to_string())?;
        let cfg = ScenarioConfig {
            seed: 7,
            ..ScenarioConfig::default()
        };
        let metrics = cli::cmd_run(&cfg, dir.path(), true).map_err(|e| e.to_string())?;
        for m in &metrics {
            let path = dir.path().join(format!("transcript-{}.tsv", m.mode));
            let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
            let parsed = Transcript::parse(&text).map_err(|e| e.to_string())?;
            ensure(RunMetrics::from_transcript(&parsed) == *m, || {
                format!("{}: persisted transcript re-scores differently", m.mode)
            })?;
        }
        csvs.push(std::fs::read(dir.path().join("run.csv")).map_err(|e| e.to_string())?);
    }
    ensure(csvs[0] == csvs[1], || {
        "run.csv differs between identical runs".into()
    })?;
    Ok(format!(
        "{} configs x 2 modes byte-identical; CSV and re-scored transcripts match",
        configs.len()
    ))
}

// 8. Both modes flag exactly the same devices.
fn mode_invariance() -> Outcome {
    let configs = attacker_configs();
    let flagged = configs
        .par_iter()
        .map(|cfg| {
            let s = Scenario::build(cfg).map_err(|e| e.to_string())?;
            let (c, d) = both(&s);
            let sc = RunMetrics::suspects(&c.transcript);
            let sd = RunMetrics::suspects(&d.transcript);
            ensure(sc == sd, || format!("seed {}: {sc:?} vs {sd:?}", cfg.seed))?;
            let visible: BTreeSet<EntityId> = s
                .attacks
                .iter()
                .filter(|a| !a.profile.is_empty())
                .map(|a| a.device)
                .collect();
            ensure(sc == visible, || {
                format!("seed {}: suspects are not the attackers", cfg.seed)
            })?;
            Ok::<_, String>(sc.len())
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(format!(
        "{} paired runs, {flagged} suspects, identical sets",
        configs.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("1 calibration", calibration),
        ("2 trend", trend),
        ("3 soundness", soundness),
        ("4 completeness", completeness),
        ("5 oracle equivalence", oracle_equivalence),
        ("6 liveness and safety", liveness_safety),
        ("7 determinism", determinism),
        ("8 mode invariance", mode_invariance),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let result = panic::catch_unwind(AssertUnwindSafe(f))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        match result {
            Ok(detail) => println!("PASS  criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
