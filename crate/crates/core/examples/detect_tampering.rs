//! Runs the CDS matching rule against each single-field tamper, a stale
//! counter and a missing LDS report.
//!
//! cargo run --example detect_tampering

use dds_sim::context::{
    new_counter, ContextField, ContextRecord, DeviceSignature, EntityId, MemoryRange, Route,
    TrafficType,
};
use dds_sim::detection::{
    build_graph, expected_counter_for, mutual_exclusion_check, required_sources, Report,
    ReportSource,
};

fn main() {
    let (id, seed, epoch) = (EntityId(5), 9, 4);
    let base = ContextRecord::new(
        DeviceSignature {
            id: 1234,
            issued_at: 0,
        },
        new_counter(seed, id),
        TrafficType::Control,
        24,
        MemoryRange {
            min_packet_bytes: 20,
            max_packet_bytes: 300,
        },
        Route::ViaLds,
    )
    .unwrap();
    let stored = build_graph(id, &base, 4).unwrap();
    let expected = expected_counter_for(id, epoch, seed);
    let honest = base.with_counter(expected);
    let required = required_sources(Route::ViaLds, true);

    let verdict = |rec: &ContextRecord, with_lds: bool| {
        let mut reports = vec![Report {
            source: ReportSource::Hgw,
            graph: build_graph(id, rec, 4).unwrap(),
        }];
        if with_lds {
            reports.push(Report {
                source: ReportSource::Lds,
                graph: build_graph(id, rec, 4).unwrap(),
            });
        }
        mutual_exclusion_check(&stored, &reports, expected, required).unwrap()
    };

    println!("{:<16} {:?}", "honest", verdict(&honest, true));
    for field in ContextField::ALL {
        let mut r = honest;
        match field {
            ContextField::Sg => r.signature.id += 1,
            ContextField::Uc => r.counter.value = r.counter.value.wrapping_add(1),
            ContextField::Tp => r.traffic_type = TrafficType::Media,
            ContextField::Hl => r.header_length_bits = 32,
            ContextField::Mr => r.memory_range.max_packet_bytes = 9000,
            ContextField::Rt => r.route = Route::DirectCds,
        }
        println!(
            "{:<16} {:?}",
            format!("tampered {field}"),
            verdict(&r, true)
        );
    }
    let stale = base.with_counter(expected_counter_for(id, epoch - 1, seed));
    println!("{:<16} {:?}", "stale counter", verdict(&stale, true));
    println!("{:<16} {:?}", "no LDS report", verdict(&honest, false));
}
