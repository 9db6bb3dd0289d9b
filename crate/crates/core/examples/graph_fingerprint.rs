//! Builds a context graph, prints its shape and fingerprint, and shows that
//! the fingerprint ignores edge order but not edge content.
//!
//! cargo run --example graph_fingerprint

use dds_sim::context::{
    new_counter, ContextField, ContextRecord, DeviceSignature, EntityId, MemoryRange, Route,
    TrafficType,
};
use dds_sim::detection::{build_graph, ContextGraph};

fn main() {
    let id = EntityId(3);
    let record = ContextRecord::new(
        DeviceSignature {
            id: 0xC0FFEE,
            issued_at: 0,
        },
        new_counter(1, id),
        TrafficType::Telemetry,
        16,
        MemoryRange {
            min_packet_bytes: 32,
            max_packet_bytes: 512,
        },
        Route::ViaLds,
    )
    .unwrap();
    let g = build_graph(id, &record, 4).unwrap();
    println!(
        "{} stages, {} edges, fingerprint {}",
        g.vertices().len(),
        g.edges().len(),
        g.fingerprint()
    );
    for e in g.edges() {
        match &e.label {
            Some(l) => println!(
                "  {} -> {}  {:<2} {:02x?}",
                e.from, e.to, l.field, l.encoded_value
            ),
            None => println!("  {} -> {}", e.from, e.to),
        }
    }

    let (id, vertices, mut edges) = g.clone().into_parts();
    edges.reverse();
    let reversed = ContextGraph::from_parts(id, vertices.clone(), edges.clone()).unwrap();
    println!("reversed edge order: {}", reversed.fingerprint());

    let label = edges
        .iter_mut()
        .filter_map(|e| e.label.as_mut())
        .find(|l| l.field == ContextField::Hl)
        .unwrap();
    label.encoded_value[0] ^= 1;
    let flipped = ContextGraph::from_parts(id, vertices, edges).unwrap();
    println!("one bit of Hl flipped: {}", flipped.fingerprint());
}
