//! Strategic context graphs and the CDS matching rule.
//!
//! A context graph has one vertex per processing stage of the device, a
//! simple path through the stages, and one self-descriptor edge per context
//! field carrying that field's encoded value. Graphs are compared through a
//! canonical 128-bit fingerprint; on a mismatch the labels are compared
//! field by field to attribute a cause.

use std::fmt;

use sha2::{Digest, Sha256};

use crate::context::{
    advance_counter, new_counter, next_delta, ContextField, ContextRecord, EntityId, Route,
    UpdateCounter,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StageKind {
    Sense,
    Process,
    Encode,
    Transmit,
    Receive,
    Actuate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ProcedureStage {
    pub index: u32,
    pub kind: StageKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ContextEdgeLabel {
    pub field: ContextField,
    pub encoded_value: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GraphEdge {
    pub from: u32,
    pub to: u32,
    pub label: Option<ContextEdgeLabel>,
}

/// Canonical 128-bit graph digest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fingerprint(pub [u8; 16]);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DetectionError {
    #[error("a context graph needs at least 2 stages, got {0}")]
    TooFewStages(u32),
    #[error("invalid context record: {0}")]
    InvalidRecord(#[from] crate::context::ContextError),
    #[error("malformed graph: {0}")]
    MalformedGraph(&'static str),
    #[error("report for device {found} checked against stored graph of device {expected}")]
    DeviceMismatch { expected: EntityId, found: EntityId },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextGraph {
    device_id: EntityId,
    vertices: Vec<ProcedureStage>,
    edges: Vec<GraphEdge>,
    fingerprint: Fingerprint,
}

/// Stage layout for a pipeline of `n` stages: sense first, transmit last,
/// the middle cycling through the remaining kinds.
pub fn stage_layout(n: u32) -> Vec<ProcedureStage> {
    const MIDDLE: [StageKind; 4] = [
        StageKind::Process,
        StageKind::Encode,
        StageKind::Receive,
        StageKind::Actuate,
    ];
    (0..n)
        .map(|index| {
            let kind = if index == 0 {
                StageKind::Sense
            } else if index == n - 1 {
                StageKind::Transmit
            } else {
                MIDDLE[(index as usize - 1) % MIDDLE.len()]
            };
            ProcedureStage { index, kind }
        })
        .collect()
}

fn encode_field(record: &ContextRecord, field: ContextField) -> Vec<u8> {
    let mut out = Vec::with_capacity(16);
    match field {
        ContextField::Sg => {
            out.extend_from_slice(&record.signature.id.to_le_bytes());
            out.extend_from_slice(&record.signature.issued_at.to_le_bytes());
        }
        ContextField::Uc => out.extend_from_slice(&record.counter.value.to_le_bytes()),
        ContextField::Tp => out.push(record.traffic_type.index()),
        ContextField::Hl => out.extend_from_slice(&record.header_length_bits.to_le_bytes()),
        ContextField::Mr => {
            out.extend_from_slice(&record.memory_range.min_packet_bytes.to_le_bytes());
            out.extend_from_slice(&record.memory_range.max_packet_bytes.to_le_bytes());
        }
        ContextField::Rt => out.push(record.route.index()),
    }
    out
}

/// Builds the strategic context graph of `record` over `stages` procedures.
pub fn build_graph(
    device_id: EntityId,
    record: &ContextRecord,
    stages: u32,
) -> Result<ContextGraph, DetectionError> {
    if stages < 2 {
        return Err(DetectionError::TooFewStages(stages));
    }
    record.validate()?;
    let vertices = stage_layout(stages);
    let mut edges: Vec<GraphEdge> = (0..stages - 1)
        .map(|i| GraphEdge {
            from: i,
            to: i + 1,
            label: None,
        })
        .collect();
    for (k, field) in ContextField::ALL.into_iter().enumerate() {
        let at = k as u32 % stages;
        edges.push(GraphEdge {
            from: at,
            to: at,
            label: Some(ContextEdgeLabel {
                field,
                encoded_value: encode_field(record, field),
            }),
        });
    }
    ContextGraph::from_parts(device_id, vertices, edges)
}

impl ContextGraph {
    /// Assembles a graph from explicit parts, checking the structural
    /// invariants and computing the fingerprint.
    pub fn from_parts(
        device_id: EntityId,
        vertices: Vec<ProcedureStage>,
        edges: Vec<GraphEdge>,
    ) -> Result<Self, DetectionError> {
        if vertices.len() < 2 {
            return Err(DetectionError::TooFewStages(vertices.len() as u32));
        }
        if vertices
            .iter()
            .enumerate()
            .any(|(i, v)| v.index as usize != i)
        {
            return Err(DetectionError::MalformedGraph(
                "stage indices not consecutive",
            ));
        }
        let n = vertices.len() as u32;
        let mut path = 0;
        let mut seen = [false; 6];
        for e in &edges {
            if e.from >= n || e.to >= n {
                return Err(DetectionError::MalformedGraph("edge endpoint out of range"));
            }
            match &e.label {
                None if e.to == e.from + 1 => path += 1,
                None => {
                    return Err(DetectionError::MalformedGraph(
                        "unlabeled edge off the path",
                    ))
                }
                Some(l) => {
                    let slot = &mut seen[l.field as usize];
                    if *slot {
                        return Err(DetectionError::MalformedGraph("context field repeated"));
                    }
                    *slot = true;
                }
            }
        }
        if path != n - 1 || seen.iter().any(|s| !s) {
            return Err(DetectionError::MalformedGraph(
                "path or context edges incomplete",
            ));
        }
        let mut graph = ContextGraph {
            device_id,
            vertices,
            edges,
            fingerprint: Fingerprint([0; 16]),
        };
        graph.fingerprint = fingerprint(&graph);
        Ok(graph)
    }

    pub fn device_id(&self) -> EntityId {
        self.device_id
    }

    pub fn vertices(&self) -> &[ProcedureStage] {
        &self.vertices
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    pub fn into_parts(self) -> (EntityId, Vec<ProcedureStage>, Vec<GraphEdge>) {
        (self.device_id, self.vertices, self.edges)
    }

    /// Cached fingerprint.
    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn context_edge_count(&self) -> usize {
        self.edges.iter().filter(|e| e.label.is_some()).count()
    }

    pub fn label(&self, field: ContextField) -> &ContextEdgeLabel {
        self.edges
            .iter()
            .filter_map(|e| e.label.as_ref())
            .find(|l| l.field == field)
            .expect("every graph carries all six context fields")
    }

    /// Counter value carried on the Uc edge.
    pub fn counter_value(&self) -> u32 {
        let bytes = &self.label(ContextField::Uc).encoded_value;
        u32::from_le_bytes(bytes[..4].try_into().expect("Uc label is 4 bytes"))
    }

    /// Copy of this graph with the Uc label replaced by `counter`.
    pub fn with_counter(&self, counter: UpdateCounter) -> ContextGraph {
        let mut graph = self.clone();
        for e in &mut graph.edges {
            if let Some(l) = &mut e.label {
                if l.field == ContextField::Uc {
                    l.encoded_value = counter.value.to_le_bytes().to_vec();
                }
            }
        }
        graph.fingerprint = fingerprint(&graph);
        graph
    }
}

/// Digest over the device id, the stage list and the sorted edge list.
pub fn fingerprint(graph: &ContextGraph) -> Fingerprint {
    let mut encoded: Vec<Vec<u8>> = graph
        .edges
        .iter()
        .map(|e| {
            let mut b = Vec::with_capacity(24);
            b.extend_from_slice(&e.from.to_le_bytes());
            b.extend_from_slice(&e.to.to_le_bytes());
            match &e.label {
                None => b.push(0xff),
                Some(l) => {
                    b.push(l.field as u8);
                    b.extend_from_slice(&(l.encoded_value.len() as u32).to_le_bytes());
                    b.extend_from_slice(&l.encoded_value);
                }
            }
            b
        })
        .collect();
    encoded.sort_unstable();

    let mut h = Sha256::new();
    h.update(b"dds-context-graph/v1");
    h.update(graph.device_id.0.to_le_bytes());
    h.update((graph.vertices.len() as u32).to_le_bytes());
    for v in &graph.vertices {
        h.update([v.kind as u8]);
    }
    h.update((encoded.len() as u32).to_le_bytes());
    for e in &encoded {
        h.update((e.len() as u32).to_le_bytes());
        h.update(e);
    }
    let digest = h.finalize();
    let mut out = [0u8; 16];
    out.copy_from_slice(&digest[..16]);
    Fingerprint(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ReportSource {
    Device,
    Lds,
    Sds,
    Hgw,
}

/// Threat causes, declared in the priority order used to pick the
/// reported cause.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ThreatCause {
    CounterMismatch,
    SignatureMismatch,
    TrafficMismatch,
    HeaderMismatch,
    MemoryMismatch,
    RouteMismatch,
    MissingReport,
}

impl ThreatCause {
    pub fn for_field(field: ContextField) -> ThreatCause {
        match field {
            ContextField::Sg => ThreatCause::SignatureMismatch,
            ContextField::Uc => ThreatCause::CounterMismatch,
            ContextField::Tp => ThreatCause::TrafficMismatch,
            ContextField::Hl => ThreatCause::HeaderMismatch,
            ContextField::Mr => ThreatCause::MemoryMismatch,
            ContextField::Rt => ThreatCause::RouteMismatch,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ThreatCause::CounterMismatch => "counter",
            ThreatCause::SignatureMismatch => "signature",
            ThreatCause::TrafficMismatch => "traffic",
            ThreatCause::HeaderMismatch => "header",
            ThreatCause::MemoryMismatch => "memory",
            ThreatCause::RouteMismatch => "route",
            ThreatCause::MissingReport => "missing",
        }
    }

    pub fn parse(s: &str) -> Option<ThreatCause> {
        [
            ThreatCause::CounterMismatch,
            ThreatCause::SignatureMismatch,
            ThreatCause::TrafficMismatch,
            ThreatCause::HeaderMismatch,
            ThreatCause::MemoryMismatch,
            ThreatCause::RouteMismatch,
            ThreatCause::MissingReport,
        ]
        .into_iter()
        .find(|c| c.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Consistent,
    Threat(ThreatCause),
}

impl Verdict {
    pub fn is_threat(self) -> bool {
        matches!(self, Verdict::Threat(_))
    }

    pub fn cause(self) -> Option<ThreatCause> {
        match self {
            Verdict::Consistent => None,
            Verdict::Threat(c) => Some(c),
        }
    }
}

/// One subordinate's view of a device for the current period.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub source: ReportSource,
    pub graph: ContextGraph,
}

/// Sources whose reports the CDS needs before it can clear a device.
pub fn required_sources(route: Route, distributed: bool) -> &'static [ReportSource] {
    match (route, distributed) {
        (Route::ViaLds, true) => &[ReportSource::Lds],
        (Route::ViaSds, true) => &[ReportSource::Sds],
        _ => &[ReportSource::Device],
    }
}

/// The CDS matching rule: every independent view must agree with the
/// authoritative model at the expected counter, and every required view
/// must be present. Any disagreement or absence is a threat.
pub fn mutual_exclusion_check(
    stored: &ContextGraph,
    reports: &[Report],
    expected_counter: UpdateCounter,
    required: &[ReportSource],
) -> Result<Verdict, DetectionError> {
    if let Some(r) = reports
        .iter()
        .find(|r| r.graph.device_id != stored.device_id)
    {
        return Err(DetectionError::DeviceMismatch {
            expected: stored.device_id,
            found: r.graph.device_id,
        });
    }
    let reference = stored.with_counter(expected_counter);

    let mut worst: Option<ThreatCause> = None;
    let mut note = |c: ThreatCause| worst = Some(worst.map_or(c, |w| w.min(c)));
    for report in reports {
        let g = &report.graph;
        if g.counter_value() != expected_counter.value {
            note(ThreatCause::CounterMismatch);
        }
        if g.fingerprint == reference.fingerprint {
            continue;
        }
        if g.vertices != reference.vertices {
            // A changed pipeline means the device is not the one registered.
            note(ThreatCause::SignatureMismatch);
        }
        for field in ContextField::ALL {
            if g.label(field) != reference.label(field) {
                note(ThreatCause::for_field(field));
            }
        }
    }
    if let Some(c) = worst {
        return Ok(Verdict::Threat(c));
    }
    if required
        .iter()
        .any(|src| !reports.iter().any(|r| r.source == *src))
        || reports.is_empty()
    {
        return Ok(Verdict::Threat(ThreatCause::MissingReport));
    }
    Ok(Verdict::Consistent)
}

/// Counter a legitimate device holds at `epoch`, as modeled by any of the
/// CDS, LDS or SDS.
pub fn expected_counter_for(device_id: EntityId, epoch: u64, seed: u64) -> UpdateCounter {
    (0..epoch).fold(new_counter(seed, device_id), |c, e| {
        advance_counter(c, next_delta(seed, device_id, e))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{DeviceSignature, MemoryRange, TrafficType};

    fn record() -> ContextRecord {
        ContextRecord::new(
            DeviceSignature {
                id: 77,
                issued_at: 0,
            },
            new_counter(3, EntityId(1)),
            TrafficType::Telemetry,
            16,
            MemoryRange {
                min_packet_bytes: 20,
                max_packet_bytes: 200,
            },
            Route::ViaLds,
        )
        .unwrap()
    }

    #[test]
    fn graph_shape() {
        let g = build_graph(EntityId(1), &record(), 4).unwrap();
        assert_eq!(g.vertices().len(), 4);
        assert_eq!(g.edges().iter().filter(|e| e.label.is_none()).count(), 3);
        assert_eq!(g.context_edge_count(), 6);
        assert_eq!(g.vertices()[0].kind, StageKind::Sense);
        assert_eq!(g.vertices()[3].kind, StageKind::Transmit);
    }

    #[test]
    fn rejects_too_few_stages() {
        assert_eq!(
            build_graph(EntityId(1), &record(), 1),
            Err(DetectionError::TooFewStages(1))
        );
    }

    #[test]
    fn traffic_type_changes_fingerprint() {
        let a = build_graph(EntityId(1), &record(), 4).unwrap();
        let mut r = record();
        r.traffic_type = TrafficType::Media;
        let b = build_graph(EntityId(1), &r, 4).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a, build_graph(EntityId(1), &record(), 4).unwrap());
    }

    #[test]
    fn from_parts_rejects_duplicate_field() {
        let (id, v, mut e) = build_graph(EntityId(1), &record(), 3).unwrap().into_parts();
        let dup = e.iter().find(|x| x.label.is_some()).cloned().unwrap();
        e.push(dup);
        assert!(matches!(
            ContextGraph::from_parts(id, v, e),
            Err(DetectionError::MalformedGraph(_))
        ));
    }

    #[test]
    fn identical_reports_are_consistent() {
        let rec = record();
        let stored = build_graph(EntityId(1), &rec, 4).unwrap();
        let reports = vec![
            Report {
                source: ReportSource::Device,
                graph: stored.clone(),
            },
            Report {
                source: ReportSource::Lds,
                graph: stored.clone(),
            },
        ];
        let v = mutual_exclusion_check(
            &stored,
            &reports,
            rec.counter,
            &[ReportSource::Device, ReportSource::Lds],
        )
        .unwrap();
        assert_eq!(v, Verdict::Consistent);
    }

    #[test]
    fn counter_plus_one_is_counter_mismatch() {
        let rec = record();
        let stored = build_graph(EntityId(1), &rec, 4).unwrap();
        let mut bumped = rec;
        bumped.counter.value = bumped.counter.value.wrapping_add(1);
        let reports = vec![
            Report {
                source: ReportSource::Device,
                graph: build_graph(EntityId(1), &bumped, 4).unwrap(),
            },
            Report {
                source: ReportSource::Lds,
                graph: stored.clone(),
            },
        ];
        let v =
            mutual_exclusion_check(&stored, &reports, rec.counter, &[ReportSource::Lds]).unwrap();
        assert_eq!(v, Verdict::Threat(ThreatCause::CounterMismatch));
    }

    #[test]
    fn device_mismatch_is_an_error() {
        let rec = record();
        let stored = build_graph(EntityId(1), &rec, 4).unwrap();
        let other = build_graph(EntityId(2), &rec, 4).unwrap();
        let err = mutual_exclusion_check(
            &stored,
            &[Report {
                source: ReportSource::Device,
                graph: other,
            }],
            rec.counter,
            &[ReportSource::Device],
        )
        .unwrap_err();
        assert_eq!(
            err,
            DetectionError::DeviceMismatch {
                expected: EntityId(1),
                found: EntityId(2)
            }
        );
    }

    #[test]
    fn absent_required_source_is_missing_report() {
        let rec = record();
        let stored = build_graph(EntityId(1), &rec, 4).unwrap();
        let v = mutual_exclusion_check(&stored, &[], rec.counter, &[ReportSource::Lds]).unwrap();
        assert_eq!(v, Verdict::Threat(ThreatCause::MissingReport));
    }

    #[test]
    fn stored_graph_at_later_epoch_uses_expected_counter() {
        let rec = record();
        let stored = build_graph(EntityId(1), &rec, 4).unwrap();
        let c5 = expected_counter_for(EntityId(1), 5, 3);
        let now = build_graph(EntityId(1), &rec.with_counter(c5), 4).unwrap();
        let v = mutual_exclusion_check(
            &stored,
            &[Report {
                source: ReportSource::Device,
                graph: now,
            }],
            c5,
            &[ReportSource::Device],
        )
        .unwrap();
        assert_eq!(v, Verdict::Consistent);
    }

    #[test]
    fn expected_counter_base_case_and_fold() {
        let id = EntityId(9);
        assert_eq!(expected_counter_for(id, 0, 11), new_counter(11, id));
        let mut c = new_counter(11, id);
        for e in 0..7 {
            c = advance_counter(c, next_delta(11, id, e));
        }
        assert_eq!(expected_counter_for(id, 7, 11), c);
    }
}
