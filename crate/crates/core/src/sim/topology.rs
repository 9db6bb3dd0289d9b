use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::config::ScenarioConfig;
use crate::context::{
    new_counter, ContextRecord, DeviceSignature, EntityId, MemoryRange, Millis, Route, TrafficType,
};
use crate::rng::{keyed_rng, Domain};

use super::SimError;

pub const CDS_ID: EntityId = EntityId(0);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DevicePlacement {
    pub id: EntityId,
    pub route: Route,
    /// HGW for `ViaLds`, AP otherwise.
    pub gateway: EntityId,
    /// LDS or SDS diagnosing this device; `None` for direct devices.
    pub diagnosis_node: Option<EntityId>,
    pub record: ContextRecord,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub cds: EntityId,
    pub hgws: Vec<EntityId>,
    pub aps: Vec<EntityId>,
    /// One per HGW, same index.
    pub lds_nodes: Vec<EntityId>,
    /// One per AP, same index.
    pub sds_nodes: Vec<EntityId>,
    pub devices: Vec<DevicePlacement>,
    /// Positive-latency links, keyed with the smaller id first.
    pub links: BTreeMap<(EntityId, EntityId), Millis>,
}

fn link_key(a: EntityId, b: EntityId) -> (EntityId, EntityId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Splits `n` items by `fractions`: floors first, then the leftover units go
/// to routes picked by a seeded shuffle.
pub(crate) fn apportion(n: usize, fractions: [f64; 3], seed: u64) -> [usize; 3] {
    let mut counts = fractions.map(|f| (f * n as f64 + 1e-9).floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut leftover = n.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..3).filter(|i| fractions[*i] > 0.0).collect();
    order.shuffle(&mut keyed_rng(Domain::Topology, seed, n as u64, 1));
    for i in order.iter().cycle() {
        if leftover == 0 {
            break;
        }
        counts[*i] += 1;
        leftover -= 1;
    }
    counts
}

fn device_record(seed: u64, id: EntityId, route: Route) -> ContextRecord {
    let mut rng = keyed_rng(Domain::Device, seed, id.0, 0);
    let sig = DeviceSignature {
        id: rng.gen(),
        issued_at: 0,
    };
    let traffic = TrafficType::ALL[rng.gen_range(0..4)];
    let header_length_bits = 8 * rng.gen_range(1..=4u32);
    let min = rng.gen_range(16..=64u32);
    let max = min + rng.gen_range(64..=1024u32);
    ContextRecord::new(
        sig,
        new_counter(seed, id),
        traffic,
        header_length_bits,
        MemoryRange {
            min_packet_bytes: min,
            max_packet_bytes: max,
        },
        route,
    )
    .expect("generated records are valid")
}

impl Topology {
    pub fn build(config: &ScenarioConfig) -> Result<Topology, SimError> {
        config.validate()?;
        let n = config.devices;
        let [n_lds, n_sds, n_direct] = apportion(n, config.route_mix.as_array(), config.seed);

        let mut ids: Vec<u64> = (1..=n as u64).collect();
        ids.shuffle(&mut keyed_rng(Domain::Topology, config.seed, 0, 0));
        let routes: Vec<(EntityId, Route)> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let route = if i < n_lds {
                    Route::ViaLds
                } else if i < n_lds + n_sds {
                    Route::ViaSds
                } else {
                    Route::DirectCds
                };
                (EntityId(*id), route)
            })
            .collect();

        let fan = config.gateway_fanout;
        let n_hgw = n_lds.div_ceil(fan);
        let n_ap = (n_sds + n_direct).div_ceil(fan);
        let mut next = n as u64 + 1;
        let mut alloc = |count: usize| -> Vec<EntityId> {
            let v = (next..next + count as u64).map(EntityId).collect();
            next += count as u64;
            v
        };
        let hgws = alloc(n_hgw);
        let lds_nodes = alloc(n_hgw);
        let aps = alloc(n_ap);
        let sds_nodes = alloc(n_ap);

        let lat = config.latency;
        let mut links = BTreeMap::new();
        for g in hgws.iter().chain(&aps) {
            links.insert(link_key(CDS_ID, *g), lat.gateway_cds_ms);
        }

        let mut devices = Vec::with_capacity(n);
        let (mut lds_slot, mut ap_slot) = (0usize, 0usize);
        for (id, route) in routes {
            let (gateway, node) = match route {
                Route::ViaLds => {
                    let g = lds_slot / fan;
                    lds_slot += 1;
                    (hgws[g], Some(lds_nodes[g]))
                }
                Route::ViaSds => {
                    let g = ap_slot / fan;
                    ap_slot += 1;
                    (aps[g], Some(sds_nodes[g]))
                }
                Route::DirectCds => {
                    let g = ap_slot / fan;
                    ap_slot += 1;
                    (aps[g], None)
                }
            };
            links.insert(link_key(id, gateway), lat.device_gateway_ms);
            devices.push(DevicePlacement {
                id,
                route,
                gateway,
                diagnosis_node: node,
                record: device_record(config.seed, id, route),
            });
        }
        devices.sort_by_key(|d| d.id);
        Ok(Topology {
            cds: CDS_ID,
            hgws,
            aps,
            lds_nodes,
            sds_nodes,
            devices,
            links,
        })
    }

    pub fn latency(&self, a: EntityId, b: EntityId) -> Option<Millis> {
        self.links.get(&link_key(a, b)).copied()
    }

    pub fn device(&self, id: EntityId) -> Option<&DevicePlacement> {
        // Devices are numbered 1..=n and stored sorted.
        let idx = (id.0 as usize).checked_sub(1)?;
        self.devices.get(idx).filter(|d| d.id == id)
    }

    pub fn count_route(&self, route: Route) -> usize {
        self.devices.iter().filter(|d| d.route == route).count()
    }

    /// Latency and hop count of the device's path to the CDS.
    pub fn device_to_cds(&self, d: &DevicePlacement) -> (Millis, u32) {
        let a = self.latency(d.id, d.gateway).expect("device link");
        let b = self.latency(d.gateway, self.cds).expect("gateway link");
        (a + b, 2)
    }
}
