//! How a device's update counter evolves and how any diagnosis node can
//! predict it without talking to the device.
//!
//! cargo run --example context_counters

use dds_sim::context::{advance_counter, new_counter, next_delta, EntityId};
use dds_sim::detection::expected_counter_for;

fn main() {
    let (seed, device) = (42, EntityId(7));
    let mut c = new_counter(seed, device);
    println!("epoch  delta       value");
    println!("{:>5}  {:>10}  {:>10}", c.epoch, "-", c.value);
    for epoch in 0..6 {
        let delta = next_delta(seed, device, epoch);
        c = advance_counter(c, delta);
        println!("{:>5}  {:>10}  {:>10}", c.epoch, delta, c.value);
    }
    // A CDS or LDS replays the same sequence from the seed alone.
    let predicted = expected_counter_for(device, 6, seed);
    assert_eq!(predicted.value, c.value);
    println!("predicted at epoch 6: {}", predicted.value);
}
