//! Hand-build a small execution graph and run the discrete-event
//! simulator over it.
//!
//! ```bash
//! cargo run --example event_simulation
//! ```

use servesim::graph::{CommOp, ExecGraph, NodeKind, NodeLabel};
use servesim::syssim::{critical_path, simulate_graph, Link, Topology};
use servesim::SimTime;

fn main() -> servesim::Result<()> {
    let mut g = ExecGraph::new();
    let us = |n| SimTime::from_micros(n);
    let a = g.push(
        NodeKind::Compute {
            duration: us(40),
            device: 0,
        },
        NodeLabel::default(),
        vec![],
    );
    let b = g.push(
        NodeKind::Compute {
            duration: us(25),
            device: 1,
        },
        NodeLabel::default(),
        vec![],
    );
    let ar = g.push(
        NodeKind::Comm {
            op: CommOp::AllReduce,
            bytes: 4 << 20,
            group: vec![0, 1],
        },
        NodeLabel::default(),
        vec![a, b],
    );
    g.push(
        NodeKind::Compute {
            duration: us(10),
            device: 0,
        },
        NodeLabel::default(),
        vec![ar],
    );
    g.push(
        NodeKind::Compute {
            duration: us(30),
            device: 1,
        },
        NodeLabel::default(),
        vec![b],
    );

    let topo = Topology::new(2, Link::default(), Link::default());
    let out = simulate_graph(&g, &topo)?;
    for node in g.nodes() {
        println!(
            "{} {:<9} [{:>9.3}, {:>9.3}] us",
            node.id,
            node.kind_name(),
            out.start[node.id].as_secs_f64() * 1e6,
            out.finish[node.id].as_secs_f64() * 1e6
        );
    }
    println!(
        "latency {:.3} us, critical path {:.3} us",
        out.iteration_latency.as_secs_f64() * 1e6,
        critical_path(&g, &topo)?.as_secs_f64() * 1e6
    );
    for (d, busy) in out.busy.iter().enumerate() {
        println!("device {d} busy {:.3} us", busy.as_secs_f64() * 1e6);
    }
    Ok(())
}
