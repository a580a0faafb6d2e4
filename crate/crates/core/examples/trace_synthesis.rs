//! Synthesize a Poisson request trace, write it as TSV and load it back.
//!
//! ```bash
//! cargo run --example trace_synthesis
//! ```

use servesim::workload::{load_trace, synthesize_poisson, write_trace};

fn main() -> servesim::Result<()> {
    let pairs = [(128, 32), (512, 128), (1024, 256)];
    let reqs = synthesize_poisson(5.0, 20, &pairs, 7)?;

    let path = std::env::temp_dir().join("servesim-trace.tsv");
    write_trace(&path, &reqs)?;
    let loaded = load_trace(&path)?;
    assert_eq!(loaded, reqs);

    println!("wrote {} requests to {}", reqs.len(), path.display());
    println!("{:>3} {:>10} {:>6} {:>6}", "id", "arrive_ms", "in", "out");
    for r in &loaded {
        println!(
            "{:>3} {:>10.3} {:>6} {:>6}",
            r.id,
            r.arrival_us as f64 / 1e3,
            r.input_len,
            r.output_len
        );
    }
    Ok(())
}
