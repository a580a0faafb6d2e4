//! End-to-end serving run: the same path as the `servesim` binary, with
//! reports written under the system temp directory.
//!
//! ```bash
//! cargo run --release --example serve
//! ```

use servesim::cli::{run, RunConfig};

fn main() -> servesim::Result<()> {
    let prefix = std::env::temp_dir().join("servesim-serve");
    let config = RunConfig {
        model_name: "gpt2".into(),
        npu_num: 8,
        npu_group: 2,
        output: prefix.to_string_lossy().into_owned(),
        ..RunConfig::default()
    };
    let mut progress = Vec::new();
    let summary = run(&config, &mut progress)?;
    let text = String::from_utf8_lossy(&progress);
    let lines: Vec<&str> = text.lines().collect();
    for l in lines.iter().take(5) {
        println!("{l}");
    }
    println!("... {} more lines", lines.len().saturating_sub(6));
    println!("{}", lines.last().unwrap_or(&""));
    println!(
        "{} of {} requests in {:.3} simulated s; reports at {}-*.tsv",
        summary.finished,
        summary.requests,
        summary.clock.as_secs_f64(),
        prefix.display()
    );
    Ok(())
}
