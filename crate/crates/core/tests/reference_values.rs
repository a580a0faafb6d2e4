//! Values quoted in the reference document at the workspace root, compared
//! with this crate's defaults.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::CommandFactory;
use servesim::cli::RunConfig;
use servesim::syssim::Link;

fn reference() -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../paper.md");
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// `name -> default` for every `\item {\textit{name}: ... Default value is X`
/// line of the input-parameter list.
fn parameter_list(text: &str) -> Vec<(String, Option<String>)> {
    let start = text
        .find("subsubsection{Input parameters}")
        .expect("parameter section");
    let section = &text[start..];
    let end = section.find("\\end{itemize}").unwrap();
    section[..end]
        .lines()
        .filter_map(|l| l.trim().strip_prefix("\\item {\\textit{"))
        .map(|l| {
            let name_end = l.find("}:").unwrap();
            let name = l[..name_end].replace("{\\_}", "_");
            let default = l.split("Default value is ").nth(1).map(|rest| {
                rest.trim_start_matches('`')
                    .split(['\'', '.', ','])
                    .next()
                    .unwrap()
                    .to_string()
            });
            (name, default)
        })
        .collect()
}

#[test]
fn sixteen_parameters_match_the_flags() {
    let params = parameter_list(&reference());
    assert_eq!(params.len(), 16);
    let cmd = RunConfig::command();
    let flags: Vec<String> = cmd
        .get_arguments()
        .filter_map(|a| a.get_long().map(String::from))
        .filter(|f| f != "help" && f != "version")
        .collect();
    let names: Vec<String> = params.iter().map(|p| p.0.clone()).collect();
    assert_eq!(flags, names);
}

#[test]
fn parameter_defaults() {
    let defaults: BTreeMap<String, String> = parameter_list(&reference())
        .into_iter()
        .filter_map(|(n, d)| d.map(|d| (n, d)))
        .collect();
    let c = RunConfig::default();
    let ours: BTreeMap<&str, String> = [
        ("model_name", c.model_name.clone()),
        ("npu_num", c.npu_num.to_string()),
        ("max_batch", c.max_batch.to_string()),
        ("batch_delay", c.batch_delay.to_string()),
        ("scheduling", c.scheduling.to_string()),
        ("parallel", c.parallel.to_string()),
        ("npu_group", c.npu_group.to_string()),
        ("npu_mem", c.npu_mem.to_string()),
        ("kv_manage", c.kv_manage.to_string()),
        ("pim_type", c.pim_type.to_string()),
    ]
    .into_iter()
    .collect();
    assert_eq!(defaults.len(), ours.len(), "{defaults:?}");
    for (name, value) in &defaults {
        assert_eq!(&ours[name.as_str()], value, "{name}");
    }
    assert!(!c.sub_batch && !c.gen && !c.fast_run);
}

#[test]
fn enumerated_choices() {
    let text = reference();
    let line = text
        .lines()
        .find(|l| l.contains("textit{parallel}"))
        .unwrap();
    for mode in ["pipeline", "tensor", "hybrid"] {
        assert!(line.contains(&format!("`{mode}'")));
        assert!(mode.parse::<servesim::graph::ParallelMode>().is_ok());
    }
    let line = text
        .lines()
        .find(|l| l.contains("textit{pim{\\_}type}"))
        .unwrap();
    for t in ["none", "local", "pool"] {
        assert!(line.contains(&format!("`{t}'")));
        assert!(t.parse::<servesim::scheduler::PimType>().is_ok());
    }
}

#[test]
fn default_link_is_pcie4_x16() {
    let text = reference();
    let line = text.lines().find(|l| l.contains("PCIe 4.0")).unwrap();
    let bw: f64 = line
        .split("at ")
        .nth(1)
        .unwrap()
        .split("GB/s")
        .next()
        .unwrap()
        .parse()
        .unwrap();
    let lat: f64 = line
        .split("latency of ")
        .nth(1)
        .unwrap()
        .split("ns")
        .next()
        .unwrap()
        .parse()
        .unwrap();
    let link = Link::default();
    assert_eq!(link.bandwidth, bw * 1e9);
    assert_eq!(link.latency, lat / 1e9);
}

#[test]
fn report_file_names() {
    let text = reference();
    for suffix in ["-throughput.tsv", "-simulation-time.tsv"] {
        assert!(
            text.contains(&format!("output{{\\_}}filename\\}}{suffix}")),
            "{suffix}"
        );
    }
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("r");
    let (a, b) =
        servesim::cli::write_reports(&[], &Default::default(), prefix.to_str().unwrap()).unwrap();
    assert!(a.to_str().unwrap().ends_with("r-throughput.tsv"));
    assert!(b.to_str().unwrap().ends_with("r-simulation-time.tsv"));
}
