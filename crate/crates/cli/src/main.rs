use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use polarlink::exec::map_range;
use polarlink::scenario::config::{ExperimentConfig, Scenario};
use polarlink::scenario::output::{run_to_dir, write_json};
use serde_json::{json, Map, Value};

/// Simulate a polarization-stabilized entanglement distribution link.
#[derive(Debug, Parser)]
#[command(name = "polarlink", version)]
struct Args {
    /// probe, fringe, longrun or calibrate
    scenario: String,

    /// TOML config; a `.json` file (including a previous summary.json) also works
    #[arg(long)]
    config: PathBuf,

    #[arg(long)]
    seed: u64,

    /// Run seeds `seed..seed+N`, each into its own `seed_<s>` directory
    #[arg(long, default_value_t = 1)]
    seeds: u64,

    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<polarlink::Error>()) {
        Some(polarlink::Error::Config { .. }) => 2,
        Some(polarlink::Error::Fit(_) | polarlink::Error::Calibration(_)) => 3,
        _ => 1,
    }
}

/// Flattens nested objects into dotted keys, keeping only numbers.
fn numeric_fields(prefix: &str, value: &Value, out: &mut Vec<(String, f64)>) {
    match value {
        Value::Number(n) => {
            if let Some(x) = n.as_f64() {
                out.push((prefix.to_string(), x));
            }
        }
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                numeric_fields(&key, v, out);
            }
        }
        _ => {}
    }
}

fn aggregate(scenario: Scenario, seeds: &[u64], summaries: &[Value]) -> Value {
    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    for s in summaries {
        let mut fields = Vec::new();
        numeric_fields("", &s["results"], &mut fields);
        for (k, x) in fields {
            match columns.iter_mut().find(|(name, _)| *name == k) {
                Some((_, xs)) => xs.push(x),
                None => columns.push((k, vec![x])),
            }
        }
    }
    let mut stats = Map::new();
    for (k, xs) in columns {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        stats.insert(k, json!({ "n": xs.len(), "mean": mean, "std": var.sqrt(), "min": min, "max": max }));
    }
    json!({
        "scenario": scenario.as_str(),
        "seeds": seeds,
        "results": summaries.iter().map(|s| s["results"].clone()).collect::<Vec<_>>(),
        "stats": stats,
    })
}

/// A closed stdout (e.g. piped into `head`) is not an error.
fn print_json(value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    Ok(())
}

fn run(args: &Args) -> Result<()> {
    let scenario: Scenario = args.scenario.parse()?;
    let cfg = ExperimentConfig::load(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    cfg.resolved(scenario, args.seed).validate()?;

    if args.seeds <= 1 {
        let summary = run_to_dir(&cfg, scenario, args.seed, &args.out)?;
        print_json(&summary["results"])?;
        return Ok(());
    }

    let seed_dir = |s: u64| args.out.join(format!("seed_{s}"));
    let end = args.seed.checked_add(args.seeds).context("seed range overflows u64")?;
    let runs = map_range(cfg.execution, args.seed..end, |s| run_to_dir(&cfg, scenario, s, &seed_dir(s)));
    let summaries = runs.into_iter().collect::<polarlink::Result<Vec<_>>>()?;
    let seeds: Vec<u64> = (args.seed..end).collect();
    let agg = aggregate(scenario, &seeds, &summaries);
    write_json(&args.out.join("aggregate.json"), &agg)?;
    print_json(&agg["stats"])?;
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
