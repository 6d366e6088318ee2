//! `farebid`: run marketplace scenarios, compare mechanisms against a
//! fixed-price baseline over seed sweeps, and verify mechanism
//! properties on small instances.
//!
//! Exit codes: 0 success; 1 runtime invariant abort; 2 malformed input;
//! 3 oversized verification instance.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use farebid_core::report::{compare_csv, sign_test, CompareRow, RunReport};
use farebid_core::scenario::Scenario;
use farebid_core::sim;
use farebid_core::verify::{check_properties, find_fixed_points, SmallInstance, VerifyError};

const EXIT_INVARIANT: u8 = 1;
const EXIT_BAD_INPUT: u8 = 2;
const EXIT_TOO_LARGE: u8 = 3;

#[derive(Parser)]
#[command(name = "farebid", version, about)]
struct Cli {
    /// Output directory (defaults to $FAREBID_OUT, then `./out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overwrite existing output files.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario: writes report.json, metrics.csv and events.jsonl.
    Run {
        /// Scenario file (TOML).
        scenario: PathBuf,
        /// Seed override.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check mechanism properties on a small instance file.
    Verify {
        /// Instance file (TOML).
        instance: PathBuf,
        /// Best-response restarts.
        #[arg(long, default_value_t = 50)]
        restarts: u32,
        /// Rounds before a restart is counted as cycling.
        #[arg(long, default_value_t = 200)]
        max_rounds: u32,
        /// Seed for restart draws.
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Run mechanism vs fixed-price baseline over a seed range.
    Compare {
        /// Scenario file (TOML).
        scenario: PathBuf,
        /// First seed (inclusive).
        #[arg(long, default_value_t = 0)]
        seed_from: u64,
        /// Last seed (exclusive).
        #[arg(long)]
        seed_to: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out_dir = cli
        .out
        .or_else(|| std::env::var_os("FAREBID_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    match cli.command {
        Command::Run { scenario, seed } => cmd_run(&scenario, seed, &out_dir, cli.force),
        Command::Verify {
            instance,
            restarts,
            max_rounds,
            seed,
        } => cmd_verify(&instance, restarts, max_rounds, seed),
        Command::Compare {
            scenario,
            seed_from,
            seed_to,
        } => cmd_compare(&scenario, seed_from, seed_to, &out_dir, cli.force),
    }
}

fn read_scenario(path: &Path, seed: Option<u64>) -> Result<Scenario, String> {
    let text = fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut scenario = Scenario::from_toml_str(&text).map_err(|e| e.to_string())?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    Ok(scenario)
}

fn guard_outputs(paths: &[PathBuf], force: bool) -> Result<(), String> {
    if force {
        return Ok(());
    }
    for path in paths {
        if path.exists() {
            return Err(format!(
                "output file {} exists; pass --force to overwrite",
                path.display()
            ));
        }
    }
    Ok(())
}

fn cmd_run(scenario_path: &Path, seed: Option<u64>, out_dir: &Path, force: bool) -> ExitCode {
    let scenario = match read_scenario(scenario_path, seed) {
        Ok(s) => s,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_BAD_INPUT);
        }
    };
    if let Err(e) = fs::create_dir_all(out_dir) {
        eprintln!("error: cannot create {}: {e}", out_dir.display());
        return ExitCode::from(EXIT_BAD_INPUT);
    }
    let report_path = out_dir.join("report.json");
    let metrics_path = out_dir.join("metrics.csv");
    let events_path = out_dir.join("events.jsonl");
    if let Err(msg) = guard_outputs(&[report_path.clone(), metrics_path.clone(), events_path.clone()], force) {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_BAD_INPUT);
    }
    let output = match sim::run(&scenario) {
        Ok(output) => output,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INVARIANT);
        }
    };
    let report = RunReport::build(&scenario, &output);
    let writes = [
        fs::write(&report_path, report.to_json()),
        fs::write(&metrics_path, report.metrics_csv()),
        fs::write(&events_path, output.log.to_jsonl()),
    ];
    if let Some(err) = writes.into_iter().find_map(Result::err) {
        eprintln!("error: write failed: {err}");
        return ExitCode::from(EXIT_INVARIANT);
    }
    eprintln!(
        "run complete: seed {} | {} settled, {} failed, {} declined | outputs in {}",
        scenario.seed,
        output.outcomes.len(),
        output.failed.len(),
        output.declined_requests,
        out_dir.display()
    );
    ExitCode::SUCCESS
}

fn cmd_verify(instance_path: &Path, restarts: u32, max_rounds: u32, seed: u64) -> ExitCode {
    let text = match fs::read_to_string(instance_path) {
        Ok(text) => text,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", instance_path.display());
            return ExitCode::from(EXIT_BAD_INPUT);
        }
    };
    let instance = match SmallInstance::from_toml_str(&text) {
        Ok(instance) => instance,
        Err(VerifyError::TooLarge { profiles }) => {
            eprintln!("error: instance too large ({profiles} profiles)");
            return ExitCode::from(EXIT_TOO_LARGE);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_BAD_INPUT);
        }
    };
    let properties = match check_properties(&instance) {
        Ok(report) => report,
        Err(VerifyError::TooLarge { profiles }) => {
            eprintln!("error: instance too large ({profiles} profiles)");
            return ExitCode::from(EXIT_TOO_LARGE);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_BAD_INPUT);
        }
    };
    let dynamics = find_fixed_points(&instance, max_rounds, restarts, seed)
        .expect("validated instance");

    // Pass/fail is data, not exit status.
    println!("mechanism: {:?}", instance.mechanism);
    println!("profiles: {}", instance.profile_count());
    println!("ir_buyer: {}", pass_str(properties.ir_buyer.pass, &properties.ir_buyer.witness));
    println!(
        "ir_seller: {}",
        pass_str(properties.ir_seller.pass, &properties.ir_seller.witness)
    );
    println!("sbb: {}", pass_str(properties.sbb.pass, &properties.sbb.witness));
    println!("dsic_gap: {}", properties.dsic_gap);
    println!("pareto: {}", pass_str(properties.pareto.pass, &properties.pareto.witness));
    println!(
        "welfare: realized {} / max {}",
        properties.welfare_realized, properties.welfare_max
    );
    println!("pure_nash: {}", format_profiles(&properties.pure_nash));
    println!("unique_pure_nash: {}", properties.unique_pure_nash);
    println!(
        "fixed_points ({} restarts, {} cycled): {}",
        restarts,
        dynamics.cycles,
        format_profiles(&dynamics.fixed_points)
    );
    ExitCode::SUCCESS
}

fn pass_str(pass: bool, witness: &Option<String>) -> String {
    match (pass, witness) {
        (true, _) => "pass".to_string(),
        (false, Some(w)) => format!("FAIL ({w})"),
        (false, None) => "FAIL".to_string(),
    }
}

fn format_profiles(profiles: &[Vec<Option<usize>>]) -> String {
    let rendered: Vec<String> = profiles
        .iter()
        .map(|p| {
            let actions: Vec<String> = p
                .iter()
                .map(|a| match a {
                    Some(level) => format!("L{level}"),
                    None => "no-bid".to_string(),
                })
                .collect();
            format!("[{}]", actions.join(", "))
        })
        .collect();
    rendered.join(" ")
}

fn cmd_compare(
    scenario_path: &Path,
    seed_from: u64,
    seed_to: u64,
    out_dir: &Path,
    force: bool,
) -> ExitCode {
    if seed_to <= seed_from {
        eprintln!("error: empty seed range {seed_from}..{seed_to}");
        return ExitCode::from(EXIT_BAD_INPUT);
    }
    let scenario = match read_scenario(scenario_path, None) {
        Ok(s) => s,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_BAD_INPUT);
        }
    };
    if let Err(e) = fs::create_dir_all(out_dir) {
        eprintln!("error: cannot create {}: {e}", out_dir.display());
        return ExitCode::from(EXIT_BAD_INPUT);
    }
    let compare_path = out_dir.join("compare.csv");
    if let Err(msg) = guard_outputs(std::slice::from_ref(&compare_path), force) {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_BAD_INPUT);
    }

    let seeds: Vec<u64> = (seed_from..seed_to).collect();
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(8);
    let chunks: Vec<Vec<u64>> = seeds
        .chunks(seeds.len().div_ceil(threads))
        .map(<[u64]>::to_vec)
        .collect();
    let mechanism_label = scenario
        .pricing
        .mechanism_mix
        .keys()
        .map(|m| m.label())
        .collect::<Vec<_>>()
        .join("+");

    // Per-seed isolation: each worker runs independent simulations.
    let results: Result<Vec<Vec<CompareRow>>, String> = std::thread::scope(|scope| {
        let handles: Vec<_> = chunks
            .iter()
            .map(|chunk| {
                let scenario = &scenario;
                let mechanism_label = &mechanism_label;
                scope.spawn(move || -> Result<Vec<CompareRow>, String> {
                    let mut rows = Vec::new();
                    for &seed in chunk {
                        let mut seeded = scenario.clone();
                        seeded.seed = seed;
                        let output = sim::run(&seeded).map_err(|e| e.to_string())?;
                        let baseline = sim::run_baseline(&seeded).map_err(|e| e.to_string())?;
                        let mech = farebid_core::payoffs::surplus_metrics(&output.market);
                        let base = farebid_core::payoffs::surplus_metrics(&baseline);
                        rows.push(CompareRow {
                            seed,
                            mechanism: mechanism_label.clone(),
                            mech_dwl: mech.deadweight_loss,
                            base_dwl: base.deadweight_loss,
                            mech_consumer_surplus: mech.consumer_surplus,
                            base_consumer_surplus: base.consumer_surplus,
                            mech_executed: mech.executed_trades,
                            base_executed: base.executed_trades,
                        });
                    }
                    Ok(rows)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker does not panic"))
            .collect()
    });
    let mut rows: Vec<CompareRow> = match results {
        Ok(chunks) => chunks.into_iter().flatten().collect(),
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_INVARIANT);
        }
    };
    rows.sort_by_key(|r| r.seed);

    if let Err(e) = fs::write(&compare_path, compare_csv(&rows)) {
        eprintln!("error: write failed: {e}");
        return ExitCode::from(EXIT_INVARIANT);
    }
    if rows.len() > 1 {
        let summary = sign_test(&rows);
        let mean = |f: fn(&CompareRow) -> i64| -> f64 {
            rows.iter().map(f).sum::<i64>() as f64 / rows.len() as f64
        };
        eprintln!(
            "compare complete: {} seeds | mean DWL mechanism {:.1} vs baseline {:.1} | \
             sign test: mechanism lower {}, ties {}, baseline lower {}",
            rows.len(),
            mean(|r| r.mech_dwl.minor()),
            mean(|r| r.base_dwl.minor()),
            summary.mechanism_lower,
            summary.ties,
            summary.baseline_lower,
        );
    } else {
        eprintln!("compare complete: 1 seed, no summary statistics");
    }
    ExitCode::SUCCESS
}
