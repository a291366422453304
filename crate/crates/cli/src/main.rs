use anyhow::{bail, Context, Result};
use clap::{ArgGroup, Parser, Subcommand};
use dsnc::coupon::{comparison_table, monte_carlo_classic, monte_carlo_coded, CouponModel};
use dsnc::experiment::{emit_results, load_config, preset, presets, run_experiment, summary_table};
use dsnc::par::{stream_rng, Execution};
use dsnc::selftest::run_selftest;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dsnc", version, about = "Grouped network-coded content distribution simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset or a config-file experiment and write CSV plus JSON.
    #[command(group(ArgGroup::new("source").required(true).args(["preset", "config"])))]
    Simulate {
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; a config file may name one instead.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run the sweep on one thread.
        #[arg(long)]
        sequential: bool,
    },
    /// Closed-form coupon-collector expectations next to Monte Carlo means.
    Coupon {
        #[arg(long)]
        s: u32,
        /// Field order of the coded draws.
        #[arg(long, default_value_t = 256)]
        q: u64,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run the invariant checks.
    Selftest,
    /// List the scenario presets.
    Presets,
}

fn simulate(
    preset_name: Option<String>,
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    sequential: bool,
) -> Result<()> {
    let mut cfg = match (&preset_name, &config) {
        (Some(name), None) => preset(name)?,
        (None, Some(path)) => load_config(path)?,
        _ => bail!("give exactly one of --preset and --config"),
    };
    cfg.seed = match (cfg.seed, seed) {
        (Some(a), Some(b)) if a != b => bail!("--seed {b} conflicts with seed {a} in the config file"),
        (a, b) => b.or(a),
    };
    if cfg.seed.is_none() {
        bail!("a seed is required: pass --seed <u64>");
    }
    let dir = match (out, cfg.out.clone()) {
        (Some(d), _) | (None, Some(d)) => d,
        (None, None) => bail!("an output directory is required: pass --out <dir>"),
    };
    if sequential {
        cfg.execution = Execution::Sequential;
    }
    let result = run_experiment(&cfg)?;
    let (csv, json) = emit_results(&result, &dir)?;
    print!("{}", summary_table(&result));
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

fn coupon(s: u32, q: u64, trials: u64, seed: u64) -> Result<()> {
    let model = CouponModel::new(s, q)?;
    let coded_mc = q.is_power_of_two() && q <= 1 << 16;
    let mut checkpoints: Vec<u32> = [s.div_ceil(4), s.div_ceil(2), (3 * s).div_ceil(4), s].to_vec();
    checkpoints.dedup();
    println!("s = {s}, q = {q}, {trials} trials per Monte Carlo point");
    println!(
        "{:>5} {:>10} {:>12} {:>12} {:>10} {:>12} {:>12} {:>12} {:>12}",
        "i", "p_i", "E[wait]", "E[draws]", "p_i^c", "E[wait^c]", "E[draws^c]", "MC draws", "MC draws^c"
    );
    for (k, row) in comparison_table(model).into_iter().enumerate() {
        let (mut mc, mut mcc) = ("-".to_string(), "-".to_string());
        if checkpoints.contains(&row.i) {
            let mut rng = stream_rng(seed, k as u64);
            mc = format!("{:.3}", monte_carlo_classic(s, row.i, trials, &mut rng, Execution::Parallel)?.mean);
            if coded_mc {
                mcc = format!("{:.3}", monte_carlo_coded(model, row.i, trials, &mut rng, Execution::Parallel)?.mean);
            }
        }
        println!(
            "{:>5} {:>10.6} {:>12.4} {:>12.4} {:>10.6} {:>12.6} {:>12.4} {:>12} {:>12}",
            row.i, row.p, row.wait, row.sample, row.coded_p, row.coded_wait, row.coded_sample, mc, mcc
        );
    }
    Ok(())
}

fn selftest() -> Result<bool> {
    let checks = run_selftest();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} of {} checks passed", checks.len() - failed, checks.len());
    Ok(failed == 0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate { preset, config, seed, out, sequential } => {
            simulate(preset, config, seed, out, sequential).map(|()| true)
        }
        Command::Coupon { s, q, trials, seed } => coupon(s, q, trials, seed).map(|()| true),
        Command::Selftest => selftest(),
        Command::Presets => {
            for p in presets() {
                let c = &p.config;
                println!(
                    "{:<6} {:<21} peers {:?}, {} seed(s), {} B content: {}",
                    p.name,
                    c.arrangement.name(),
                    c.peers,
                    c.seeds,
                    c.content_size,
                    p.probes
                );
            }
            Ok(true)
        }
    };
    match outcome.context("dsnc") {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
