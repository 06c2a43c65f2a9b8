//! Command-line front end for the federated poisoning laboratory.
//!
//! * `run` executes one configuration for a number of trials.
//! * `sweep` repeats a configuration over the values of one key and reports
//!   whether the averaged error is non-decreasing along the sweep.
//! * `defend` evaluates a matrix of attacks against aggregation rules with
//!   and without the rejection defenses.
//!
//! Configurations are flat TOML files; `--set key=value` overrides any key.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use fedpoison::harness::config::apply_override;
use fedpoison::harness::{run_experiment, ExperimentConfig, ExperimentResult};

#[derive(Parser, Debug)]
#[command(name = "fedpoison", version, about = "Local model poisoning attacks and defenses for federated learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// Flat TOML configuration file
    #[arg(long, short = 'c')]
    config: Option<PathBuf>,

    /// Override a configuration key; may be repeated
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Number of trials, each with a seed derived from the master seed
    #[arg(long)]
    trials: Option<usize>,

    /// Directory for per-trial metrics and summary CSVs
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a single experiment
    Run {
        #[command(flatten)]
        args: ConfigArgs,

        /// Master seed
        #[arg(long)]
        seed: u64,
    },

    /// Run one experiment per value of a configuration key
    Sweep {
        #[command(flatten)]
        args: ConfigArgs,

        #[arg(long)]
        seed: Option<u64>,

        /// Key to sweep, e.g. `compromised` or `poison_fraction`
        #[arg(long)]
        param: String,

        /// Comma-separated values, in sweep order
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,

        /// Exit with an error if the error rate ever decreases along the sweep
        #[arg(long)]
        require_monotone: bool,
    },

    /// Evaluate attacks against rules combined with each defense
    Defend {
        #[command(flatten)]
        args: ConfigArgs,

        #[arg(long)]
        seed: Option<u64>,

        /// Attacks to craft, named by the rule they assume
        #[arg(long, value_delimiter = ',', default_value = "krum,trimmed_mean")]
        attacks: Vec<String>,

        /// Aggregation rules the master actually uses
        #[arg(long, value_delimiter = ',', default_value = "krum,trimmed_mean,median")]
        rules: Vec<String>,

        #[arg(long, value_delimiter = ',', default_value = "none,err,lfr,union")]
        defenses: Vec<String>,
    },
}

fn base_table(args: &ConfigArgs, seed: Option<u64>) -> Result<toml::Table> {
    let mut table = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => toml::Table::new(),
    };
    for assignment in &args.overrides {
        apply_override(&mut table, assignment)?;
    }
    if let Some(seed) = seed {
        table.insert("seed".into(), toml::Value::Integer(i64::try_from(seed).context("seed too large")?));
    }
    if let Some(trials) = args.trials {
        table.insert("trials".into(), toml::Value::Integer(trials as i64));
    }
    Ok(table)
}

fn with(table: &toml::Table, pairs: &[(&str, &str)]) -> Result<ExperimentConfig> {
    let mut t = table.clone();
    for (k, v) in pairs {
        apply_override(&mut t, &format!("{k}={v}"))?;
    }
    Ok(ExperimentConfig::from_table(t)?)
}

fn execute(config: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentResult> {
    let result = run_experiment(config)?;
    if let Some(dir) = out {
        result.write(dir)?;
    }
    Ok(result)
}

fn run(args: ConfigArgs, seed: u64) -> Result<()> {
    let config = ExperimentConfig::from_table(base_table(&args, Some(seed))?)?;
    let result = execute(&config, args.out.as_deref())?;
    println!("config {}", result.config_hash);
    for t in &result.trials {
        println!(
            "trial {} iteration {} test_error {:.4} validation_error {:.4}",
            t.summary.trial, t.summary.selected_iteration, t.summary.test_error, t.summary.validation_error
        );
    }
    println!("mean test_error {:.4}", result.mean_test_error());
    Ok(())
}

/// The first position where `values` drops below its predecessor.
fn first_decrease(values: &[f64]) -> Option<usize> {
    values.windows(2).position(|w| w[1] < w[0]).map(|i| i + 1)
}

fn sweep(args: ConfigArgs, seed: Option<u64>, param: &str, values: &[String], require_monotone: bool) -> Result<bool> {
    let table = base_table(&args, seed)?;
    let mut errors = Vec::with_capacity(values.len());
    println!("{param},mean_test_error");
    for value in values {
        let config = with(&table, &[(param, value)])?;
        let out = args.out.as_ref().map(|d| d.join(format!("{param}={value}")));
        let result = execute(&config, out.as_deref())?;
        println!("{value},{:.4}", result.mean_test_error());
        errors.push(result.mean_test_error());
    }
    match first_decrease(&errors) {
        None => {
            println!("trend: non-decreasing");
            Ok(true)
        }
        Some(i) => {
            println!("trend: decreases at {param}={}", values[i]);
            Ok(!require_monotone)
        }
    }
}

fn defend(args: ConfigArgs, seed: Option<u64>, attacks: &[String], rules: &[String], defenses: &[String]) -> Result<()> {
    let table = base_table(&args, seed)?;
    let mut rows = vec!["attack,rule,defense,mean_test_error".to_string()];
    println!("{}", rows[0]);
    let mut emit = |attack: &str, rule: &str, defense: &str| -> Result<()> {
        let config = with(&table, &[("attack", attack), ("rule", rule), ("defense", defense)])?;
        let out = args.out.as_ref().map(|d| d.join(format!("{attack}-{rule}-{defense}")));
        let result = execute(&config, out.as_deref())?;
        let row = format!("{attack},{rule},{defense},{:.4}", result.mean_test_error());
        println!("{row}");
        rows.push(row);
        Ok(())
    };
    for rule in rules {
        emit("none", rule, "none")?;
    }
    for attack in attacks {
        for rule in rules {
            for defense in defenses {
                emit(attack, rule, defense)?;
            }
        }
    }
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("defend.csv"), rows.join("\n") + "\n")?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { args, seed } => run(args, seed).map(|()| true),
        Command::Sweep { args, seed, param, values, require_monotone } => {
            sweep(args, seed, &param, &values, require_monotone)
        }
        Command::Defend { args, seed, attacks, rules, defenses } => {
            if attacks.is_empty() || rules.is_empty() || defenses.is_empty() {
                Err(anyhow::anyhow!("attacks, rules and defenses must be non-empty"))
            } else {
                defend(args, seed, &attacks, &rules, &defenses).map(|()| true)
            }
        }
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
