mod commands;
mod config;
mod output;

use clap::{Parser, Subcommand};
use config::RunConfig;
use dpkam::error::Error;
use output::Output;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "dpkam", version, about = "Normal forms, twist, spectra, measure and tori for the DP equation")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the Monte-Carlo seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Work budget for enumerations and normal-form pieces.
    #[arg(long, global = true)]
    budget: Option<u64>,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Verb {
    /// H²- and M-resonance scan.
    Resonances,
    /// Weak Birkhoff normal form.
    Wbnf,
    /// Twist matrix and non-degeneracy checks.
    Twist,
    /// Reduced eigenvalues, identification and small divisors.
    Spectrum,
    /// Monte-Carlo measure of an excluded family.
    Measure,
    /// Newton solve for an invariant torus.
    Solve,
    /// Time integration from a torus.
    Evolve,
}

impl Verb {
    fn name(self) -> &'static str {
        match self {
            Verb::Resonances => "resonances",
            Verb::Wbnf => "wbnf",
            Verb::Twist => "twist",
            Verb::Spectrum => "spectrum",
            Verb::Measure => "measure",
            Verb::Solve => "solve",
            Verb::Evolve => "evolve",
        }
    }
}

const EXIT_FAIL: u8 = 1;
const EXIT_BUDGET: u8 = 2;
const EXIT_USAGE: u8 = 3;

fn usage(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("usage error: {msg}");
    ExitCode::from(EXIT_USAGE)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let Some(path) = &cli.config else {
        return usage("--config is required");
    };
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return usage(format!("cannot read {}: {e}", path.display())),
    };
    let mut cfg = match RunConfig::parse(&text) {
        Ok(c) => c,
        Err(e) => return usage(e),
    };
    if let Some(s) = cli.seed {
        cfg.measure.seed = s;
    }
    let model = match cfg.model() {
        Ok(m) => m,
        Err(e) => return usage(e),
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return usage("--threads must be positive");
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return usage(e);
        }
    }
    // the hash covers the effective configuration, overrides included
    let canonical = serde_json::to_vec(&(&cfg, cli.budget)).expect("config serializes");
    let hash = output::sha256_hex(&canonical);
    let mut out = match Output::new(&cli.out, hash) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("cannot create {}: {e}", cli.out.display());
            return ExitCode::from(EXIT_BUDGET);
        }
    };
    let ctx = commands::Context { cfg: &cfg, model: &model, budget: cli.budget };
    let result = match cli.verb {
        Verb::Resonances => commands::resonances(&ctx, &mut out),
        Verb::Wbnf => commands::wbnf(&ctx, &mut out),
        Verb::Twist => commands::twist(&ctx, &mut out),
        Verb::Spectrum => commands::spectrum(&ctx, &mut out),
        Verb::Measure => commands::measure(&ctx, &mut out),
        Verb::Solve => commands::solve(&ctx, &mut out),
        Verb::Evolve => commands::evolve(&ctx, &mut out),
    };
    let verb = cli.verb.name();
    let (checks, partial, failure, code) = match result {
        Ok(checks) => {
            let code = if checks.iter().all(|c| c.pass) { 0 } else { EXIT_FAIL };
            (checks, false, None, code)
        }
        Err(commands::Failure { error, checks }) => {
            let code = match &error {
                commands::Reason::Core(Error::Budget { .. }) => EXIT_BUDGET,
                commands::Reason::Core(Error::InvalidInput(_)) => EXIT_USAGE,
                commands::Reason::Io(_) => EXIT_BUDGET,
                _ => EXIT_FAIL,
            };
            (checks, code == EXIT_BUDGET, Some(error.to_string()), code)
        }
    };
    for c in &checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if let Some(f) = &failure {
        eprintln!("{verb} failed: {f}");
    }
    if let Err(e) = out.summary(verb, &checks, partial, failure) {
        eprintln!("cannot write summary: {e}");
        return ExitCode::from(EXIT_BUDGET);
    }
    ExitCode::from(code)
}
