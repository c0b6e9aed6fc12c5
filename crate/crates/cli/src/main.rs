//! `byzsim`: single runs, experiment matrices, robustness certification,
//! the step-size calculator and message-trace dumps.
//!
//! Exit codes: 0 success, 1 configuration error, 2 divergence, 3 I/O error.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use byzsim_core::aggregators::{certify_kappa, RobustnessCertificate};
use byzsim_core::aggregators::{AggregatorSpec, Rule};
use byzsim_core::engine::matrix::{run_matrix, MatrixOptions, MatrixSpec, BEST_FILE, INDEX_FILE};
use byzsim_core::engine::theory::{theorem1_params, TheoryParams};
use byzsim_core::engine::trace::{read_trace, TraceRecord};
use byzsim_core::engine::{
    apply_override, run, write_run_outputs, RunConfig, RunOptions, Simulation, METRICS_FILE,
};
use byzsim_core::rng::{tag, tagged_rng};
use clap::{Parser, Subcommand};

const EXIT_CONFIG: u8 = 1;
const EXIT_DIVERGED: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "byzsim", version, about = "Byzantine-robust compressed SGD simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one configuration and write metrics.csv and manifest.toml
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// `key=value` with dotted keys, e.g. `aggregator.rule=cwtm`
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Evaluate workers on the thread pool
        #[arg(long)]
        parallel: bool,
        /// Write every uplink message to this binary trace file
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run an aggregator x attack x seed x step-size matrix
    Matrix {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Run cells concurrently
        #[arg(long)]
        parallel: bool,
    },
    /// Estimate the robustness coefficient of an aggregator
    Certify {
        /// avg, cwmed, cwtm or rfa, optionally suffixed with `+nnm`
        #[arg(long)]
        rule: String,
        #[arg(long)]
        nnm: bool,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        f: usize,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print gamma_max, the suggested momentum and Delta
    Theory {
        /// Take n, f, eta, kappa, alpha and the smoothness constants from a run config
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        l: Option<f64>,
        #[arg(long)]
        l_tilde: Option<f64>,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        f: Option<usize>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        sigma_sq: Option<f64>,
        #[arg(long)]
        delta0: Option<f64>,
        #[arg(long)]
        rounds: Option<u64>,
    },
    /// Print a binary message trace as CSV
    TraceDump {
        #[arg(long)]
        trace: PathBuf,
    },
}

fn load_config(path: &Path, overrides: &[String], seed: Option<u64>) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut table: toml::Table = text
        .parse()
        .map_err(|e| byzsim_core::Error::Config(format!("{}: {e}", path.display())))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    if let Some(seed) = seed {
        table.insert("seed".into(), toml::Value::Integer(seed as i64));
    }
    let config = RunConfig::from_table(table)?;
    config.validate()?;
    Ok(config)
}

fn cmd_run(
    config: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    overrides: &[String],
    parallel: bool,
    trace: Option<&Path>,
) -> Result<u8> {
    let config = load_config(config, overrides, seed)?;
    let mut options = RunOptions::parallel(parallel);
    if let Some(path) = trace {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        options.trace = Some(Box::new(BufWriter::new(file)));
    }
    let output = run(config, options)?;
    write_run_outputs(out_dir, &output)?;
    let csv = out_dir.join(METRICS_FILE);
    if output.diverged {
        eprintln!("run diverged; partial metrics in {}", csv.display());
        return Ok(EXIT_DIVERGED);
    }
    match output.final_loss() {
        Some(loss) => println!("final train_loss {loss:?}; metrics in {}", csv.display()),
        None => println!("no rounds run; metrics in {}", csv.display()),
    }
    Ok(0)
}

fn cmd_matrix(config: &Path, out_dir: &Path, parallel: bool) -> Result<u8> {
    let spec = MatrixSpec::from_file(config)?;
    let base_dir = config.parent().unwrap_or(Path::new("."));
    let outcome = run_matrix(&spec, base_dir, out_dir, &MatrixOptions { parallel })?;
    let executed = outcome.runs.iter().filter(|r| r.executed).count();
    println!(
        "{} runs ({} executed, {} reused); index in {}, step-size choice in {}",
        outcome.runs.len(),
        executed,
        outcome.runs.len() - executed,
        out_dir.join(INDEX_FILE).display(),
        out_dir.join(BEST_FILE).display()
    );
    for b in &outcome.best {
        println!(
            "{}/{}/{}: gamma {} mean final loss {:?}",
            b.variant, b.aggregator, b.attack, b.step_size, b.mean_final_loss
        );
    }
    Ok(0)
}

fn parse_rule(label: &str, nnm: bool) -> Result<AggregatorSpec> {
    let (name, suffix_nnm) = match label.strip_suffix("+nnm") {
        Some(name) => (name, true),
        None => (label, false),
    };
    let rule: Rule = toml::Value::String(name.to_string())
        .try_into()
        .map_err(|_| byzsim_core::Error::Config(format!("unknown aggregation rule {label:?}")))?;
    Ok(AggregatorSpec::new(rule, 0).with_nnm(nnm || suffix_nnm))
}

fn cmd_certify(rule: &str, nnm: bool, n: usize, f: usize, d: usize, trials: usize, seed: u64) -> Result<u8> {
    let mut spec = parse_rule(rule, nnm)?;
    spec.f = Some(f);
    let mut rng = tagged_rng(tag::CERTIFY, seed);
    let cert = certify_kappa(&spec, n, f, d, trials, &mut rng)?;
    println!("{}", RobustnessCertificate::CSV_HEADER);
    println!("{}", cert.csv_row());
    Ok(0)
}

#[derive(Default)]
struct TheoryInputs {
    l: Option<f64>,
    l_tilde: Option<f64>,
    kappa: Option<f64>,
    alpha: Option<f64>,
    n: Option<usize>,
    f: Option<usize>,
    eta: Option<f64>,
    sigma_sq: Option<f64>,
    delta0: Option<f64>,
    rounds: Option<u64>,
}

impl TheoryInputs {
    fn from_config(config: RunConfig) -> Result<Self> {
        let kappa = config.kappa_for_theory().ok();
        let sim = Simulation::from_config(config, RunOptions::default())?;
        let derived = sim.derived();
        let effective = sim.config();
        Ok(Self {
            l: Some(derived.smoothness),
            l_tilde: Some(derived.smoothness_tilde),
            kappa,
            alpha: Some(derived.alpha),
            n: Some(effective.n),
            f: Some(effective.f),
            eta: effective.eta.value(),
            sigma_sq: effective.theory.sigma_sq,
            delta0: effective.theory.delta0,
            rounds: Some(effective.rounds),
        })
    }

    fn overlay(self, flags: TheoryInputs) -> Self {
        Self {
            l: flags.l.or(self.l),
            l_tilde: flags.l_tilde.or(self.l_tilde),
            kappa: flags.kappa.or(self.kappa),
            alpha: flags.alpha.or(self.alpha),
            n: flags.n.or(self.n),
            f: flags.f.or(self.f),
            eta: flags.eta.or(self.eta),
            sigma_sq: flags.sigma_sq.or(self.sigma_sq),
            delta0: flags.delta0.or(self.delta0),
            rounds: flags.rounds.or(self.rounds),
        }
    }

    fn params(&self) -> Result<TheoryParams> {
        fn need<T: Copy>(v: Option<T>, name: &str) -> Result<T> {
            v.ok_or_else(|| anyhow!(byzsim_core::Error::Argument(format!("--{name} is required"))))
        }
        Ok(TheoryParams {
            l: need(self.l, "l")?,
            l_tilde: need(self.l_tilde, "l-tilde")?,
            kappa: need(self.kappa, "kappa")?,
            alpha: self.alpha.unwrap_or(1.0),
            n: need(self.n, "n")?,
            f: self.f.unwrap_or(0),
            eta: need(self.eta, "eta")?,
            sigma_sq: self.sigma_sq,
            delta0: self.delta0,
            rounds: self.rounds,
        })
    }
}

fn cmd_theory(config: Option<&Path>, overrides: &[String], flags: TheoryInputs) -> Result<u8> {
    let base = match config {
        Some(path) => TheoryInputs::from_config(load_config(path, overrides, None)?)?,
        None => TheoryInputs::default(),
    };
    let params = base.overlay(flags).params()?;
    let out = theorem1_params(&params)?;
    println!("gamma_max = {:?}", out.gamma_max);
    match out.eta_suggestion {
        Some(eta) => println!("eta_suggestion = {eta:?}"),
        None => println!("eta_suggestion = none"),
    }
    println!("delta = {:?}", out.delta);
    Ok(0)
}

fn cmd_trace_dump(path: &Path) -> Result<u8> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let records = read_trace(BufReader::new(file))?;
    match write_trace_csv(&records, &mut BufWriter::new(std::io::stdout().lock())) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(0),
        other => other.map(|_| 0).context("writing trace to stdout"),
    }
}

fn write_trace_csv(records: &[TraceRecord], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "round,worker,index,value")?;
    for r in records {
        for &(i, v) in r.delta.entries() {
            writeln!(out, "{},{},{},{:?}", r.round, r.worker, i, v)?;
        }
    }
    out.flush()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<byzsim_core::Error>() {
            return match e {
                byzsim_core::Error::Io(_) => EXIT_IO,
                _ => EXIT_CONFIG,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_CONFIG
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Run {
            config,
            out_dir,
            seed,
            overrides,
            parallel,
            trace,
        } => cmd_run(&config, &out_dir, seed, &overrides, parallel, trace.as_deref()),
        Command::Matrix {
            config,
            out_dir,
            parallel,
        } => cmd_matrix(&config, &out_dir, parallel),
        Command::Certify {
            rule,
            nnm,
            n,
            f,
            d,
            trials,
            seed,
        } => cmd_certify(&rule, nnm, n, f, d, trials, seed),
        Command::Theory {
            config,
            overrides,
            l,
            l_tilde,
            kappa,
            alpha,
            n,
            f,
            eta,
            sigma_sq,
            delta0,
            rounds,
        } => cmd_theory(
            config.as_deref(),
            &overrides,
            TheoryInputs {
                l,
                l_tilde,
                kappa,
                alpha,
                n,
                f,
                eta,
                sigma_sq,
                delta0,
                rounds,
            },
        ),
        Command::TraceDump { trace } => cmd_trace_dump(&trace),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
