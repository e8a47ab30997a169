use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use odesurro::bench::{bench_table, format_table, write_bench_csv, write_table};
use odesurro::circuit::{ParameterSet, StateVector};
use odesurro::config::RunConfig;
use odesurro::datagen::{generate_corpus, CorpusManifest};
use odesurro::dataset::{read_pairs, write_pairs};
use odesurro::error::Error;
use odesurro::lstm::LstmModel;
use odesurro::pipeline::{make_dataset, run_pipeline, train_lookahead};
use odesurro::plotdata::{merge_curves, parse_curve_arg, pass_bench};
use odesurro::trainer::evaluate;

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NO_CONVERGENCE: u8 = 4;

#[derive(Parser)]
#[command(name = "odesurro", version, about = "LSTM surrogate for a gene-regulatory ODE circuit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// JSON run config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig, Error> {
        let cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.with_env_seed()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a corpus of random circuits with forward Euler.
    Generate {
        #[arg(long)]
        runs: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Upper bound for one parameter, e.g. `kappa_A=2.5`. Repeatable.
        #[arg(long = "param-max", value_name = "NAME=VALUE")]
        param_max: Vec<String>,
        /// Upper bound for every initial concentration.
        #[arg(long)]
        init_max: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Pair downsampled states with the state N samples ahead.
    MakeDataset {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        lookahead: u32,
        #[arg(long)]
        stride: Option<u32>,
        /// Seed for choosing which runs are used.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Train a surrogate on a pair file until the test error drops below the target.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        lookahead: Option<u32>,
        #[arg(long)]
        target: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_epochs: Option<u64>,
        #[arg(long)]
        eval_every: Option<u64>,
        /// Pairs per test draw.
        #[arg(long)]
        test_batch: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        curve: PathBuf,
        /// Print every evaluation to stderr.
        #[arg(long)]
        verbose: bool,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Relative normed error of a checkpoint on a random draw from a pair file.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 1000)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Predict the state N samples ahead of one input state.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Six comma-separated concentrations: A,B,C_RNA,C_p,Z_RNA,Z_p.
        #[arg(long, allow_hyphen_values = true)]
        state: String,
    },
    /// Time surrogate predictions against Euler advances.
    Bench {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_delimiter = ',')]
        lookaheads: Option<Vec<u32>>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the human-readable table here.
        #[arg(long)]
        table: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Emit the CSV data behind the convergence and timing figures.
    PlotData {
        /// Training curve as `N=PATH`. Repeatable.
        #[arg(long = "curve", value_name = "N=PATH")]
        curves: Vec<String>,
        #[arg(long)]
        bench: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run generate, make-dataset, train and bench from one config.
    Pipeline {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_bench: bool,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Print or check a run config.
    Config {
        /// Print the default config.
        #[arg(long, conflicts_with = "check")]
        defaults: bool,
        /// Validate a config file and print it with defaults filled in.
        #[arg(long)]
        check: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Data(Error),
    NoConvergence(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(msg) => Failure::Usage(msg),
            Error::DidNotConverge { max_epochs, .. } => {
                Failure::NoConvergence(format!("did not reach the target error within {max_epochs} epochs"))
            }
            other => Failure::Data(other),
        }
    }
}

fn parse_state(text: &str) -> Result<StateVector, Failure> {
    let values: Vec<f64> = text
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::Usage(format!("bad --state: {e}")))?;
    let arr: [f64; 6] = values
        .try_into()
        .map_err(|v: Vec<f64>| Failure::Usage(format!("--state needs 6 values, got {}", v.len())))?;
    Ok(StateVector::from_array(arr))
}

fn apply_param_max(bounds: &mut ParameterSet, specs: &[String]) -> Result<(), Failure> {
    for spec in specs {
        let (name, value) =
            spec.split_once('=').ok_or_else(|| Failure::Usage(format!("expected NAME=VALUE, got {spec:?}")))?;
        let value: f64 = value.trim().parse().map_err(|_| Failure::Usage(format!("bad value in {spec:?}")))?;
        bounds.set_by_name(name.trim(), value)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate { runs, seed, out, param_max, init_max, dt, steps, config } => {
            let mut cfg = config.load()?.gen;
            if let Some(r) = runs {
                cfg.n_runs = r;
            }
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            apply_param_max(&mut cfg.bounds.param_max, &param_max)?;
            if let Some(m) = init_max {
                cfg.bounds.init_max = StateVector::splat(m);
            }
            if let Some(dt) = dt {
                cfg.solver.dt = dt;
            }
            if let Some(n) = steps {
                cfg.solver.n_steps = n;
            }
            fs::create_dir_all(&out).map_err(Error::from)?;
            let manifest = generate_corpus(&cfg, &out)?;
            let retried = manifest.runs.iter().filter(|r| r.retries > 0).count();
            println!("wrote {} runs to {} ({retried} needed resampling)", manifest.runs.len(), out.display());
        }
        Command::MakeDataset { manifest, runs, lookahead, stride, seed, out, config } => {
            let d = config.load()?.dataset;
            let ds = make_dataset(
                &manifest,
                runs.unwrap_or(d.runs),
                seed.unwrap_or(d.select_seed),
                lookahead,
                stride.unwrap_or(d.stride),
            )?;
            write_pairs(&out, &ds)?;
            println!("wrote {} pairs (lookahead {lookahead}) to {}", ds.len(), out.display());
        }
        Command::Train {
            dataset,
            lookahead,
            target,
            seed,
            max_epochs,
            eval_every,
            test_batch,
            out,
            curve,
            verbose,
            config,
        } => {
            let mut cfg = config.load()?.train;
            let ds = read_pairs(&dataset)?;
            if let Some(n) = lookahead {
                if n != ds.lookahead_n {
                    return Err(Failure::Usage(format!(
                        "--lookahead {n} does not match the dataset's lookahead {}",
                        ds.lookahead_n
                    )));
                }
            }
            if let Some(t) = target {
                cfg.target_rel_error = t;
            }
            if let Some(s) = seed {
                cfg.seed = s;
                cfg.sampler.epoch_seed = s;
            }
            if let Some(m) = max_epochs {
                cfg.max_epochs = m;
            }
            if let Some(e) = eval_every {
                cfg.eval_every = e;
            }
            if let Some(b) = test_batch {
                cfg.sampler.test_batch_size = b;
            }
            cfg.validate()?;
            let epochs = train_lookahead(&ds, &cfg, &out, &curve, |p| {
                if verbose {
                    eprintln!("epoch {:>9}  rel_error {:.5}  loss {:.5e}", p.epoch, p.rel_error, p.loss);
                }
            })?;
            match epochs {
                Some(e) => println!("reached {:.2}% after {e} epochs; model at {}", 100.0 * cfg.target_rel_error, out.display()),
                None => {
                    return Err(Failure::NoConvergence(format!(
                        "did not reach the target error within {} epochs; curve at {}",
                        cfg.max_epochs,
                        curve.display()
                    )))
                }
            }
        }
        Command::Eval { model, dataset, pairs, seed } => {
            let m = LstmModel::load(&model)?;
            let ds = read_pairs(&dataset)?;
            let err = evaluate(&m, &ds, pairs, seed, 0)?;
            println!("{err:.6}");
        }
        Command::Predict { model, state } => {
            let x = parse_state(&state)?;
            let m = LstmModel::load(&model)?;
            let y = m.predict(&x.to_array())?;
            let text: Vec<String> = y.iter().map(|v| format!("{v:.17e}")).collect();
            println!("{}", text.join(","));
        }
        Command::Bench { models, manifest, lookaheads, repeats, out, table, config } => {
            let cfg = config.load()?.bench;
            let mut opts = cfg.options;
            if let Some(r) = repeats {
                opts.repeats = r;
            }
            let lookaheads = lookaheads.unwrap_or(cfg.lookaheads);
            let manifest = CorpusManifest::load(&manifest)?;
            let results = bench_table(&models, &manifest, &lookaheads, &opts)?;
            write_bench_csv(&out, &results)?;
            if let Some(t) = table {
                write_table(&t, &results)?;
            }
            print!("{}", format_table(&results));
        }
        Command::PlotData { curves, bench, out_dir } => {
            if curves.is_empty() && bench.is_none() {
                return Err(Failure::Usage("give at least one --curve or --bench".into()));
            }
            fs::create_dir_all(&out_dir).map_err(Error::from)?;
            if !curves.is_empty() {
                let inputs = curves.iter().map(|c| parse_curve_arg(c)).collect::<Result<Vec<_>, _>>()?;
                let rows = merge_curves(&inputs, &out_dir.join("convergence.csv"))?;
                println!("convergence.csv: {rows} rows");
            }
            if let Some(b) = bench {
                let rows = pass_bench(&b, &out_dir.join("timing.csv"))?;
                println!("timing.csv: {rows} rows");
            }
        }
        Command::Pipeline { out, no_bench, config } => {
            let cfg = config.load()?;
            fs::create_dir_all(&out).map_err(Error::from)?;
            cfg.save(&out.join("run_config.json"))?;
            let report = run_pipeline(&cfg, &out, !no_bench, |_, _| {})?;
            for r in &report.lookaheads {
                match r.epochs {
                    Some(e) => println!("N={:<3} converged after {e} epochs", r.lookahead_n),
                    None => println!("N={:<3} hit the epoch cap", r.lookahead_n),
                }
            }
            if let Some(b) = &report.bench {
                print!("{}", format_table(b));
            }
            if !report.all_converged() {
                return Err(Failure::NoConvergence("some lookaheads did not converge".into()));
            }
        }
        Command::Config { defaults, check } => match check {
            Some(path) => println!("{}", RunConfig::load(&path)?.to_json()),
            None if defaults => println!("{}", RunConfig::default().to_json()),
            None => return Err(Failure::Usage("pass --defaults or --check FILE".into())),
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_DATA)
        }
        Err(Failure::NoConvergence(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_NO_CONVERGENCE)
        }
    }
}
