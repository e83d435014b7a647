use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gspn::train::{train_toy, ToyKind, ToyTask, TrainError};
use gspn::AnyTensor;
use gspn_cli::bench::{self, BenchConfig, Mechanism};
use gspn_cli::checks::{self, Outcome, SuiteConfig};
use gspn_cli::heatmap::{self, GateSource};
use gspn_cli::{resolve_threads, train, CliError, EXIT_DIVERGED, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "gspn", version, about = "2D linear propagation: verification, benchmarks, heatmaps, toy training")]
struct Cli {
    /// Worker threads; overrides GSPN_THREADS. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Fault {
    CorruptNormalization,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every invariant family and print a pass/fail table.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Square grid sides for the oracle comparison.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        sizes: Option<Vec<usize>>,
        /// Directory that receives reproducers of failing cases.
        #[arg(long, default_value = ".")]
        repro_dir: PathBuf,
        #[arg(long, hide = true)]
        inject_fault: Option<Fault>,
    },
    /// Time mechanisms over image sides and write a CSV.
    Bench {
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        mechanisms: Vec<Mechanism>,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        sides: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        channels: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Group count for gspn-local.
        #[arg(long, default_value_t = 2)]
        g: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write query-row heatmaps for the four directions and their merge.
    Heatmap {
        /// GSPN-T tensor; sample 0 is used.
        #[arg(long)]
        input: PathBuf,
        /// Query pixel as `H,W`.
        #[arg(long)]
        query: String,
        /// Block checkpoint directory.
        #[arg(long, conflicts_with = "random_seed")]
        params: Option<PathBuf>,
        #[arg(long)]
        random_seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        channel: usize,
        /// Output prefix; files are `<prefix>_<direction>.pgm`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one block on a toy target and write the loss trace.
    TrainToy {
        /// `identity` or `fixed-blur`.
        #[arg(long)]
        task: String,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

fn run(cli: Cli) -> Result<i32, CliError> {
    let env = std::env::var("GSPN_THREADS").ok();
    if let Some(n) = resolve_threads(cli.threads, env.as_deref())? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size the worker pool: {e}")))?;
    }
    match cli.command {
        Command::Verify {
            seed,
            sizes,
            repro_dir,
            inject_fault,
        } => verify(seed, sizes, &repro_dir, inject_fault),
        Command::Bench {
            mechanisms,
            sides,
            channels,
            repeats,
            g,
            seed,
            out,
        } => run_bench(
            BenchConfig {
                mechanisms,
                sides,
                channels,
                repeats,
                groups: g,
                seed,
            },
            &out,
        ),
        Command::Heatmap {
            input,
            query,
            params,
            random_seed,
            channel,
            out,
        } => {
            let source = match params {
                Some(p) => GateSource::Params(p),
                None => GateSource::Random(random_seed.unwrap_or(0)),
            };
            run_heatmap(&input, &query, &source, channel, &out)
        }
        Command::TrainToy {
            task,
            steps,
            lr,
            seed,
            out,
        } => run_train(&task, steps, lr, seed, &out),
    }
}

fn write_reproducer(dir: &Path, o: &Outcome) -> Result<Option<PathBuf>, CliError> {
    let Some(r) = &o.failure else {
        return Ok(None);
    };
    let case_dir = dir.join(format!("gspn-repro-{}", o.family));
    fs::create_dir_all(&case_dir)?;
    let mut text = format!("family: {}\n{}\n", o.family, r.description);
    for (name, t) in &r.tensors {
        let file = format!("{name}.gspn");
        t.save(BufWriter::new(fs::File::create(case_dir.join(&file))?))?;
        text.push_str(&format!("{file}: {}\n", t.dims()));
    }
    fs::write(case_dir.join("case.txt"), text)?;
    Ok(Some(case_dir))
}

fn verify(seed: u64, sizes: Option<Vec<usize>>, repro_dir: &Path, fault: Option<Fault>) -> Result<i32, CliError> {
    if let Some(s) = &sizes {
        if let Some(&bad) = s.iter().find(|&&n| n == 0 || n * n > gspn::oracle::MAX_PIXELS) {
            return Err(CliError::Usage(format!(
                "grid side {bad} is outside 1..=64 (the oracle handles at most {} pixels)",
                gspn::oracle::MAX_PIXELS
            )));
        }
    }
    let cfg = SuiteConfig {
        seed,
        sides: sizes,
        corrupt_normalization: matches!(fault, Some(Fault::CorruptNormalization)),
    };
    let outcomes = checks::run_suite(&cfg);
    print!("{}", checks::render_table(&outcomes));
    let failed: Vec<&Outcome> = outcomes.iter().filter(|o| !o.passed).collect();
    for o in &failed {
        if let Some(path) = write_reproducer(repro_dir, o)? {
            eprintln!("{}: reproducer written to {}", o.family, path.display());
        }
    }
    println!(
        "{} of {} families passed",
        outcomes.len() - failed.len(),
        outcomes.len()
    );
    Ok(if failed.is_empty() { EXIT_OK } else { EXIT_FAILURE })
}

fn run_bench(cfg: BenchConfig, out: &Path) -> Result<i32, CliError> {
    if let Some(&s) = cfg.sides.iter().find(|&&s| s < 8) {
        return Err(CliError::Usage(format!("side {s} is below the minimum of 8")));
    }
    if cfg.channels == 0 || cfg.repeats == 0 || cfg.groups == 0 {
        return Err(CliError::Usage("--channels, --repeats and --g must be positive".into()));
    }
    if cfg.mechanisms.contains(&Mechanism::GspnLocal) {
        if let Some(&s) = cfg.sides.iter().find(|&&s| s < cfg.groups) {
            return Err(CliError::Usage(format!("side {s} cannot be split into {} groups", cfg.groups)));
        }
    }
    let records = bench::run_bench(&cfg, |r| match (r.median_seconds, r.tokens_per_second()) {
        (Some(t), Some(tp)) => println!(
            "{:<12} side {:>5}  N {:>9}  median {:>12.6} s  {:>12.3e} tokens/s",
            r.mechanism, r.side, r.tokens, t, tp
        ),
        _ => println!(
            "{:<12} side {:>5}  N {:>9}  skipped (score matrix over {} bytes)",
            r.mechanism,
            r.side,
            r.tokens,
            bench::SOFTMAX_SCORE_BUDGET
        ),
    });
    bench::write_csv(BufWriter::new(fs::File::create(out)?), &records)?;
    for m in &cfg.mechanisms {
        let mine: Vec<_> = records.iter().filter(|r| r.mechanism == *m).cloned().collect();
        match bench::loglog_slope(&mine) {
            Some(s) => println!("{m}: log-log slope of time vs N = {s:.3}"),
            None => println!("{m}: fewer than two timed sides, no slope"),
        }
    }
    for &side in &cfg.sides {
        let pick = |m| {
            records
                .iter()
                .find(|r| r.mechanism == m && r.side == side)
                .and_then(|r| r.median_seconds)
        };
        if let (Some(g), Some(l)) = (pick(Mechanism::GspnGlobal), pick(Mechanism::GspnLocal)) {
            println!("side {side}: gspn-local / gspn-global time ratio = {:.3}", l / g);
        }
    }
    println!("wrote {}", out.display());
    Ok(EXIT_OK)
}

fn parse_query(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Usage(format!("--query expects `H,W`, got `{s}`"));
    let (h, w) = s.split_once(',').ok_or_else(bad)?;
    Ok((h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?))
}

fn run_heatmap(input: &Path, query: &str, source: &GateSource, channel: usize, out: &Path) -> Result<i32, CliError> {
    let q = parse_query(query)?;
    let x = AnyTensor::load(std::io::BufReader::new(fs::File::open(input)?))?.to_f64();
    let maps = heatmap::compute(&x, q, source, channel)?;
    for p in heatmap::write_all(&maps, out)? {
        println!("wrote {}", p.display());
    }
    Ok(EXIT_OK)
}

fn run_train(task: &str, steps: Option<usize>, lr: Option<f64>, seed: u64, out: &Path) -> Result<i32, CliError> {
    let kind = ToyKind::parse(task)
        .ok_or_else(|| CliError::Usage(format!("unknown task `{task}` (expected identity or fixed-blur)")))?;
    let steps = steps.unwrap_or(kind.default_steps());
    let lr = lr.unwrap_or(kind.default_lr());
    if !(lr.is_finite() && lr > 0.0) {
        return Err(CliError::Usage(format!("--lr must be positive and finite, got {lr}")));
    }
    let report = match train_toy(&ToyTask::new(kind, seed), steps, lr) {
        Ok(r) => r,
        Err(TrainError::Diverged { step, loss }) => {
            eprintln!("training diverged at step {step} (loss {loss})");
            return Ok(EXIT_DIVERGED);
        }
        Err(TrainError::Block(e)) => return Err(e.into()),
    };
    train::write_trace(BufWriter::new(fs::File::create(out)?), &report)?;
    println!(
        "{}: {} steps at lr {lr}, loss {:.6e} -> {:.6e} (ratio {:.4})",
        kind.name(),
        steps,
        report.initial_loss(),
        report.final_loss(),
        report.ratio()
    );
    if report.converged() {
        Ok(EXIT_OK)
    } else {
        println!("final loss is above a tenth of the initial loss");
        Ok(EXIT_FAILURE)
    }
}
