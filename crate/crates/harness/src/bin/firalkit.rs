use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use firalkit::bench::{rows_to_csv, run_bench, BenchKind, BenchSpec};
use firalkit::config::{parse_list, DataSource, ExperimentConfig};
use firalkit::data::{generate_synthetic, save_dataset, Dataset, SyntheticSpec};
use firalkit::experiment::{load_experiment_data, run_active_learning, select_once};
use firalkit::verify::parse_suites;
use firalkit::{init_threads, HarnessError, Result};

#[derive(Parser)]
#[command(
    name = "firalkit",
    version,
    about = "Batch active learning by Fisher information ratio"
)]
struct Cli {
    /// Worker threads (falls back to FIRALKIT_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic blob dataset (CSV with labels, or binary plus a
    /// `.labels` side file).
    Generate(GenerateArgs),
    /// Multi-round active learning; writes a JSON report and plot CSV.
    Run(ExperimentArgs),
    /// One selection round; prints the chosen row indices.
    Select {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// File of already-labeled row indices (comma or newline separated).
        #[arg(long)]
        labeled: Option<PathBuf>,
    },
    /// Run an oracle suite: matvec, sherman-morrison, prop1, hutchinson, nu
    /// or all.
    Verify {
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Timing sweep for matvec, cg, relax or round; prints CSV.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    points_per_class: Option<usize>,
    #[arg(long)]
    spread: Option<f64>,
    #[arg(long)]
    imbalance: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Feature file (.csv, or binary FKMX).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Label side file for binary features.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// One or more of exact, approx, random, kmeans, entropy.
    #[arg(long)]
    solver: Option<String>,
    #[arg(long)]
    budget: Option<String>,
    #[arg(long)]
    rounds: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    s: Option<String>,
    #[arg(long)]
    cg_tol: Option<String>,
    #[arg(long)]
    eta_grid: Option<String>,
}

impl ExperimentArgs {
    /// Config file first, then flags.
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(p) = &self.data {
            cfg.set("data", &p.to_string_lossy())?;
        }
        if let Some(p) = &self.labels {
            cfg.set("labels", &p.to_string_lossy())?;
        }
        let flags = [
            ("solver", &self.solver),
            ("budget", &self.budget),
            ("rounds", &self.rounds),
            ("seed", &self.seed),
            ("s", &self.s),
            ("cg_tol", &self.cg_tol),
            ("eta_grid", &self.eta_grid),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if let Some(p) = &self.out {
            cfg.out = Some(p.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct BenchArgs {
    kind: String,
    /// Comma-separated pool sizes.
    #[arg(long)]
    n: Option<String>,
    /// Comma-separated feature dimensions.
    #[arg(long)]
    d: Option<String>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| HarnessError::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn generate(args: &GenerateArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::default();
    if let Some(p) = &args.config {
        cfg = ExperimentConfig::from_file(p)?;
    }
    let mut spec = match cfg.data {
        DataSource::Synthetic(s) => s,
        DataSource::File { .. } => SyntheticSpec::default(),
    };
    spec.classes = args.classes.unwrap_or(spec.classes);
    spec.dim = args.dim.unwrap_or(spec.dim);
    spec.points_per_class = args.points_per_class.unwrap_or(spec.points_per_class);
    spec.spread = args.spread.unwrap_or(spec.spread);
    spec.imbalance = args.imbalance.unwrap_or(spec.imbalance);
    spec.seed = args.seed.unwrap_or(spec.seed);
    let ds = generate_synthetic(&spec)?;
    save_dataset(&args.out, &ds)?;
    let is_csv = args
        .out
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if !is_csv {
        let lp = args.out.with_extension("labels");
        let text: String = ds
            .labels
            .iter()
            .flatten()
            .map(|y| format!("{y}\n"))
            .collect();
        std::fs::write(&lp, text).map_err(|e| HarnessError::io(&lp, e))?;
    }
    eprintln!(
        "wrote {} points, d = {}, class counts {:?}",
        ds.len(),
        ds.dim(),
        ds.class_counts()
    );
    Ok(())
}

fn run(args: &ExperimentArgs) -> Result<()> {
    let cfg = args.resolve()?;
    init_threads(cfg.threads)?;
    let report = run_active_learning(&cfg)?;
    for m in &report.methods {
        let last = m.final_round();
        eprintln!(
            "{:>8}: round {} pool accuracy {:.4}, eval accuracy {}",
            m.solver.name(),
            last.round,
            last.pool_accuracy,
            last.eval_accuracy
                .map_or("n/a".to_string(), |v| format!("{v:.4}"))
        );
    }
    match &cfg.out {
        Some(p) => {
            let csv = report.write(p)?;
            eprintln!("report: {}, plot data: {}", p.display(), csv.display());
        }
        None => println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("report serializes")
        ),
    }
    Ok(())
}

fn read_indices(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| HarnessError::data(path, format!("bad index `{t}`")))
        })
        .collect()
}

fn select(args: &ExperimentArgs, labeled: Option<&Path>) -> Result<()> {
    let cfg = args.resolve()?;
    init_threads(cfg.threads)?;
    let data: Dataset = load_experiment_data(&cfg.data)?;
    let labeled = labeled.map(read_indices).transpose()?;
    let sel = select_once(&cfg, &data, labeled)?;
    let text: String = sel.selected.iter().map(|i| format!("{i}\n")).collect();
    write_or_print(cfg.out.as_deref(), &text)
}

fn verify(suite: &str, seed: u64) -> Result<()> {
    let suites = parse_suites(suite)?;
    let mut failed = Vec::new();
    for s in suites {
        let rep = s.run(seed)?;
        println!("{rep}");
        if !rep.passed() {
            failed.push(rep.suite);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(HarnessError::Verification(failed.join(", ")))
    }
}

fn bench(args: &BenchArgs) -> Result<()> {
    let kind: BenchKind = args.kind.parse()?;
    let mut spec = BenchSpec::default_for(kind);
    if let Some(v) = &args.n {
        spec.n_values = parse_list("n", v)?;
    }
    if let Some(v) = &args.d {
        spec.d_values = parse_list("d", v)?;
    }
    spec.classes = args.classes.unwrap_or(spec.classes);
    spec.repeats = args.repeats.unwrap_or(spec.repeats);
    spec.seed = args.seed.unwrap_or(spec.seed);
    let rows = run_bench(&spec)?;
    write_or_print(args.out.as_deref(), &rows_to_csv(&rows))
}

fn dispatch(cli: Cli) -> Result<()> {
    init_threads(cli.threads)?;
    match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Run(a) => run(a),
        Command::Select { exp, labeled } => select(exp, labeled.as_deref()),
        Command::Verify { suite, seed } => verify(suite, *seed),
        Command::Bench(a) => bench(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
