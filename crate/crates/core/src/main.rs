use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use obstacle_bsde::experiment::{self, ExperimentConfig, Outcome};
use obstacle_bsde::Error;

#[derive(Parser)]
#[command(name = "obstacle-bsde", version, about = "Reflected and generalized BSDE experiments")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Built-in case to run with its defaults when no config is given.
    case: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write SVG plots.
    #[arg(long)]
    svg: bool,
    /// Extra overrides, `key.path=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run(Common),
    /// List built-in cases, optionally filtered by a substring.
    List { filter: Option<String> },
    /// Run one experiment for each value of a parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted parameter path, e.g. `grid.n_steps`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Cross-validation suite: PDE against BSDE on the bridge cases.
    Bridge {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out/bridge")]
        out: PathBuf,
        #[arg(long)]
        svg: bool,
    },
}

enum Failure {
    Usage(String),
    Solver(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::Cfl { .. } | Error::Peclet { .. } | Error::Invalid(_) | Error::Mismatch(_) => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Solver(other.to_string()),
        }
    }
}

fn overrides(common: &Common) -> Result<Vec<(String, String)>, Failure> {
    let mut out = Vec::new();
    if let Some(seed) = common.seed {
        out.push(("seed".to_string(), seed.to_string()));
    }
    for s in &common.sets {
        let (k, v) = s.split_once('=').ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got '{s}'")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn load(common: &Common, extra: &[(String, String)]) -> Result<ExperimentConfig, Failure> {
    let text = match (&common.config, &common.case) {
        (Some(path), _) => {
            std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        (None, Some(case)) => format!("schema_version = {}\ncase = \"{case}\"\n", experiment::SCHEMA_VERSION),
        (None, None) => return Err(Failure::Usage("give a case name or --config PATH".into())),
    };
    let mut ov = overrides(common)?;
    ov.extend_from_slice(extra);
    experiment::parse_config_with(&text, &ov).map_err(|e| match (&common.config, e) {
        (Some(path), Error::Config { line, message }) => Failure::Usage(format!(
            "{}{}: {message}",
            path.display(),
            line.map(|l| format!(":{l}")).unwrap_or_default()
        )),
        (_, e) => e.into(),
    })
}

fn out_dir(cfg: &ExperimentConfig, flag: Option<&Path>) -> PathBuf {
    flag.map_or_else(|| PathBuf::from(&cfg.out), Path::to_path_buf)
}

fn execute(cfg: &ExperimentConfig, dir: &Path, svg: bool) -> Result<Outcome, Failure> {
    let out = experiment::run(cfg)?;
    out.write(dir, svg)?;
    print!("{}", out.report());
    println!("  artifacts in {}", dir.display());
    Ok(out)
}

fn status(pass: bool) -> ExitCode {
    if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, Failure> {
    match cli.command {
        Command::List { filter } => {
            for c in experiment::list_cases(filter.as_deref()) {
                println!("{:<24} {}\n{:<24} exercises: {}", c.name, c.description, "", c.claims);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(common) => {
            let cfg = load(&common, &[])?;
            let out = execute(&cfg, &out_dir(&cfg, common.out.as_deref()), common.svg)?;
            Ok(status(out.passed()))
        }
        Command::Sweep { common, param, values } => {
            let cfgs = values
                .iter()
                .map(|v| load(&common, &[(param.clone(), v.clone())]))
                .collect::<Result<Vec<_>, _>>()?;
            let root = out_dir(&cfgs[0], common.out.as_deref());
            let mut rows = String::from("value,check,metric,bound,pass\n");
            let mut pass = true;
            for (v, cfg) in values.iter().zip(&cfgs) {
                let out = execute(cfg, &root.join(format!("{param}={v}")), common.svg)?;
                pass &= out.passed();
                for c in &out.checks {
                    rows.push_str(&format!("{v},\"{}\",{:.12e},{:.12e},{}\n", c.name, c.value, c.bound, c.pass));
                }
            }
            std::fs::create_dir_all(&root).map_err(Error::from)?;
            std::fs::write(root.join("sweep.csv"), rows).map_err(Error::from)?;
            Ok(status(pass))
        }
        Command::Bridge { seed, out, svg } => {
            let mut pass = true;
            for case in ["heat_baseline", "discounting", "american_put_style", "measure_correspondence"] {
                let mut cfg = experiment::default_config(case).expect("catalog case");
                if let Some(s) = seed {
                    cfg.seed = s;
                }
                let o = execute(&cfg, &out.join(case), svg)?;
                pass &= o.passed();
            }
            println!("bridge suite: {}", if pass { "pass" } else { "FAIL" });
            Ok(status(pass))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: --jobs: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli) {
        Ok(code) => code,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(m)) => {
            eprintln!("solver error: {m}");
            ExitCode::from(1)
        }
    }
}
