//! `pbrl`: generate environments, run and sweep experiments, plot results
//! and serve the labeling API.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pbrl_harness::experiment::{resolved_budgets, run_one_detailed};
use pbrl_harness::output::{emit_outputs, plot_csv};
use pbrl_harness::{grid_search, h_sweep, sweep, EnvSpec, ExperimentConfig, HarnessError, HyperGrid};
use pbrl_service::service::PreferenceService;
use pbrl_service::{RunState, SessionSpec};
use serde_json::json;
use toml::{Table, Value};

#[derive(Parser)]
#[command(name = "pbrl", version, about = "Preference-based RL experiments and labeling service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write an environment as JSON.
    GenEnv {
        #[command(flatten)]
        config: ConfigArgs,
        /// Environment seed; defaults to `env_seed`, then 0.
        #[arg(long)]
        seed: Option<u64>,
        /// Output path; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One run of the first configured algorithm.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Episode budget; defaults to the first configured budget.
        #[arg(long)]
        budget: Option<u64>,
        /// Run seed; defaults to `base_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the episode ledger here.
        #[arg(long)]
        ledger: Option<PathBuf>,
    },
    /// Every algorithm × budget × repetition; writes the configured outputs.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Horizon sweep over square GridWorlds of these sizes.
        #[arg(long, value_delimiter = ',')]
        grid_sizes: Option<Vec<usize>>,
    },
    /// Hyperparameter search over the navigator and Beat-the-Mean settings.
    GridSearch {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',')]
        lr: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        ucb_ratio: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        btm_gamma: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        explore_prob: Option<Vec<f64>>,
        /// Write the full table as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render the SVG plot of a record CSV.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Start a labeling session and serve the HTTP API.
    Serve {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// JSON-lines label log to append to.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Replay the answers of `--resume-session` from this log first.
        #[arg(long)]
        resume_from: Option<PathBuf>,
        #[arg(long)]
        resume_session: Option<String>,
        /// Static files served on every non-API path.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        /// Stop once the session's run ends.
        #[arg(long)]
        exit_when_done: bool,
    },
}

/// Flags that override keys of the configuration file.
#[derive(Args, Default)]
struct ConfigArgs {
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    /// Environment generator (`gridworld`, `random_mdp`, `tiny`, `counterexample`, `file`).
    #[arg(long)]
    generator: Option<String>,
    #[arg(long)]
    size: Option<i64>,
    #[arg(long)]
    blocks: Option<i64>,
    #[arg(long)]
    block_reward: Option<f64>,
    #[arg(long)]
    env_file: Option<PathBuf>,
    #[arg(long)]
    env_seed: Option<i64>,
    /// Preference model (`btl`, `linear`, `deterministic`).
    #[arg(long)]
    model: Option<String>,
    /// BTL temperature or linear slope.
    #[arg(long)]
    c: Option<f64>,
    /// Algorithms, replacing the configured list.
    #[arg(long, value_delimiter = ',')]
    algo: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    budgets: Option<Vec<i64>>,
    #[arg(long, value_delimiter = ',')]
    budget_multiples: Option<Vec<i64>>,
    #[arg(long)]
    repetitions: Option<i64>,
    #[arg(long)]
    base_seed: Option<i64>,
    /// Write 0 for wall-clock time so outputs are reproducible.
    #[arg(long)]
    no_wall_time: bool,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Any other key, as `dotted.key=value` with a TOML value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

struct CliError {
    kind: &'static str,
    message: String,
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        Self { kind: e.kind(), message: e.to_string() }
    }
}

impl From<pbrl_service::ServiceError> for CliError {
    fn from(e: pbrl_service::ServiceError) -> Self {
        Self { kind: e.kind(), message: e.to_string() }
    }
}

fn err(kind: &'static str, message: impl Into<String>) -> CliError {
    CliError { kind, message: message.into() }
}

fn table_mut<'a>(t: &'a mut Table, key: &str) -> Result<&'a mut Table, CliError> {
    t.entry(key)
        .or_insert_with(|| Value::Table(Table::new()))
        .as_table_mut()
        .ok_or_else(|| err("config", format!("{key} is not a table")))
}

fn parse_value(text: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(text.into()))
}

fn set_dotted(t: &mut Table, assignment: &str) -> Result<(), CliError> {
    let (key, value) =
        assignment.split_once('=').ok_or_else(|| err("usage", format!("--set expects KEY=VALUE, got {assignment}")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = t;
    for p in &parts[..parts.len() - 1] {
        cur = table_mut(cur, p)?;
    }
    cur.insert(parts[parts.len() - 1].into(), parse_value(value.trim()));
    Ok(())
}

fn ints(v: &[i64]) -> Value {
    Value::Array(v.iter().map(|&x| Value::Integer(x)).collect())
}

impl ConfigArgs {
    /// The configuration file with every flag applied.
    fn table(&self) -> Result<Table, CliError> {
        let mut t = match &self.config {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| HarnessError::io(p, e))?;
                toml::from_str::<Table>(&text).map_err(|e| err("config", e.to_string()))?
            }
            None => Table::new(),
        };
        if let Some(g) = &self.generator {
            let env = table_mut(&mut t, "env")?;
            if env.get("generator").and_then(Value::as_str) != Some(g) {
                env.clear();
            }
            env.insert("generator".into(), Value::String(g.clone()));
        }
        for (key, v) in [("size", self.size), ("blocks", self.blocks)] {
            if let Some(v) = v {
                table_mut(&mut t, "env")?.insert(key.into(), Value::Integer(v));
            }
        }
        if let Some(r) = self.block_reward {
            table_mut(&mut t, "env")?.insert("block_reward".into(), Value::Float(r));
        }
        if let Some(p) = &self.env_file {
            let env = table_mut(&mut t, "env")?;
            env.clear();
            env.insert("generator".into(), Value::String("file".into()));
            env.insert("path".into(), Value::String(p.to_string_lossy().into_owned()));
        }
        if let Some(m) = &self.model {
            let mut model = Table::new();
            model.insert("model".into(), Value::String(m.clone()));
            t.insert("model".into(), Value::Table(model));
        }
        if let Some(c) = self.c {
            let model = table_mut(&mut t, "model")?;
            let key = if model.get("model").and_then(Value::as_str) == Some("linear") { "slope" } else { "c" };
            model.insert(key.into(), Value::Float(c));
        }
        if let Some(algos) = &self.algo {
            let list = algos
                .iter()
                .map(|a| {
                    let mut e = Table::new();
                    e.insert("name".into(), Value::String(a.clone()));
                    Value::Table(e)
                })
                .collect();
            t.insert("algorithms".into(), Value::Array(list));
        }
        if let Some(b) = &self.budgets {
            t.insert("budgets".into(), Value::Table(Table::from_iter([("absolute".to_string(), ints(b))])));
        }
        if let Some(b) = &self.budget_multiples {
            t.insert("budgets".into(), Value::Table(Table::from_iter([("state_multiples".to_string(), ints(b))])));
        }
        for (key, v) in [("env_seed", self.env_seed), ("repetitions", self.repetitions), ("base_seed", self.base_seed)] {
            if let Some(v) = v {
                t.insert(key.into(), Value::Integer(v));
            }
        }
        if let Some(n) = &self.name {
            t.insert("name".into(), Value::String(n.clone()));
        }
        if self.no_wall_time {
            t.insert("record_wall_time".into(), Value::Boolean(false));
        }
        for (key, p) in [("csv", &self.csv), ("summary", &self.summary), ("plot", &self.plot)] {
            if let Some(p) = p {
                table_mut(&mut t, "output")?.insert(key.into(), Value::String(p.to_string_lossy().into_owned()));
            }
        }
        for s in &self.set {
            set_dotted(&mut t, s)?;
        }
        Ok(t)
    }

    fn experiment(&self) -> Result<ExperimentConfig, CliError> {
        let text = toml::to_string(&self.table()?).map_err(|e| err("config", e.to_string()))?;
        Ok(ExperimentConfig::from_toml(&text)?)
    }

    fn env(&self) -> Result<(EnvSpec, Option<u64>), CliError> {
        let t = self.table()?;
        let env = t.get("env").cloned().ok_or_else(|| err("config", "no environment configured"))?;
        let spec: EnvSpec = env.try_into().map_err(|e: toml::de::Error| err("config", e.to_string()))?;
        let seed = t.get("env_seed").and_then(Value::as_integer).map(|s| s as u64);
        Ok((spec, seed))
    }
}

fn print_json(value: &impl serde::Serialize) {
    print_text(&serde_json::to_string_pretty(value).expect("outputs serialize"));
}

fn print_text(text: &str) {
    use std::io::Write;
    // A closed stdout (e.g. piped into `head`) is not an error.
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e).into())
}

fn first_budget(config: &ExperimentConfig, budget: Option<u64>) -> Result<u64, CliError> {
    match budget {
        Some(b) => Ok(b),
        None => Ok(resolved_budgets(config)?[0]),
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenEnv { config, seed, out } => {
            let (spec, env_seed) = config.env()?;
            let mdp = spec.build(seed.or(env_seed).unwrap_or(0))?;
            match out {
                Some(p) => write_text(&p, &mdp.to_json())?,
                None => print_text(&mdp.to_json()),
            }
        }
        Command::Run { config, budget, seed, ledger } => {
            let config = config.experiment()?;
            let budget = first_budget(&config, budget)?;
            let seed = seed.unwrap_or(config.base_seed);
            let r = run_one_detailed(&config, &config.algorithms[0], budget, seed)?;
            if let (Some(p), Some(out)) = (&ledger, &r.output) {
                write_text(p, &out.ledger.to_json())?;
            }
            print_json(&json!({
                "record": r.record,
                "policy_hash": r.policy.digest(),
                "episodes": r.output.as_ref().map_or(0, |o| o.counters.episodes),
            }));
        }
        Command::Sweep { config, grid_sizes } => {
            let config = config.experiment()?;
            match grid_sizes {
                Some(sizes) => print_json(&h_sweep(&config, &sizes)?),
                None => {
                    let outcome = sweep(&config)?;
                    emit_outputs(&config, &outcome)?;
                    print_json(&json!({ "summary": outcome.summary, "failures": outcome.failures }));
                }
            }
        }
        Command::GridSearch { config, lr, ucb_ratio, btm_gamma, explore_prob, out } => {
            let config = config.experiment()?;
            let d = HyperGrid::default();
            let grid = HyperGrid {
                lr: lr.unwrap_or(d.lr),
                ucb_ratio: ucb_ratio.unwrap_or(d.ucb_ratio),
                btm_gamma: btm_gamma.unwrap_or(d.btm_gamma),
                explore_prob: explore_prob.unwrap_or(d.explore_prob),
            };
            let result = grid_search(&config, &grid)?;
            if let Some(p) = out {
                write_text(&p, &serde_json::to_string_pretty(&result).expect("results serialize"))?;
            }
            print_json(&json!({ "best": result.best, "points": result.table.len() }));
        }
        Command::Plot { csv, out } => plot_csv(&csv, &out)?,
        Command::Serve { config, budget, seed, addr, log, resume_from, resume_session, ui_dir, exit_when_done } => {
            let mut table = config.table()?;
            table.entry("model").or_insert_with(|| {
                Value::Table(Table::from_iter([("model".to_string(), Value::String("deterministic".into()))]))
            });
            let text = toml::to_string(&table).map_err(|e| err("config", e.to_string()))?;
            let config = ExperimentConfig::from_toml(&text)?;
            let budget = first_budget(&config, budget)?;
            let seed = seed.unwrap_or(config.base_seed);
            let env_seed = config.env_seed_for(seed);
            let states = config.env.build(env_seed)?.state_count();
            let algo = config.algorithms[0]
                .algo_config(budget, states, seed)
                .ok_or_else(|| err("config", "the random baseline asks no questions"))?;
            let spec = SessionSpec {
                name: Some(config.name.clone()),
                env: config.env.clone(),
                env_seed,
                algo,
                log,
                resume_from,
                resume_session,
            };
            let runtime = tokio::runtime::Runtime::new().map_err(|e| err("io", e.to_string()))?;
            runtime.block_on(serve(spec, addr, ui_dir, exit_when_done))?;
        }
    }
    Ok(())
}

async fn serve(spec: SessionSpec, addr: SocketAddr, ui_dir: Option<PathBuf>, exit_when_done: bool) -> Result<(), CliError> {
    let service = PreferenceService::new();
    let listener = pbrl_service::http::bind(addr).await.map_err(|e| err("io", format!("{addr}: {e}")))?;
    let local = listener.local_addr().map_err(|e| err("io", e.to_string()))?;
    let session = service.start(spec)?;
    println!("{}", json!({ "listening": format!("http://{local}"), "session": session.id() }));
    let watched = session.clone();
    let shutdown = async move {
        let done = async {
            loop {
                if exit_when_done && watched.status().run != RunState::Running {
                    break;
                }
                tokio::time::sleep(std::time::Duration::from_millis(20)).await;
            }
        };
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = done => {}
        }
    };
    pbrl_service::http::serve(service.clone(), listener, ui_dir, shutdown)
        .await
        .map_err(|e| err("io", e.to_string()))?;
    service.close_all();
    let status = session.status();
    println!("{}", serde_json::to_string(&status).expect("statuses serialize"));
    match status.run {
        RunState::Failed { error } if exit_when_done => Err(err("algorithm", error)),
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            eprintln!("{}", json!({ "error": { "kind": "usage", "message": e.to_string() } }));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": { "kind": e.kind, "message": e.message } }));
            ExitCode::FAILURE
        }
    }
}
