use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use riskreach_core::analysis::{
    curve_csv, curve_export, empirical_points, summarize_participant, uniform_grid, CurveModel, SummaryConfig,
};
use riskreach_core::estimation::{FitConfig, PosteriorConfig};
use riskreach_core::model::{BlrParams, CptParams, PayoffSpec};
use riskreach_core::protocol::{parse_jsonl, simulate_session, AgentKind, AgentSpec, Order, ProtocolConfig};

/// Bad flags or arguments; maps to exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "riskreach", version, about = "Simulate, fit and serve relax-or-compensate reaching sessions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one participant's session and write its JSONL log.
    Simulate(SimulateArgs),
    /// Fit both choice models to every participant in a JSONL log.
    Fit(FitArgs),
    /// Print block-level compensation probabilities.
    Analyze(AnalyzeArgs),
    /// Sample a choice curve as CSV.
    Curve(CurveArgs),
    /// Run the HTTP session service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AgentArg {
    AlwaysHa1,
    AlwaysHa2,
    Threshold,
    Cpt,
    Blr,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModelArg {
    Cpt,
    Blr,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub agent: AgentArg,
    /// Comma-separated parameters: `alpha,beta,c,lambda` for cpt,
    /// `beta0,beta1` for blr, the switch level for threshold.
    #[arg(long)]
    pub theta: Option<String>,
    /// asc, desc or random.
    #[arg(long, default_value = "asc")]
    pub order: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed of the agent's own choice noise; defaults to `--seed`.
    #[arg(long)]
    pub agent_seed: Option<u64>,
    #[arg(long, default_value = "P01")]
    pub participant: String,
    /// Protocol configuration as JSON; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Where to write the configuration actually used.
    #[arg(long)]
    pub config_out: Option<PathBuf>,
    /// Output file; stdout when omitted or `-`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// JSONL log; stdin when omitted or `-`.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub starts: usize,
    /// Posterior chains; 0 skips sampling.
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
    #[arg(long, default_value_t = 1000)]
    pub warmup: usize,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Emit JSON instead of a text table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[arg(long)]
    pub theta: String,
    #[arg(long, default_value_t = 101)]
    pub points: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    /// Directory for session logs; nothing is persisted when unset.
    #[arg(long, env = "RISKREACH_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    /// Multi-start count for live CPT fits.
    #[arg(long, default_value_t = 16)]
    pub starts: usize,
}

fn parse_theta<const N: usize>(raw: &str, names: &str) -> anyhow::Result<[f64; N]> {
    let values: Vec<f64> = raw
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| usage(format!("--theta {raw:?}: {e}")))?;
    values.try_into().map_err(|v: Vec<f64>| usage(format!("--theta expects {N} values ({names}), got {}", v.len())))
}

fn cpt_theta(raw: &str) -> anyhow::Result<CptParams> {
    Ok(CptParams::from_array(parse_theta::<4>(raw, "alpha,beta,c,lambda")?))
}

fn blr_theta(raw: &str) -> anyhow::Result<BlrParams> {
    let [b0, b1] = parse_theta::<2>(raw, "beta0,beta1")?;
    Ok(BlrParams::new(b0, b1))
}

pub fn agent_from_args(agent: AgentArg, theta: Option<&str>, seed: u64) -> anyhow::Result<AgentSpec> {
    let need = |what: &str| theta.ok_or_else(|| usage(format!("--agent {what} requires --theta")));
    let kind = match agent {
        AgentArg::AlwaysHa1 => AgentKind::AlwaysRelax,
        AgentArg::AlwaysHa2 => AgentKind::AlwaysCompensate,
        AgentArg::Threshold => AgentKind::StepThreshold { threshold: parse_theta::<1>(need("threshold")?, "threshold")?[0] },
        AgentArg::Cpt => {
            let params = cpt_theta(need("cpt")?)?;
            AgentKind::Cpt { params, payoff: PayoffSpec::normalized(params.cost) }
        }
        AgentArg::Blr => AgentKind::Blr { params: blr_theta(need("blr")?)? },
    };
    AgentSpec::new(kind, seed).map_err(|e| usage(e.to_string()))
}

fn read_input(path: Option<&Path>) -> anyhow::Result<String> {
    match path {
        Some(p) if p != Path::new("-") => fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
        _ => {
            let mut s = String::new();
            io::stdin().read_to_string(&mut s)?;
            Ok(s)
        }
    }
}

fn write_output(path: Option<&Path>, contents: &str) -> anyhow::Result<()> {
    match path {
        Some(p) if p != Path::new("-") => fs::write(p, contents).with_context(|| format!("writing {}", p.display())),
        _ => {
            io::stdout().write_all(contents.as_bytes())?;
            Ok(())
        }
    }
}

pub fn simulate(args: &SimulateArgs) -> anyhow::Result<()> {
    let agent = agent_from_args(args.agent, args.theta.as_deref(), args.agent_seed.unwrap_or(args.seed))?;
    let order: Order = args.order.parse().map_err(|e: riskreach_core::Error| usage(e.to_string()))?;
    let config = match &args.config {
        Some(p) => serde_json::from_str::<ProtocolConfig>(&fs::read_to_string(p)?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => ProtocolConfig::default(),
    }
    .with_order(order);
    config.validate().map_err(|e| usage(e.to_string()))?;
    let log = simulate_session(&agent, &config, args.seed, &args.participant)?;
    if let Some(p) = &args.config_out {
        fs::write(p, serde_json::to_string_pretty(&config)? + "\n")?;
    }
    write_output(args.out.as_deref(), &log.to_jsonl())
}

pub fn fit(args: &FitArgs) -> anyhow::Result<()> {
    if args.starts == 0 {
        return Err(usage("--starts must be positive"));
    }
    let logs = parse_jsonl(&read_input(args.input.as_deref())?)?;
    let posterior = (args.chains > 0).then(|| PosteriorConfig {
        chains: args.chains,
        warmup: args.warmup,
        samples: args.samples,
        seed: args.seed,
        ..PosteriorConfig::default()
    });
    let config = SummaryConfig {
        fit: FitConfig { starts: args.starts, seed: args.seed, ..FitConfig::default() },
        posterior,
        ..SummaryConfig::default()
    };
    let summaries = logs.iter().map(|log| summarize_participant(log, &config)).collect::<Result<Vec<_>, _>>()?;
    write_output(args.out.as_deref(), &(serde_json::to_string_pretty(&summaries)? + "\n"))
}

pub fn analyze(args: &AnalyzeArgs) -> anyhow::Result<()> {
    let logs = parse_jsonl(&read_input(args.input.as_deref())?)?;
    let mut out = String::new();
    if args.json {
        let rows = logs
            .iter()
            .map(|log| Ok(serde_json::json!({ "participant_id": log.participant_id, "empirical_p2": empirical_points(log)? })))
            .collect::<anyhow::Result<Vec<_>>>()?;
        out = serde_json::to_string_pretty(&rows)? + "\n";
    } else {
        out.push_str("participant_id\tround\tp_r\ttrials\tp2\n");
        for log in &logs {
            for pt in empirical_points(log)? {
                out.push_str(&format!("{}\t{}\t{}\t{}\t{:.3}\n", log.participant_id, pt.round, pt.p_r, pt.trials, pt.p2));
            }
        }
    }
    write_output(None, &out)
}

pub fn curve(args: &CurveArgs) -> anyhow::Result<()> {
    if args.points < 2 {
        return Err(usage("--points must be at least 2"));
    }
    let model = match args.model {
        ModelArg::Cpt => {
            let params = cpt_theta(&args.theta)?;
            CurveModel::Cpt { params, payoff: PayoffSpec::normalized(params.cost) }
        }
        ModelArg::Blr => CurveModel::Blr { params: blr_theta(&args.theta)? },
    };
    write_output(args.out.as_deref(), &curve_csv(&curve_export(&model, &uniform_grid(args.points))))
}

pub fn serve(args: &ServeArgs) -> anyhow::Result<()> {
    if let Some(dir) = &args.data_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let state = crate::service::AppState::new(
        args.data_dir.clone(),
        FitConfig { starts: args.starts, ..FitConfig::default() },
    );
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.addr).await.with_context(|| format!("binding {}", args.addr))?;
        eprintln!("listening on {}", listener.local_addr()?);
        axum::serve(listener, crate::service::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Analyze(a) => analyze(a),
        Command::Curve(a) => curve(a),
        Command::Serve(a) => serve(a),
    }
}

/// 0 on success, 2 for usage errors, 1 for anything else.
pub fn exit_code(result: &anyhow::Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => 2,
        Err(_) => 1,
    }
}
