//! `jrp`: run policies, compute offline optima, certify fitted duals and
//! generate instances.
//!
//! Exit codes: 0 success, 1 invalid input, 2 usage error, 3 a certificate
//! check failed.

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use jrp_core::dual::{build_dual, verify, CertReport, DualVariant};
use jrp_core::generators::{gen_pathological, gen_random, gen_tight, RandomParams, Range};
use jrp_core::oracle::{optimal_offline, OracleLimits};
use jrp_core::policy_multi::run_multi_item;
use jrp_core::policy_single::{run_single_item, SingleMode};
use jrp_core::{
    evaluate_schedule, evaluate_services, parse_instance, serialize_instance, CostBreakdown,
    Instance, JrpError, Ratio, Schedule,
};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(name = "jrp", version, about = "Online joint replenishment toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a policy on an instance and report its schedule and cost.
    Run(RunArgs),
    /// Build and verify the fitted dual for a policy's schedule.
    Certify(RunArgs),
    /// Compare a policy with the offline optimum, on a file or a seed range.
    Compare(CompareArgs),
    /// Write a generated instance.
    Gen(GenArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Single,
    SingleDeadline,
    Multi,
}

impl Policy {
    fn name(self) -> &'static str {
        match self {
            Policy::Single => "single",
            Policy::SingleDeadline => "single-deadline",
            Policy::Multi => "multi",
        }
    }

    fn variant(self) -> Option<DualVariant> {
        match self {
            Policy::Single => Some(DualVariant::Single),
            Policy::SingleDeadline => None,
            Policy::Multi => Some(DualVariant::Multi),
        }
    }

    fn run(self, instance: &Instance) -> jrp_core::Result<Schedule> {
        match self {
            Policy::Single => run_single_item(instance, SingleMode::Backlog),
            Policy::SingleDeadline => run_single_item(instance, SingleMode::Deadline),
            Policy::Multi => run_multi_item(instance),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum)]
    policy: Policy,
    /// Instance file.
    #[arg(long = "in")]
    input: PathBuf,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also compute the offline optimum (small instances only).
    #[arg(long)]
    oracle: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, value_enum)]
    policy: Policy,
    /// Instance file; exclusive with --seeds.
    #[arg(
        long = "in",
        conflicts_with = "seeds",
        required_unless_present = "seeds"
    )]
    input: Option<PathBuf>,
    /// Half-open seed range `A..B` of random instances; prints CSV.
    #[arg(long)]
    seeds: Option<SeedRange>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accepted for symmetry with `run`; comparison always uses the oracle.
    #[arg(long)]
    oracle: bool,
    #[command(flatten)]
    random: RandomArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Tight,
    Pathological,
    Random,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long = "gen", value_enum)]
    kind: GenKind,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Service cost of the tight instance.
    #[arg(long = "s", default_value_t = 2)]
    s: u64,
    /// Number of deadline groups of the tight instance.
    #[arg(long = "K", default_value_t = 3)]
    k: u64,
    /// Size of the pathological instance.
    #[arg(long = "N", default_value_t = 4)]
    n: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    random: RandomArgs,
}

#[derive(Args, Clone)]
struct RandomArgs {
    #[arg(long, default_value_t = 1)]
    items: usize,
    #[arg(long, default_value_t = 6)]
    requests: usize,
    /// Latest arrival and deadline (default 8 for one item, 3 otherwise).
    #[arg(long)]
    horizon: Option<Ratio>,
    #[arg(long = "max-den")]
    max_den: Option<u64>,
    /// Ranges as `LO..HI`, inclusive.
    #[arg(long = "root-cost")]
    root_cost: Option<CostRange>,
    #[arg(long = "item-cost")]
    item_cost: Option<CostRange>,
    #[arg(long = "hold-rate")]
    hold_rate: Option<CostRange>,
    #[arg(long = "backlog-rate")]
    backlog_rate: Option<CostRange>,
    /// Hard deadlines (no backlog allowed); single item only.
    #[arg(long = "hard-deadlines")]
    hard_deadlines: bool,
}

impl RandomArgs {
    fn params(&self, seed: u64) -> RandomParams {
        let base = if self.items == 1 {
            RandomParams::single(seed, self.requests)
        } else {
            RandomParams::multi(seed, self.items, self.requests)
        };
        let pick = |r: &Option<CostRange>, d: Range| r.clone().map_or(d, |c| c.0);
        RandomParams {
            time_horizon: self.horizon.clone().unwrap_or(base.time_horizon),
            max_denominator: self.max_den.unwrap_or(base.max_denominator),
            root_cost: pick(&self.root_cost, base.root_cost),
            item_cost: pick(&self.item_cost, base.item_cost),
            hold_rate: pick(&self.hold_rate, base.hold_rate),
            backlog_rate: pick(&self.backlog_rate, base.backlog_rate),
            infinite_backlog: self.hard_deadlines,
            ..base
        }
    }
}

#[derive(Clone)]
struct CostRange(Range);

impl FromStr for CostRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (lo, hi) = s.split_once("..").ok_or("expected LO..HI")?;
        let parse = |x: &str| Ratio::from_str(x.trim()).map_err(|e| e.to_string());
        Ok(CostRange(Range::new(parse(lo)?, parse(hi)?)))
    }
}

#[derive(Clone, Copy)]
struct SeedRange(u64, u64);

impl FromStr for SeedRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once("..").ok_or("expected A..B")?;
        let a: u64 = a.trim().parse().map_err(|_| format!("bad seed {a:?}"))?;
        let b: u64 = b.trim().parse().map_err(|_| format!("bad seed {b:?}"))?;
        if a > b {
            return Err("empty seed range".into());
        }
        Ok(SeedRange(a, b))
    }
}

/// Error carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<JrpError> for Failure {
    fn from(e: JrpError) -> Self {
        let code = match &e {
            JrpError::Usage(_) | JrpError::Capacity(_) => 2,
            JrpError::TraceCorruption(_) | JrpError::CertifierInvariant(_) => 3,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

#[derive(Serialize)]
struct ExactRatio {
    exact: Ratio,
    decimal: String,
}

impl ExactRatio {
    fn new(value: Ratio) -> Self {
        ExactRatio {
            decimal: value.to_decimal(6),
            exact: value,
        }
    }
}

#[derive(Serialize)]
struct CertSummary {
    all_pass: bool,
    dual_objective: Ratio,
    failed: Vec<String>,
}

#[derive(Serialize)]
struct RunReport {
    digest: String,
    policy: &'static str,
    schedule: Schedule,
    cost: CostBreakdown,
    services: Vec<CostBreakdown>,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle_cost: Option<Ratio>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ratio: Option<ExactRatio>,
    #[serde(skip_serializing_if = "Option::is_none")]
    certification: Option<CertSummary>,
}

fn digest(instance: &Instance) -> String {
    hex::encode(Sha256::digest(serialize_instance(instance).as_bytes()))
}

fn read_instance(path: &PathBuf) -> Result<Instance, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure {
        code: 1,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    Ok(parse_instance(&text)?)
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, format!("{text}\n")).map_err(|e| Failure {
            code: 1,
            message: format!("cannot write {}: {e}", p.display()),
        }),
        None => match writeln!(io::stdout(), "{text}") {
            Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(Failure {
                code: 1,
                message: format!("cannot write output: {e}"),
            }),
            _ => Ok(()),
        },
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize")
}

fn oracle_cost(instance: &Instance) -> jrp_core::Result<Ratio> {
    Ok(
        optimal_offline(instance, &OracleLimits::for_instance(instance))?
            .0
            .total,
    )
}

fn certify(
    policy: Policy,
    instance: &Instance,
    schedule: &Schedule,
    opt: Option<&Ratio>,
) -> Result<(CertReport, Ratio), Failure> {
    let variant = policy
        .variant()
        .ok_or_else(|| usage("no fitted dual is defined for the hard-deadline policy"))?;
    let dual = build_dual(instance, schedule, variant)?;
    Ok((verify(instance, schedule, &dual, opt), dual.objective))
}

fn run_report(
    policy: Policy,
    instance: &Instance,
    with_oracle: bool,
    with_cert: bool,
) -> Result<RunReport, Failure> {
    let schedule = policy.run(instance)?;
    let services = evaluate_services(instance, &schedule)?;
    let cost = evaluate_schedule(instance, &schedule)?;
    let oracle = with_oracle.then(|| oracle_cost(instance)).transpose()?;
    let ratio = oracle.as_ref().map(|o| {
        if o.is_zero() {
            ExactRatio::new(Ratio::one())
        } else {
            ExactRatio::new(&cost.total / o)
        }
    });
    let certification = if with_cert && policy.variant().is_some() {
        let (rep, objective) = certify(policy, instance, &schedule, oracle.as_ref())?;
        Some(CertSummary {
            all_pass: rep.all_pass,
            dual_objective: objective,
            failed: rep.failed().map(|c| c.name.clone()).collect(),
        })
    } else {
        None
    };
    Ok(RunReport {
        digest: digest(instance),
        policy: policy.name(),
        schedule,
        cost,
        services,
        oracle_cost: oracle,
        ratio,
        certification,
    })
}

fn cert_exit(pass: bool) -> u8 {
    if pass {
        0
    } else {
        3
    }
}

fn csv_row(policy: Policy, params: &RandomParams) -> Result<(String, bool), Failure> {
    let instance = gen_random(params)?;
    let rep = run_report(policy, &instance, true, true)?;
    let (dual, pass) = match &rep.certification {
        Some(c) => (c.dual_objective.to_string(), Some(c.all_pass)),
        None => (String::new(), None),
    };
    let row = format!(
        "{},{},{},{},{},{}",
        params.seed,
        rep.cost.total,
        rep.oracle_cost
            .as_ref()
            .map(ToString::to_string)
            .unwrap_or_default(),
        rep.ratio
            .as_ref()
            .map(|r| r.exact.to_string())
            .unwrap_or_default(),
        dual,
        pass.map(|p| p.to_string()).unwrap_or_default(),
    );
    Ok((row, pass != Some(false)))
}

fn dispatch(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Run(a) => {
            let instance = read_instance(&a.input)?;
            let rep = run_report(a.policy, &instance, a.oracle, false)?;
            emit(&a.out, &to_json(&rep))?;
            Ok(0)
        }
        Command::Certify(a) => {
            let instance = read_instance(&a.input)?;
            let schedule = a.policy.run(&instance)?;
            let opt = a.oracle.then(|| oracle_cost(&instance)).transpose()?;
            let (rep, _) = certify(a.policy, &instance, &schedule, opt.as_ref())?;
            emit(&a.out, &to_json(&rep))?;
            Ok(cert_exit(rep.all_pass))
        }
        Command::Compare(a) => match (a.input, a.seeds) {
            (Some(path), _) => {
                let instance = read_instance(&path)?;
                let rep = run_report(a.policy, &instance, true, true)?;
                let pass = rep.certification.as_ref().is_none_or(|c| c.all_pass);
                emit(&a.out, &to_json(&rep))?;
                Ok(cert_exit(pass))
            }
            (None, Some(SeedRange(lo, hi))) => {
                let rows: Vec<(String, bool)> = (lo..hi)
                    .into_par_iter()
                    .map(|seed| csv_row(a.policy, &a.random.params(seed)))
                    .collect::<Result<_, _>>()?;
                let mut text =
                    String::from("seed,alg_cost,opt,ratio,dual_objective,all_checks_pass");
                for (row, _) in &rows {
                    text.push('\n');
                    text.push_str(row);
                }
                emit(&a.out, &text)?;
                Ok(cert_exit(rows.iter().all(|(_, ok)| *ok)))
            }
            (None, None) => Err(usage("compare needs --in or --seeds")),
        },
        Command::Gen(a) => {
            let instance = match a.kind {
                GenKind::Tight => gen_tight(a.s, a.k)?,
                GenKind::Pathological => gen_pathological(a.n)?,
                GenKind::Random => gen_random(&a.random.params(a.seed))?,
            };
            emit(&a.out, &serialize_instance(&instance))?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
