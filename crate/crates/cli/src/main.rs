mod batch;
mod scenario;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sjtlab_core::approx::{audit_speedup, change_set, speedup_for_obedience, Delta02Approximation};
use sjtlab_core::boxpromo;
use sjtlab_core::costfn::{check_benign, markers, sum_benign, BenignBound, CostApproximation};
use sjtlab_core::rational::{fmt_q, parse_q};
use sjtlab_core::synth;
use sjtlab_core::{Error, Result, Q};

use scenario::Kind;

#[derive(Parser)]
#[command(
    name = "sjtlab",
    version,
    about = "Box promotion and cost-function synthesis laboratory"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Stage horizon; overrides the scenario file.
    #[arg(long, global = true)]
    horizon: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Thresholds such as 1/2; repeat or separate with commas.
    #[arg(long, global = true, value_delimiter = ',')]
    eps: Vec<String>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Format {
    Table,
    Machine,
}

#[derive(Subcommand)]
enum Command {
    /// Box-promotion engine.
    Boxpromo {
        #[command(subcommand)]
        op: BoxpromoOp,
    },
    /// Cost-function synthesis engine.
    Synth {
        #[command(subcommand)]
        op: SynthOp,
    },
    /// Cost-function calculus on table files.
    Costfn {
        #[command(subcommand)]
        op: CostfnOp,
    },
    /// Δ⁰₂ approximations: change sets and speed-ups.
    Approx {
        #[command(subcommand)]
        op: ApproxOp,
    },
    /// Batteries of randomized checks.
    Verify {
        #[command(subcommand)]
        op: VerifyOp,
    },
}

#[derive(Subcommand)]
enum BoxpromoOp {
    Run {
        scenario: PathBuf,
    },
    Fuzz {
        #[arg(long)]
        count: u64,
        #[arg(long, default_value_t = 4)]
        nmax: usize,
    },
}

#[derive(Subcommand)]
enum SynthOp {
    Run {
        scenario: PathBuf,
    },
    Fuzz {
        #[arg(long)]
        count: u64,
    },
}

#[derive(Subcommand)]
enum CostfnOp {
    /// Marker sequences of a cost table.
    Markers { table: PathBuf },
    /// Marker counts against a bound; takes a cost table or a costfn-check scenario.
    CheckBenign {
        input: PathBuf,
        /// Constant bound.
        #[arg(long, conflicts_with = "synth_k")]
        bound: Option<u64>,
        /// Use the synthesis closed form with this k.
        #[arg(long)]
        synth_k: Option<u32>,
    },
    /// Weighted sum of tables, each bounded by its own measured markers.
    Sum {
        #[arg(required = true)]
        tables: Vec<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ApproxOp {
    ChangeSet {
        approximation: PathBuf,
        /// Comma-separated increasing stages.
        #[arg(long, value_delimiter = ',')]
        speedup: Option<Vec<usize>>,
    },
    Speedup {
        /// Approximation to speed up.
        #[arg(long)]
        b: PathBuf,
        /// Approximation with the same limit that obeys `e`.
        #[arg(long)]
        bhat: PathBuf,
        /// Cost table to bound along the speed-up.
        #[arg(long)]
        d: PathBuf,
        /// Cost table with the same limit as `d`.
        #[arg(long)]
        e: PathBuf,
        /// Bound on the tail sum, e.g. 1 or 1/2.
        #[arg(long, default_value = "1")]
        budget: String,
        /// Number of values of h to construct.
        #[arg(long, default_value_t = 5)]
        required: usize,
    },
}

#[derive(Subcommand)]
enum VerifyOp {
    All {
        /// Run a fifth of each battery.
        #[arg(long)]
        quick: bool,
    },
}

/// A finished command: what to print and whether a claim failed.
struct Outcome {
    machine: String,
    table: String,
    violated: bool,
}

fn outcome<T: Serialize>(report: &T, table: String, violated: bool) -> Result<Outcome> {
    let machine =
        serde_json::to_string_pretty(report).map_err(|e| Error::Invariant(e.to_string()))?;
    Ok(Outcome {
        machine,
        table,
        violated,
    })
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Precondition(_) | Error::Rejected(_) | Error::Parse { .. } => 1,
        Error::Invariant(_) => 2,
        Error::HorizonExhausted(_) => 3,
    }
}

fn eps_or_default(c: &Common, fallback: Option<Vec<Q>>) -> Result<Vec<Q>> {
    if !c.eps.is_empty() {
        scenario::parse_eps(&c.eps)
    } else {
        Ok(fallback.unwrap_or_else(batch::default_eps))
    }
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn read_cost(p: &Path) -> Result<CostApproximation> {
    CostApproximation::parse(&scenario::read(p)?)
}

fn read_approx(p: &Path) -> Result<Delta02Approximation> {
    Delta02Approximation::parse(&scenario::read(p)?)
}

fn boxpromo_run(c: &Common, path: &Path) -> Result<Outcome> {
    let file = scenario::load(path)?;
    let sc = scenario::boxpromo(&file, c.horizon)?;
    let (_, rep) = boxpromo::run(&sc)?;
    let mut t = String::new();
    let _ = writeln!(
        t,
        "boxpromo  o={} nmax={} horizon={}",
        rep.o, rep.nmax, rep.horizon
    );
    let _ = writeln!(
        t,
        "{:>5} {:>4} {:>8} {:>9} {:>9}  lengths",
        "level", "g", "tested", "promoted", "conflicts"
    );
    for l in &rep.levels {
        let _ = writeln!(
            t,
            "{:>5} {:>4} {:>8} {:>9} {:>9}  {:?}",
            l.n,
            l.g,
            l.lengths.len(),
            l.promoted.len(),
            l.conflicts.len(),
            l.lengths
        );
    }
    let _ = writeln!(t, "witnesses: {}", rep.witnesses.len());
    match &rep.extraction {
        Some(x) => {
            let _ = writeln!(
                t,
                "extraction: rho*={} s_o={} stages={} sum={} bound={}",
                x.rho_star,
                x.s_o,
                x.stages.len(),
                x.obedience_sum,
                x.bucket_bound
            );
        }
        None => {
            let _ = writeln!(t, "extraction: none within horizon");
        }
    }
    for (k, v) in &rep.checks {
        let _ = writeln!(t, "{} {k}", verdict(*v));
    }
    let violated = rep.checks.values().any(|v| !v);
    outcome(&rep, t, violated)
}

fn fuzz_table(r: &batch::FuzzReport) -> String {
    let mut t = String::new();
    let _ = writeln!(
        t,
        "{} fuzz: {}/{} pass (seed {}, horizon {})",
        r.kind, r.passed, r.count, r.seed, r.horizon
    );
    for (k, v) in &r.tallies {
        let _ = writeln!(t, "  {k}: {v}");
    }
    for run in r.runs.iter().filter(|r| !r.pass) {
        let _ = writeln!(t, "FAIL #{} seed {}: {}", run.index, run.seed, run.detail);
    }
    t
}

fn synth_run(c: &Common, path: &Path) -> Result<Outcome> {
    let file = scenario::load(path)?;
    let (sc, file_eps) = scenario::synth(&file, c.horizon)?;
    let eps = eps_or_default(c, file_eps)?;
    let (st, rep) = synth::run(sc, &eps)?;
    let audits = (0..rep.requirements.len())
        .filter_map(|e| match synth::verify_final_accounting(&st, e) {
            Err(Error::Precondition(_)) => None,
            other => Some(other),
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = String::new();
    let _ = writeln!(
        t,
        "synth  k={} horizon={} stages={}",
        rep.k, rep.horizon, rep.last_stage
    );
    if let Some(h) = rep.halted {
        let _ = writeln!(
            t,
            "halted at stage {h}; c frozen (measured sum {})",
            rep.measured_sum
        );
    }
    let _ = writeln!(
        t,
        "f: m={} case1={} case2={} idle={}",
        rep.f.len() - 1,
        rep.case1_stages,
        rep.case2_stages,
        rep.idle_stages
    );
    for r in &rep.requirements {
        let _ = writeln!(
            t,
            "S{}: r frontier {} activity {}",
            r.e,
            r.r.len() as i64 - 1,
            r.activity
        );
    }
    let _ = writeln!(t, "W: {} pairs; g(1/2) = {}", rep.w.len(), rep.g_half);
    for e in &rep.benign.entries {
        let _ = writeln!(
            t,
            "{} eps={} markers={} bound={:?}",
            verdict(e.verdict),
            e.epsilon,
            e.count,
            e.bound
        );
    }
    for a in &audits {
        let _ = writeln!(
            t,
            "{} S{} accounting: total {} bound {}",
            verdict(a.pass),
            a.e,
            a.total,
            a.bound
        );
    }
    let violated = rep.checks.values().any(|v| !v) || audits.iter().any(|a| !a.pass);
    #[derive(Serialize)]
    struct Full<'a> {
        report: &'a synth::SynthReport,
        stages: &'a [synth::StageRecord],
        c: String,
        audits: Vec<synth::FinalAudit>,
    }
    let full = Full {
        report: &rep,
        stages: st.records(),
        c: st.cost_table().to_text(),
        audits,
    };
    outcome(&full, t, violated)
}

fn costfn_markers(c: &Common, path: &Path) -> Result<Outcome> {
    let table = read_cost(path)?;
    let eps = eps_or_default(c, None)?;
    let seqs = eps
        .iter()
        .map(|e| markers(&table, e))
        .collect::<Result<Vec<_>>>()?;
    let mut t = String::new();
    #[derive(Serialize)]
    struct Row {
        epsilon: String,
        markers: Vec<usize>,
        count: usize,
        truncated: bool,
    }
    let rows: Vec<Row> = seqs
        .iter()
        .map(|m| Row {
            epsilon: fmt_q(&m.epsilon),
            markers: m.markers.clone(),
            count: m.count(),
            truncated: m.truncated,
        })
        .collect();
    for r in &rows {
        let more = if r.truncated { " (truncated)" } else { "" };
        let _ = writeln!(
            t,
            "eps={} k={} markers={:?}{more}",
            r.epsilon, r.count, r.markers
        );
    }
    outcome(&rows, t, false)
}

fn costfn_check(
    c: &Common,
    input: &Path,
    bound: Option<u64>,
    synth_k: Option<u32>,
) -> Result<Outcome> {
    let (table, eps, bound, synth_k) = if input.extension().is_some_and(|e| e == "toml") {
        let file = scenario::load(input)?;
        scenario::expect_kind(&file, Kind::CostfnCheck)?;
        let spec = file
            .costfn
            .as_ref()
            .ok_or_else(|| Error::Rejected("missing [costfn] section".into()))?;
        let h = c.horizon.or(file.horizon).unwrap_or(40);
        let table = scenario::cost_from_spec(&spec.cost, h, h)?;
        let eps = eps_or_default(c, Some(scenario::parse_eps(&spec.eps)?))?;
        if bound.is_some() || synth_k.is_some() {
            (table, eps, bound, synth_k)
        } else {
            (table, eps, spec.bound, spec.synth_k)
        }
    } else {
        (read_cost(input)?, eps_or_default(c, None)?, bound, synth_k)
    };
    let g = match (bound, synth_k) {
        (_, Some(k)) => BenignBound::SynthClosedForm { k },
        (Some(b), None) => BenignBound::Const(b),
        (None, None) => return Err(Error::Rejected("give --bound or --synth-k".into())),
    };
    let cert = check_benign(&table, &g, &eps)?;
    let mut t = String::new();
    for e in &cert.entries {
        let _ = writeln!(
            t,
            "{} eps={} markers={} bound={:?}",
            verdict(e.verdict),
            e.epsilon,
            e.count,
            e.bound
        );
    }
    let violated = !cert.all_pass();
    outcome(&cert, t, violated)
}

fn costfn_sum(c: &Common, paths: &[PathBuf]) -> Result<Outcome> {
    let parts = paths
        .iter()
        .map(|p| read_cost(p).map(|t| (t.clone(), BenignBound::Measured(t))))
        .collect::<Result<Vec<_>>>()?;
    let (combined, g) = sum_benign(&parts)?;
    let eps = eps_or_default(c, None)?;
    let cert = check_benign(&combined, &g, &eps)?;
    let mut t = combined.to_text();
    for e in &cert.entries {
        let _ = writeln!(
            t,
            "# {} eps={} markers={} bound={:?}",
            verdict(e.verdict),
            e.epsilon,
            e.count,
            e.bound
        );
    }
    #[derive(Serialize)]
    struct Out {
        table: String,
        benign: sjtlab_core::costfn::BenignityCertificate,
    }
    let violated = !cert.all_pass();
    outcome(
        &Out {
            table: combined.to_text(),
            benign: cert,
        },
        t,
        violated,
    )
}

fn approx_change_set(path: &Path, speedup: Option<&[usize]>) -> Result<Outcome> {
    let a = read_approx(path)?;
    let w = change_set(&a, speedup)?;
    let rows = w.enumeration();
    let mut t = String::new();
    let _ = writeln!(
        t,
        "# stage x n  ({} pairs over {} stages)",
        w.len(),
        w.stages()
    );
    for (s, x, n) in &rows {
        let _ = writeln!(t, "{s} {x} {n}");
    }
    #[derive(Serialize)]
    struct Out {
        stages: usize,
        pairs: Vec<(usize, usize, usize)>,
    }
    outcome(
        &Out {
            stages: w.stages(),
            pairs: rows,
        },
        t,
        false,
    )
}

fn approx_speedup(
    b: &Path,
    bhat: &Path,
    d: &Path,
    e: &Path,
    budget: &str,
    required: usize,
) -> Result<Outcome> {
    let (b, bhat, d, e) = (
        read_approx(b)?,
        read_approx(bhat)?,
        read_cost(d)?,
        read_cost(e)?,
    );
    let budget =
        parse_q(budget).ok_or_else(|| Error::Rejected(format!("bad budget {budget:?}")))?;
    let out = speedup_for_obedience(&d, &e, &b, &bhat, &budget, required)?;
    audit_speedup(&d, &e, &b, &bhat, &out)?;
    let mut t = String::new();
    let _ = writeln!(t, "h = {:?} (first {} omitted)", out.h, out.omitted);
    let _ = writeln!(
        t,
        "full sum {}  tail sum {}  proof bound {}",
        fmt_q(&out.full_sum),
        fmt_q(&out.tail_sum),
        fmt_q(&out.proof_bound)
    );
    let violated = out.tail_sum > budget;
    outcome(&out, t, violated)
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    let c = &cli.common;
    match &cli.cmd {
        Command::Boxpromo { op } => match op {
            BoxpromoOp::Run { scenario } => boxpromo_run(c, scenario),
            BoxpromoOp::Fuzz { count, nmax } => {
                let r = batch::fuzz_boxpromo(*count, c.seed, c.horizon.unwrap_or(60), *nmax)?;
                outcome(&r, fuzz_table(&r), !r.all_pass())
            }
        },
        Command::Synth { op } => match op {
            SynthOp::Run { scenario } => synth_run(c, scenario),
            SynthOp::Fuzz { count } => {
                let eps = eps_or_default(c, None)?;
                let r = batch::fuzz_synth(*count, c.seed, c.horizon.unwrap_or(200), &eps)?;
                outcome(&r, fuzz_table(&r), !r.all_pass())
            }
        },
        Command::Costfn { op } => match op {
            CostfnOp::Markers { table } => costfn_markers(c, table),
            CostfnOp::CheckBenign {
                input,
                bound,
                synth_k,
            } => costfn_check(c, input, *bound, *synth_k),
            CostfnOp::Sum { tables } => costfn_sum(c, tables),
        },
        Command::Approx { op } => match op {
            ApproxOp::ChangeSet {
                approximation,
                speedup,
            } => approx_change_set(approximation, speedup.as_deref()),
            ApproxOp::Speedup {
                b,
                bhat,
                d,
                e,
                budget,
                required,
            } => approx_speedup(b, bhat, d, e, budget, *required),
        },
        Command::Verify { op } => match op {
            VerifyOp::All { quick } => {
                let r = batch::verify_all(c.seed, *quick)?;
                let mut t = String::new();
                for s in &r.sections {
                    let _ = writeln!(t, "{} {}: {}", verdict(s.pass), s.name, s.detail);
                }
                outcome(&r, t, !r.all_pass())
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(&cli) {
        Ok(out) => {
            let text = match cli.common.format {
                Format::Machine => out.machine + "\n",
                Format::Table => out.table,
            };
            match &cli.common.out {
                Some(p) => {
                    if let Err(e) = std::fs::write(p, text) {
                        eprintln!("error: {}: {e}", p.display());
                        return ExitCode::from(1);
                    }
                }
                None => print!("{text}"),
            }
            if out.violated {
                eprintln!("error: invariant check failed");
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
