//! TOML scenario files.

use std::path::Path;

use serde::Deserialize;
use sjtlab_core::approx::Delta02Approximation;
use sjtlab_core::bitstr::BinaryString;
use sjtlab_core::boxpromo::{measured_g, Scenario};
use sjtlab_core::costfn::CostApproximation;
use sjtlab_core::rational::parse_q;
use sjtlab_core::synth::{Requirement, SynthScenario};
use sjtlab_core::tracer::{BoxLayout, TraceOracle};
use sjtlab_core::{Error, Result, Q};

#[derive(Debug, Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Boxpromo,
    Synth,
    CostfnCheck,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub kind: Kind,
    pub seed: Option<u64>,
    pub horizon: Option<usize>,
    pub boxpromo: Option<BoxpromoSpec>,
    pub synth: Option<SynthSpec>,
    pub costfn: Option<CostfnSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxpromoSpec {
    pub o: usize,
    pub nmax: usize,
    /// Measured from the cost table when absent.
    pub g: Option<Vec<usize>>,
    pub cost: String,
    pub ground_truth: Option<String>,
    pub oracle: OracleSpec,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase", deny_unknown_fields)]
pub enum OracleSpec {
    Honest { delay: Option<usize> },
    Silent,
    Scripted { script: String },
    Random { seed: Option<u64> },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub k: u32,
    pub approximation: String,
    pub eps: Option<Vec<String>>,
    #[serde(default)]
    pub requirement: Vec<RequirementSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequirementSpec {
    pub cost: String,
    /// `[value, observed at stage]` pairs.
    pub h: Vec<[usize; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostfnSpec {
    pub cost: String,
    pub eps: Vec<String>,
    pub bound: Option<u64>,
    pub synth_k: Option<u32>,
}

pub fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Rejected(format!("{}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<ScenarioFile> {
    let text = read(path)?;
    toml::from_str(&text).map_err(|e| {
        let line = e
            .span()
            .map(|sp| text[..sp.start.min(text.len())].lines().count().max(1))
            .unwrap_or(0);
        Error::Parse {
            line,
            msg: e.message().to_string(),
        }
    })
}

pub fn parse_eps(list: &[String]) -> Result<Vec<Q>> {
    list.iter()
        .map(|t| match parse_q(t) {
            Some(v) if v > Q::default() => Ok(v),
            _ => Err(Error::Rejected(format!("bad threshold {t:?}"))),
        })
        .collect()
}

/// `static` (`2^{-x}`), `zero`, or a table in the cost text format.
pub fn cost_from_spec(spec: &str, horizon: usize, width: usize) -> Result<CostApproximation> {
    match spec.trim() {
        "static" => Ok(CostApproximation::static_pow2(horizon, width)),
        "zero" => Ok(CostApproximation::zero(horizon, width)),
        text => CostApproximation::parse(text),
    }
}

fn bits(word: &str) -> Result<BinaryString> {
    if !word.chars().all(|c| c == '0' || c == '1') {
        return Err(Error::Rejected(format!("bad binary word {word:?}")));
    }
    Ok(BinaryString::from_bits(word.chars().map(|c| c == '1')))
}

fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T> {
    s.as_ref()
        .ok_or_else(|| Error::Rejected(format!("missing [{name}] section")))
}

pub fn expect_kind(f: &ScenarioFile, kind: Kind) -> Result<()> {
    if f.kind != kind {
        return Err(Error::Rejected(format!(
            "scenario kind is {:?}, expected {kind:?}",
            f.kind
        )));
    }
    Ok(())
}

pub fn boxpromo(f: &ScenarioFile, horizon: Option<usize>) -> Result<Scenario> {
    expect_kind(f, Kind::Boxpromo)?;
    let spec = section(&f.boxpromo, "boxpromo")?;
    let horizon = horizon.or(f.horizon).unwrap_or(60);
    let cost = cost_from_spec(&spec.cost, horizon, horizon)?;
    let g = match &spec.g {
        Some(g) => g.clone(),
        None => measured_g(&cost, spec.nmax, horizon)?,
    };
    let layout = BoxLayout::new(spec.o, spec.nmax, g)?;
    let ground_truth = spec.ground_truth.as_deref().map(bits).transpose()?;
    let need_truth = || {
        ground_truth
            .clone()
            .ok_or_else(|| Error::Rejected("this oracle policy needs ground_truth".into()))
    };
    let oracle = match &spec.oracle {
        OracleSpec::Honest { delay } => {
            TraceOracle::honest(need_truth()?, delay.unwrap_or(1), spec.o)
        }
        OracleSpec::Silent => TraceOracle::silent(spec.o),
        OracleSpec::Scripted { script } => TraceOracle::scripted(script, spec.o)?,
        OracleSpec::Random { seed } => TraceOracle::random(
            seed.or(f.seed).unwrap_or(0),
            &need_truth()?,
            &layout,
            horizon,
        ),
    };
    Ok(Scenario {
        layout,
        cost,
        horizon,
        ground_truth,
        oracle,
    })
}

pub fn synth(f: &ScenarioFile, horizon: Option<usize>) -> Result<(SynthScenario, Option<Vec<Q>>)> {
    expect_kind(f, Kind::Synth)?;
    let spec = section(&f.synth, "synth")?;
    let horizon = horizon.or(f.horizon).unwrap_or(200);
    let a = Delta02Approximation::parse(&spec.approximation)?;
    let requirements = spec
        .requirement
        .iter()
        .map(|r| {
            let cost = cost_from_spec(&r.cost, horizon, horizon)?;
            Requirement::new(cost, r.h.iter().map(|p| (p[0], p[1])).collect())
        })
        .collect::<Result<_>>()?;
    let eps = spec.eps.as_deref().map(parse_eps).transpose()?;
    Ok((
        SynthScenario {
            a,
            k: spec.k,
            requirements,
            horizon,
        },
        eps,
    ))
}
