//! Fuzzing drivers and the `verify all` battery. Each run gets its own
//! generator seeded with `seed + index`; results are merged by index.

use std::collections::BTreeMap;

use num::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sjtlab_core::approx::{audit_speedup, change_set, decode, speedup_for_obedience};
use sjtlab_core::boxpromo;
use sjtlab_core::costfn::{certified_prefix, obedience_sum, synth_benign_bound, totalize};
use sjtlab_core::gen;
use sjtlab_core::rational::q;
use sjtlab_core::synth;
use sjtlab_core::{Error, Result, Q};

#[derive(Clone, Debug, Serialize)]
pub struct FuzzRun {
    pub index: u64,
    pub seed: u64,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct FuzzReport {
    pub kind: String,
    pub count: u64,
    pub seed: u64,
    pub horizon: usize,
    pub passed: u64,
    pub failed: u64,
    pub tallies: BTreeMap<String, u64>,
    pub runs: Vec<FuzzRun>,
}

impl FuzzReport {
    fn new(
        kind: &str,
        count: u64,
        seed: u64,
        horizon: usize,
        rows: Vec<(FuzzRun, BTreeMap<String, u64>)>,
    ) -> Self {
        let mut tallies = BTreeMap::new();
        let mut runs = Vec::with_capacity(rows.len());
        for (run, t) in rows {
            for (k, v) in t {
                *tallies.entry(k).or_insert(0) += v;
            }
            runs.push(run);
        }
        let passed = runs.iter().filter(|r| r.pass).count() as u64;
        Self {
            kind: kind.into(),
            count,
            seed,
            horizon,
            passed,
            failed: count - passed,
            tallies,
            runs,
        }
    }

    pub fn all_pass(&self) -> bool {
        self.failed == 0
    }
}

fn check_count(count: u64) -> Result<()> {
    if count == 0 {
        return Err(Error::Rejected("fuzz count must be at least 1".into()));
    }
    Ok(())
}

fn rng_for(seed: u64, i: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(i))
}

fn failed_checks(checks: &BTreeMap<String, bool>) -> Vec<String> {
    checks
        .iter()
        .filter(|(_, v)| !**v)
        .map(|(k, _)| k.clone())
        .collect()
}

pub fn fuzz_boxpromo(count: u64, seed: u64, horizon: usize, nmax: usize) -> Result<FuzzReport> {
    check_count(count)?;
    let rows: Vec<_> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, i);
            let o = 1 + (i % 2) as usize;
            let mut tally = BTreeMap::new();
            let outcome = gen::boxpromo_scenario(&mut rng, o, nmax, horizon)
                .and_then(|sc| boxpromo::run(&sc));
            let (pass, detail) = match outcome {
                Ok((_, rep)) => {
                    let conflicts: usize = rep.levels.iter().map(|l| l.conflicts.len()).sum();
                    let promotions: usize = rep.levels.iter().map(|l| l.promoted.len()).sum();
                    tally.insert("conflicts".into(), conflicts as u64);
                    tally.insert("promotions".into(), promotions as u64);
                    tally.insert("witnesses".into(), rep.witnesses.len() as u64);
                    tally.insert("extractions".into(), rep.extraction.is_some() as u64);
                    let bad = failed_checks(&rep.checks);
                    if bad.is_empty() {
                        (
                            true,
                            format!("o={o} conflicts={conflicts} promotions={promotions}"),
                        )
                    } else {
                        (false, format!("failed checks: {}", bad.join(", ")))
                    }
                }
                Err(e) => (false, e.to_string()),
            };
            let run = FuzzRun {
                index: i,
                seed: seed.wrapping_add(i),
                pass,
                detail,
            };
            (run, tally)
        })
        .collect();
    Ok(FuzzReport::new("boxpromo", count, seed, horizon, rows))
}

pub fn default_eps() -> Vec<Q> {
    vec![q(1, 2), q(1, 4), q(1, 8)]
}

pub fn fuzz_synth(count: u64, seed: u64, horizon: usize, eps: &[Q]) -> Result<FuzzReport> {
    check_count(count)?;
    let rows: Vec<_> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, i);
            let k = (i % 3) as u32;
            let delayed = if i % 2 == 1 { 4 } else { 0 };
            let sc = gen::synth_scenario(&mut rng, k, horizon, 3, delayed);
            let mut tally = BTreeMap::new();
            let (pass, detail) = match synth::run(sc, eps) {
                Ok((st, rep)) => {
                    let mut bad = failed_checks(&rep.checks);
                    tally.insert("halted".into(), rep.halted.is_some() as u64);
                    tally.insert("case2_stages".into(), rep.case2_stages as u64);
                    if rep.halted.is_none() {
                        for e in 0..rep.requirements.len() {
                            match synth::verify_final_accounting(&st, e) {
                                Ok(a) => {
                                    *tally.entry("audits".into()).or_insert(0) += 1;
                                    *tally.entry("charges".into()).or_insert(0) +=
                                        a.charges.len() as u64;
                                    if !a.pass {
                                        bad.push(format!("final accounting e={e}"));
                                    }
                                }
                                Err(Error::Precondition(_)) => {}
                                Err(err) => bad.push(err.to_string()),
                            }
                        }
                    }
                    let counts: Vec<String> = rep
                        .benign
                        .entries
                        .iter()
                        .map(|e| e.count.to_string())
                        .collect();
                    if bad.is_empty() {
                        (
                            true,
                            format!("k={k} markers=[{}] m={}", counts.join(","), rep.f.len() - 1),
                        )
                    } else {
                        (false, bad.join("; "))
                    }
                }
                Err(e) => (false, e.to_string()),
            };
            let run = FuzzRun {
                index: i,
                seed: seed.wrapping_add(i),
                pass,
                detail,
            };
            (run, tally)
        })
        .collect();
    Ok(FuzzReport::new("synth", count, seed, horizon, rows))
}

#[derive(Clone, Debug, Serialize)]
pub struct Section {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn section(name: &str, pass: bool, detail: String) -> Section {
    Section {
        name: name.into(),
        pass,
        detail,
    }
}

fn dominance(seed: u64, count: u64) -> Section {
    let bad = (0..count)
        .into_par_iter()
        .filter(|&i| {
            let mut rng = rng_for(seed, i);
            let (s, x) = (rng.gen_range(2..30), rng.gen_range(1..10));
            let b = gen::total_approx(&mut rng, s, x);
            let d = gen::cost(&mut rng, s, 64);
            let w = change_set(&b, None).expect("identity speed-up");
            w.obedience_sum(&d) > obedience_sum(&d, &b) || decode(&w, b.row(0)) != *b.final_row()
        })
        .count();
    section(
        "change-set dominance",
        bad == 0,
        format!("{count} instances, {bad} violations"),
    )
}

fn speedups(seed: u64, count: u64) -> Section {
    let rows: Vec<(bool, bool, bool)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, i);
            let (d, e, b, bhat) = gen::speedup_instance(&mut rng, 80);
            if obedience_sum(&e, &bhat) > q(1, 4) {
                return (false, true, false);
            }
            match speedup_for_obedience(&d, &e, &b, &bhat, &q(1, 1), 4) {
                Ok(out) => {
                    let ok = out.tail_sum <= q(1, 1)
                        && out.full_sum <= out.proof_bound
                        && audit_speedup(&d, &e, &b, &bhat, &out).is_ok();
                    (true, ok, false)
                }
                Err(Error::HorizonExhausted(_)) => (true, true, true),
                Err(_) => (true, false, false),
            }
        })
        .collect();
    let used = rows.iter().filter(|r| r.0).count();
    let bad = rows.iter().filter(|r| r.0 && !r.1).count();
    let exhausted = rows.iter().filter(|r| r.2).count();
    section(
        "speed-up",
        bad == 0,
        format!("{used} eligible instances, {exhausted} horizon exhausted, {bad} violations"),
    )
}

fn totalization(seed: u64, count: u64) -> Section {
    let bad = (0..count)
        .into_par_iter()
        .filter(|&i| {
            let mut rng = rng_for(seed, i);
            let p = gen::partial_cost(&mut rng, 12, 10);
            let c = totalize(&p, 16, 10);
            if c.check_invariants().is_err() {
                return true;
            }
            (0..16).any(|s| match certified_prefix(&p, s) {
                Some(t) => (0..=t.min(9)).any(|x| p.probe(t, x, s as u64) != Some(&c.value(s, x))),
                None => (0..10).any(|x| !c.value(s, x).is_zero()),
            })
        })
        .count();
    section(
        "totalization",
        bad == 0,
        format!("{count} partial tables, {bad} violations"),
    )
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub sections: Vec<Section>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.sections.iter().all(|s| s.pass)
    }
}

pub fn verify_all(seed: u64, quick: bool) -> Result<VerifyReport> {
    let scale_n = |n: u64| if quick { (n / 5).max(1) } else { n };
    let bp = fuzz_boxpromo(scale_n(100), seed, 60, 4)?;
    let sy = fuzz_synth(scale_n(50), seed, 200, &default_eps())?;
    let g = synth_benign_bound(0, &q(1, 2));
    let sections = vec![
        section(
            "boxpromo fuzz",
            bp.all_pass(),
            format!(
                "{}/{} runs pass, {} conflicts",
                bp.passed,
                bp.count,
                bp.tallies.get("conflicts").unwrap_or(&0)
            ),
        ),
        section(
            "synth fuzz",
            sy.all_pass(),
            format!("{}/{} runs pass", sy.passed, sy.count),
        ),
        section("closed form g(1/2), k = 0", g == 163, format!("{g}")),
        dominance(seed, scale_n(300)),
        speedups(seed, scale_n(100)),
        totalization(seed, scale_n(100)),
    ];
    Ok(VerifyReport { seed, sections })
}
