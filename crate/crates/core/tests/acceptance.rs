//! Acceptance criteria 1–10. Each test prints one `criterion N: PASS|FAIL`
//! line and then asserts. All comparisons are exact rationals; counts are
//! exact integers. The oracles here recompute each quantity from the raw
//! tables and runs rather than calling the routine under test.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write as _;
use std::sync::OnceLock;

use num::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sjtlab_core::approx::{change_set, decode, speedup_for_obedience, Delta02Approximation};
use sjtlab_core::bitstr::BinaryString;
use sjtlab_core::boxpromo::{self, build_witness, find_rho_star, RunReport, RunState};
use sjtlab_core::costfn::{
    certified_prefix, check_benign, sum_benign, synth_benign_bound, totalize, BenignBound,
    CostApproximation, PartialCostTable,
};
use sjtlab_core::gen;
use sjtlab_core::rational::{pow2, pow2_neg, q};
use sjtlab_core::synth::{self, ChargeCase, SynthState};
use sjtlab_core::tracer::{prefix_of_real, real_prefix, BoxId, Policy, TraceOracle};
use sjtlab_core::{Error, Q};

const BOXPROMO_RUNS: u64 = 210;
const NMAX: usize = 4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Written straight to the stdout handle so the line shows even when the
/// harness captures test output.
fn report(n: usize, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stdout().lock(),
        "criterion {n}: {verdict} {detail}"
    );
    assert!(pass, "criterion {n}: {detail}");
}

// ---------------------------------------------------------------------------
// Independent reference implementations.

fn pair_code(x: usize, n: usize) -> usize {
    (x + n) * (x + n + 1) / 2 + n
}

fn least_diff(a: &BinaryString, b: &BinaryString) -> Option<usize> {
    let w = a.len().max(b.len());
    (0..w).find(|&i| (i < a.len() && a.bit(i)) != (i < b.len() && b.bit(i)))
}

/// `Σ_{s≥1} c_s(least x with rows[s-1](x) ≠ rows[s](x))`.
fn ref_obedience(c: &CostApproximation, rows: &[BinaryString]) -> Q {
    (1..rows.len())
        .filter_map(|s| least_diff(&rows[s - 1], &rows[s]).map(|x| c.value(s, x)))
        .fold(Q::zero(), |a, v| a + v)
}

/// `(x, n) ↦ index` of the n-th change of bit `x` along `rows`.
fn ref_change_set(rows: &[BinaryString]) -> BTreeMap<(usize, usize), usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut out = BTreeMap::new();
    for i in 1..rows.len() {
        let w = rows[i].len().max(rows[i - 1].len());
        for x in 0..w {
            let (a, b) = (
                x < rows[i - 1].len() && rows[i - 1].bit(x),
                x < rows[i].len() && rows[i].bit(x),
            );
            if a != b {
                let c = counts.entry(x).or_insert(0);
                *c += 1;
                out.insert((x, *c), i);
            }
        }
    }
    out
}

/// Least pair code entering at each index.
fn least_codes(w: &BTreeMap<(usize, usize), usize>) -> BTreeMap<usize, usize> {
    let mut out: BTreeMap<usize, usize> = BTreeMap::new();
    for (&(x, n), &i) in w {
        let code = pair_code(x, n);
        let e = out.entry(i).or_insert(code);
        *e = (*e).min(code);
    }
    out
}

/// Marker scan straight from the definition; a settled table repeats its
/// last row forever.
fn ref_marker_count(c: &CostApproximation, eps: &Q) -> usize {
    let last = c.horizon() - 1;
    let row = |s: usize| &c.rows()[s.min(last)];
    let val = |s: usize, x: usize| row(s).get(x).cloned().unwrap_or_else(Q::zero);
    let mut m = 0usize;
    let mut count = 1;
    loop {
        let next = (m + 1..=last).find(|&s| val(s, m) >= *eps);
        let next = match next {
            Some(s) => s,
            None if c.is_settled() && m >= last && val(last, m) >= *eps => m + 1,
            None => return count,
        };
        m = next;
        count += 1;
    }
}

/// `2 + 2^{k+N} + N²(1 + 2^N + 2^{k+N})` with `N` least such that `2^{-N} < ε/2`.
fn ref_closed_form(k: u32, eps: &Q) -> u64 {
    let half = eps / Q::from_integer(2.into());
    let n = (0u32..).find(|&n| pow2_neg(n) < half).unwrap();
    let (pkn, pn, n) = (1u64 << (k + n), 1u64 << n, n as u64);
    2 + pkn + n * n * (1 + pn + pkn)
}

fn ceil_neg_log2(eps: &Q) -> u32 {
    (0u32..).find(|&j| pow2_neg(j) <= *eps).unwrap()
}

fn check_monotone(c: &CostApproximation) -> bool {
    let r = c.rows();
    (0..r.len()).all(|s| {
        (0..r[s].len()).all(|x| {
            r[s][x] >= Q::zero()
                && r[s][x] <= Q::one()
                && (x == 0 || r[s][x] <= r[s][x - 1])
                && (s == 0 || r[s][x] >= r[s - 1][x])
        })
    })
}

// ---------------------------------------------------------------------------
// Box promotion runs shared by criteria 1–4.

struct BoxRun {
    index: u64,
    state: RunState,
    report: RunReport,
}

fn script_for(rng: &mut ChaCha8Rng, truth: &BinaryString, o: usize, horizon: usize) -> String {
    let mut text = String::new();
    let len = 2 * NMAX + 6;
    let base = real_prefix(truth, len);
    for n in o..=NMAX {
        let cap = n.max(o);
        let count = rng.gen_range(1..=cap);
        for _ in 0..count {
            let mut bits: Vec<bool> = base.bits().collect();
            if rng.gen_bool(0.7) {
                let p = rng.gen_range(0..len);
                bits[p] = !bits[p];
            }
            let w: String = bits.iter().map(|&b| if b { '1' } else { '0' }).collect();
            let _ = writeln!(
                text,
                "{} M{n} {w} {}",
                rng.gen_range(0..horizon / 3),
                rng.gen_range(0..=2)
            );
        }
        if count < cap {
            let k = rng.gen_range(1..=n + 1);
            let w: String = (0..len)
                .map(|_| if rng.gen_bool(0.5) { '1' } else { '0' })
                .collect();
            let _ = writeln!(text, "{} I{n}.{k} {w}", rng.gen_range(0..horizon));
        }
    }
    text
}

fn boxpromo_runs() -> &'static [BoxRun] {
    static RUNS: OnceLock<Vec<BoxRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        (0..BOXPROMO_RUNS)
            .map(|i| {
                let mut r = rng(1000 + i);
                let o = 1 + (i % 2) as usize;
                let horizon = 60 + 10 * (i % 5) as usize;
                let mut sc = gen::boxpromo_scenario(&mut r, o, NMAX, horizon).unwrap();
                let truth = sc.ground_truth.clone().unwrap();
                sc.oracle = match i % 3 {
                    0 => TraceOracle::honest(truth, (i / 3 % 3) as usize, o),
                    1 => TraceOracle::random(r.gen(), &truth, &sc.layout, horizon),
                    _ => TraceOracle::scripted(&script_for(&mut r, &truth, o, horizon), o).unwrap(),
                };
                let (state, report) = boxpromo::run(&sc).unwrap_or_else(|e| panic!("run {i}: {e}"));
                BoxRun {
                    index: i,
                    state,
                    report,
                }
            })
            .collect()
    })
}

/// Conflicted lengths at level `n`, stage `s`: two successful strings of
/// the same length agreeing below the previous length.
fn ref_conflicts(st: &RunState, n: usize, s: usize) -> usize {
    let lvl = st.level(n);
    let mut count = 0;
    for (k0, e) in lvl.lengths.iter().enumerate() {
        if e.added > s {
            break;
        }
        let below = if k0 == 0 { 0 } else { lvl.lengths[k0 - 1].len };
        let succ: Vec<&BinaryString> = e
            .sigmas
            .iter()
            .filter(|sg| sg.enumerated <= s && sg.success.is_some_and(|t| t <= s))
            .map(|sg| &sg.value)
            .collect();
        let hit = (0..succ.len()).any(|i| {
            (i + 1..succ.len())
                .any(|j| succ[i] != succ[j] && (0..below).all(|b| succ[i].bit(b) == succ[j].bit(b)))
        });
        count += hit as usize;
    }
    count
}

#[test]
fn criterion_1_conflict_bound() {
    let runs = boxpromo_runs();
    let mut violations = 0;
    let mut mismatches = 0;
    let mut total_conflicts = 0;
    let mut policies = BTreeSet::new();
    for run in runs {
        let st = &run.state;
        policies.insert(match st.oracle.policy {
            Policy::Honest { .. } => "honest",
            Policy::Scripted => "scripted",
            Policy::Random { .. } => "random",
        });
        for n in st.o()..=st.nmax() {
            for s in st.o()..=st.last_stage() {
                let c = ref_conflicts(st, n, s);
                if c != st.level(n).conflicts_at(s) {
                    mismatches += 1;
                }
                if c > n - 1 {
                    violations += 1;
                    eprintln!("run {}: level {n} stage {s} has {c} conflicts", run.index);
                }
            }
            total_conflicts += ref_conflicts(st, n, st.last_stage());
        }
    }
    let pass = runs.len() >= 200 && violations == 0 && mismatches == 0 && policies.len() == 3;
    report(
        1,
        pass,
        &format!(
            "{} runs, oracles {policies:?}, {total_conflicts} final conflicted lengths, {violations} over n-1, {mismatches} disagreements with the run state",
            runs.len()
        ),
    );
}

#[test]
fn criterion_2_witness_certification() {
    let runs = boxpromo_runs();
    let mut checked = 0;
    let mut failures = Vec::new();
    for run in runs {
        let st = &run.state;
        for n in st.o()..=st.nmax() {
            for s in n..=st.last_stage() {
                let conflicts = ref_conflicts(st, n, s);
                if conflicts == 0 {
                    continue;
                }
                checked += 1;
                let w = match build_witness(st, n, s) {
                    Ok(w) => w,
                    Err(e) => {
                        failures.push(format!("run {} n={n} s={s}: {e}", run.index));
                        continue;
                    }
                };
                let trace = st.trace_at(n, &w.nu, s).unwrap();
                let rows = &w.ledger;
                let ledger_ok = rows
                    .iter()
                    .all(|r| r.p == r.c_size as i64 - r.d_size as i64)
                    && rows.windows(2).all(|p| {
                        let (a, b) = (&p[0], &p[1]);
                        a.k + 1 == b.k && a.p >= b.p && (!a.conflict || a.p > b.p)
                    })
                    && rows.last().is_none_or(|r| !r.conflict || r.p > 0);
                let c1_antichain = w.c1.iter().enumerate().all(|(i, a)| {
                    w.c1.iter()
                        .skip(i + 1)
                        .all(|b| !a.is_prefix_of(b) && !b.is_prefix_of(a))
                });
                if w.conflicts != conflicts
                    || trace.len() < conflicts + 1
                    || trace.len() < w.c1.len()
                    || !ledger_ok
                    || !c1_antichain
                {
                    failures.push(format!(
                        "run {} n={n} s={s}: N={conflicts} |T|={} |C1|={} ledger_ok={ledger_ok}",
                        run.index,
                        trace.len(),
                        w.c1.len()
                    ));
                }
            }
        }
    }
    for f in failures.iter().take(5) {
        eprintln!("{f}");
    }
    report(
        2,
        checked > 0 && failures.is_empty(),
        &format!(
            "{checked} conflicted (run, level, stage) triples, {} witness failures",
            failures.len()
        ),
    );
}

fn random_nu(r: &mut ChaCha8Rng, n: usize, dims: usize) -> Vec<BTreeSet<usize>> {
    (0..dims)
        .map(|_| {
            let mut set = BTreeSet::new();
            for _ in 0..r.gen_range(0..=2) {
                set.insert(r.gen_range(1..=n));
            }
            set
        })
        .collect()
}

#[test]
fn criterion_3_capacity() {
    let runs = boxpromo_runs();
    let mut boxes = 0;
    let mut bad = Vec::new();
    for run in runs {
        let st = &run.state;
        let layout = &st.layout;
        let order = |id: &BoxId| layout.order(&layout.position(id)).unwrap();
        let mut r = rng(5000 + run.index);
        for n in st.o()..=st.nmax() {
            let lvl = st.level(n);
            if lvl.lengths.len() > n + layout.g(n) {
                bad.push(format!(
                    "run {} level {n}: {} lengths > n+g(n)",
                    run.index,
                    lvl.lengths.len()
                ));
            }
            for (k0, e) in lvl.lengths.iter().enumerate() {
                let id = BoxId::Initial { n, k: k0 + 1 };
                let cap = order(&id).max(st.o());
                let t = st.oracle.initial_trace(n, k0 + 1, e.len, e.added);
                boxes += 1;
                if t.len() > cap {
                    bad.push(format!(
                        "run {} I{n}.{}: |T| = {} > {cap}",
                        run.index,
                        k0 + 1,
                        t.len()
                    ));
                }
            }
            let mut nus: Vec<Vec<BTreeSet<usize>>> = (0..6)
                .map(|_| random_nu(&mut r, n, layout.dims(n)))
                .collect();
            nus.extend(
                run.report
                    .witnesses
                    .iter()
                    .filter(|w| w.n == n)
                    .map(|w| w.nu.clone()),
            );
            for nu in nus {
                let id = layout.box_coord(n, &nu).unwrap();
                let cap = order(&id).max(st.o());
                for s in [st.last_stage() / 2, st.last_stage()] {
                    let t = st.trace_at(n, &nu, s).unwrap();
                    boxes += 1;
                    if t.len() > cap {
                        bad.push(format!(
                            "run {} level {n} stage {s}: |T(z_ν)| = {} > {cap}",
                            run.index,
                            t.len()
                        ));
                    }
                }
            }
        }
    }
    for b in bad.iter().take(5) {
        eprintln!("{b}");
    }
    report(
        3,
        bad.is_empty(),
        &format!("{boxes} box traces checked, {} over capacity", bad.len()),
    );
}

/// Strings `n`-believable at `s`: extend `ρ*`, successfully tested at the
/// current length of level `n`, with every current-length restriction at
/// levels `o..=n` successfully tested.
fn ref_believable(st: &RunState, rho: &BinaryString, n: usize, s: usize) -> BTreeSet<BinaryString> {
    let lvl = st.level(n);
    let k = lvl.k_at(s);
    let mut out = BTreeSet::new();
    if k == 0 {
        return out;
    }
    let tested = |m: usize, kk: usize, sigma: &BinaryString| {
        st.level(m).lengths[kk - 1].sigmas.iter().any(|sg| {
            sg.value == *sigma && sg.enumerated <= s && sg.success.is_some_and(|t| t <= s)
        })
    };
    for sg in &lvl.lengths[k - 1].sigmas {
        let v = &sg.value;
        if !(sg.enumerated <= s && sg.success.is_some_and(|t| t <= s)) || !rho.is_prefix_of(v) {
            continue;
        }
        let ok = (st.o()..=n).all(|m| {
            let lm = st.level(m);
            (1..=lm.k_at(s)).all(|kk| {
                let len = lm.lengths[kk - 1].len;
                len <= v.len() && tested(m, kk, &v.restrict(len).unwrap())
            })
        });
        if ok {
            out.insert(v.clone());
        }
    }
    out
}

#[test]
fn criterion_4_believability_and_convergence() {
    let runs = boxpromo_runs();
    let mut uniq_checks = 0;
    let mut failures = Vec::new();
    let mut honest_extractions = 0;
    let mut honest_runs = 0;
    for run in runs {
        let st = &run.state;
        let Some(b) = find_rho_star(st) else { continue };
        for s in b.s_o..=st.last_stage() {
            for n in st.o()..=st.nmax() {
                let set = ref_believable(st, &b.rho_star, n, s);
                uniq_checks += 1;
                let lib = boxpromo::believable(st, &b, n, s);
                let agree = match (&lib, set.len()) {
                    (Ok(None), 0) => true,
                    (Ok(Some(v)), 1) => set.contains(v),
                    _ => false,
                };
                if set.len() > 1 || !agree {
                    failures.push(format!(
                        "run {} n={n} s={s}: {} believable strings",
                        run.index,
                        set.len()
                    ));
                }
            }
        }
        let Some(ex) = &run.report.extraction else {
            continue;
        };
        let listed = st.table.listed();
        let costs: Vec<Q> = ex
            .stages
            .iter()
            .skip(1)
            .map(|x| x.x.map_or_else(Q::zero, |x0| listed.value(x.t, x0)))
            .collect();
        for (i, x) in ex.stages.iter().enumerate().skip(1) {
            let prev = &ex.stages[i - 1].sigma;
            if least_diff(prev, &x.sigma) != x.x && !(x.x.is_none() && prev.is_prefix_of(&x.sigma))
            {
                failures.push(format!(
                    "run {} t={}: x_t does not match σ_t",
                    run.index, x.t
                ));
            }
        }
        for n in 0..=st.nmax() {
            let members = costs.iter().filter(|c| **c >= pow2_neg(n as u32)).count();
            if members > n + n * n.saturating_sub(1) / 2 {
                failures.push(format!("run {}: |S_{n}| = {members}", run.index));
            }
        }
        if let (Policy::Honest { delay }, Some(a)) = (&st.oracle.policy, &st.ground_truth) {
            if *delay <= 2 {
                honest_runs += 1;
                let prefixes = ex.stages.iter().all(|x| prefix_of_real(&x.sigma, a));
                let lengths_grow = ex
                    .stages
                    .windows(2)
                    .all(|p| p[0].sigma.len() <= p[1].sigma.len());
                if !prefixes || !lengths_grow {
                    failures.push(format!("run {}: honest extraction leaves A", run.index));
                }
                honest_extractions += (ex.stages.len() >= 2) as usize;
            }
        }
    }
    for f in failures.iter().take(5) {
        eprintln!("{f}");
    }
    let pass = failures.is_empty()
        && uniq_checks > 0
        && honest_runs > 0
        && honest_extractions * 2 >= honest_runs;
    report(
        4,
        pass,
        &format!(
            "{uniq_checks} (run, level, stage) uniqueness checks, {honest_extractions}/{honest_runs} honest runs extract ≥ 2 prefixes of A, {} failures",
            failures.len()
        ),
    );
}

// ---------------------------------------------------------------------------

fn dominance_instance(d: &CostApproximation, rows: &[BinaryString]) -> Result<(), String> {
    let b = Delta02Approximation::total(rows.to_vec()).map_err(|e| e.to_string())?;
    let w = change_set(&b, None).map_err(|e| e.to_string())?;
    let ours = ref_change_set(rows);
    let lib: BTreeMap<(usize, usize), usize> = w.pairs().collect();
    if lib != ours {
        return Err("change set differs from reference".into());
    }
    let w_sum = least_codes(&ours)
        .into_iter()
        .fold(Q::zero(), |acc, (s, code)| acc + d.value(s, code));
    if w_sum != w.obedience_sum(d) {
        return Err("W obedience sum differs from reference".into());
    }
    if w_sum > ref_obedience(d, rows) {
        return Err(format!("Σ d(W) = {w_sum} > Σ d(B)"));
    }
    let parity = |x: usize| ours.keys().filter(|(y, _)| *y == x).count() % 2 == 1;
    let decoded = BinaryString::from_bits((0..rows[0].len()).map(|x| rows[0].bit(x) ^ parity(x)));
    if decoded != *rows.last().unwrap() || decode(&w, &rows[0]) != decoded {
        return Err("decode does not give the final row".into());
    }
    Ok(())
}

#[test]
fn criterion_5_change_set_dominance() {
    let mut r = rng(77);
    let mut exhaustive = 0u64;
    let mut random = 0u64;
    let mut failures = Vec::new();
    for stages in 1..=4usize {
        for width in 0..=4usize {
            let words: Vec<BinaryString> = BinaryString::all_of_length(width).collect();
            let ds = [
                CostApproximation::static_pow2(stages, 32),
                gen::cost(&mut r, stages, 32),
            ];
            let total = words.len().pow(stages as u32);
            for code in 0..total {
                let mut c = code;
                let rows: Vec<BinaryString> = (0..stages)
                    .map(|_| {
                        let w = words[c % words.len()].clone();
                        c /= words.len();
                        w
                    })
                    .collect();
                for d in &ds {
                    exhaustive += 1;
                    if let Err(e) = dominance_instance(d, &rows) {
                        failures.push(format!("S={stages} X={width} #{code}: {e}"));
                    }
                }
            }
        }
    }
    for _ in 0..600 {
        let (s, x) = (r.gen_range(5..40), r.gen_range(5..12));
        let b = if r.gen_bool(0.5) {
            gen::total_approx(&mut r, s, x)
        } else {
            gen::settling_approx(&mut r, s, x, 2)
        };
        let d = gen::cost(&mut r, s, 128);
        random += 1;
        if let Err(e) = dominance_instance(&d, b.rows()) {
            failures.push(format!("random S={s} X={x}: {e}"));
        }
    }
    for f in failures.iter().take(5) {
        eprintln!("{f}");
    }
    report(
        5,
        failures.is_empty() && random >= 500,
        &format!(
            "{exhaustive} exhaustive (B, d) pairs with S, X ≤ 4, {random} random, {} failures",
            failures.len()
        ),
    );
}

#[test]
fn criterion_6_speedup() {
    let mut eligible = 0;
    let mut exhausted = 0;
    let mut failures = Vec::new();
    let mut seed = 0u64;
    while eligible < 120 && seed < 1000 {
        let mut r = rng(9000 + seed);
        seed += 1;
        let (d, e, b, bhat) = gen::speedup_instance(&mut r, 80);
        if ref_obedience(&e, bhat.rows()) > q(1, 4) {
            continue;
        }
        eligible += 1;
        let out = match speedup_for_obedience(&d, &e, &b, &bhat, &q(1, 1), 4) {
            Ok(out) => out,
            Err(Error::HorizonExhausted(msg)) => {
                exhausted += 1;
                eprintln!("seed {seed}: horizon exhausted: {msg}");
                continue;
            }
            Err(other) => {
                failures.push(format!("seed {seed}: {other}"));
                continue;
            }
        };
        let (mut t_prev, mut x_prev) = (1usize, 1usize);
        for step in &out.ledger {
            let t = step.t;
            let ok = t > t_prev
                && step.x > x_prev
                && d.value(t, step.x) < pow2_neg(step.s as u32 + 1)
                && (0..step.x).all(|y| b.bit(t, y) == bhat.bit(t, y))
                && (0..x_prev).all(|y| e.value(t, y) * Q::from_integer(2.into()) >= d.value(t, y));
            if !ok {
                failures.push(format!(
                    "seed {seed}: ledger step {} violates the search conditions",
                    step.s
                ));
            }
            t_prev = t;
            x_prev = step.x;
        }
        let h: Vec<usize> = out.ledger.iter().skip(1).map(|st| st.t).collect();
        if h != out.h || h.windows(2).any(|w| w[0] >= w[1]) {
            failures.push(format!("seed {seed}: h is not t_(s+1) or not increasing"));
        }
        let along = |hs: &[usize]| {
            let rows: Vec<BinaryString> = hs.iter().map(|&t| b.row(t).clone()).collect();
            ref_obedience(&d, &rows)
        };
        let tail = along(&h[out.omitted..]);
        let geom = (1..h.len()).fold(Q::zero(), |a, s| a + pow2_neg(s as u32));
        let proof = Q::from_integer(2.into()) * ref_obedience(&e, bhat.rows()) + geom;
        if tail != out.tail_sum || tail > q(1, 1) || along(&h) > proof {
            failures.push(format!("seed {seed}: tail {tail} / proof bound {proof}"));
        }
    }
    for f in failures.iter().take(5) {
        eprintln!("{f}");
    }
    report(
        6,
        eligible >= 100 && failures.is_empty(),
        &format!("{eligible} instances with Σe(B̂) ≤ 1/4, {exhausted} horizon exhausted (reported), {} failures", failures.len()),
    );
}

fn eps_list() -> Vec<Q> {
    vec![q(1, 2), q(1, 4), q(1, 8)]
}

#[test]
fn criterion_7_synth_benignity() {
    let mut runs = 0;
    let mut failures = Vec::new();
    let mut max_ratio = (0usize, 0u64);
    for i in 0..54u64 {
        let k = (i % 3) as u32;
        let mut r = rng(3000 + i);
        let sc = gen::synth_scenario(&mut r, k, 200, 3, if i % 2 == 1 { 4 } else { 0 });
        let (st, rep) = synth::run(sc, &eps_list()).unwrap();
        runs += 1;
        let c = st.cost_table();
        if !check_monotone(&c) {
            failures.push(format!("run {i}: c leaves [0,1] or is not monotone"));
        }
        for (eps, entry) in eps_list().iter().zip(&rep.benign.entries) {
            let ours = ref_marker_count(&c, eps);
            let bound = ref_closed_form(k, eps);
            if ours != entry.count || ours as u64 > bound {
                failures.push(format!(
                    "run {i} ε={eps}: markers {ours} (lib {}), bound {bound}",
                    entry.count
                ));
            }
            if ours > max_ratio.0 {
                max_ratio = (ours, bound);
            }
        }
    }
    let g = ref_closed_form(0, &q(1, 2));
    let pass =
        runs >= 50 && failures.is_empty() && g == 163 && synth_benign_bound(0, &q(1, 2)) == 163;
    for f in failures.iter().take(5) {
        eprintln!("{f}");
    }
    report(
        7,
        pass,
        &format!(
            "{runs} runs, k ∈ {{0,1,2}}, largest marker count {} (bound {}), g(1/2) = {g} at k = 0, {} failures",
            max_ratio.0,
            max_ratio.1,
            failures.len()
        ),
    );
}

/// `Σ_t dᵉ_t(y_t)` with `y_t` the least code entering the change set of
/// `⟨A_{f(n)}⟩` at an index in `(rᵉ(t−1), rᵉ(t)]`; also the number of
/// nonzero terms.
fn ref_final_sum(st: &SynthState, e: usize) -> (Q, usize) {
    let sc = st.scenario();
    let rows: Vec<BinaryString> = st.f().iter().map(|&u| sc.a.row(u).clone()).collect();
    let w = ref_change_set(&rows);
    let d = &sc.requirements[e].cost;
    let r = st.r(e);
    let mut sum = Q::zero();
    let mut terms = 0;
    for t in 1..r.len() {
        let y = w
            .iter()
            .filter(|(_, &i)| i > r[t - 1] && i <= r[t])
            .map(|(&(x, n), _)| pair_code(x, n))
            .min();
        if let Some(y) = y {
            let v = d.value(t, y);
            if !v.is_zero() {
                terms += 1;
                sum += v;
            }
        }
    }
    (sum, terms)
}

#[test]
fn criterion_8_final_accounting() {
    let mut scenarios = 0;
    let mut audits = 0;
    let mut charges = (0usize, 0usize);
    let mut failures = Vec::new();
    let mut seed = 0u64;
    while scenarios < 20 && seed < 80 {
        let i = seed;
        seed += 1;
        let k = (i % 3) as u32;
        let mut r = rng(7000 + i);
        let sc = gen::synth_scenario(&mut r, k, 500, 3, 0);
        let rows = sc.a.rows().to_vec();
        let mut st = SynthState::new(sc);
        st.run().unwrap();
        if st.halted().is_some() {
            continue;
        }
        let c = st.cost_table();
        if ref_obedience(&c, &rows[..=st.last_stage()]) > pow2(k) {
            continue;
        }
        let n_req = st.scenario().requirements.len();
        if (0..n_req).any(|e| *st.activity(e) > q(1, 1)) {
            continue;
        }
        scenarios += 1;
        for e in 0..n_req {
            audits += 1;
            let audit = match synth::verify_final_accounting(&st, e) {
                Ok(a) => a,
                Err(err) => {
                    failures.push(format!("seed {i} e={e}: {err}"));
                    continue;
                }
            };
            let (ours, terms) = ref_final_sum(&st, e);
            let bound = q(1, 1) + pow2(k + e as u32 + 1);
            let classified = audit.charges.len() == terms
                && audit.charges.iter().all(|ch| {
                    matches!(ch.case, ChargeCase::Persistent { .. })
                        != matches!(ch.case, ChargeCase::Transient { .. })
                });
            for ch in &audit.charges {
                match ch.case {
                    ChargeCase::Persistent { .. } => charges.0 += 1,
                    ChargeCase::Transient { .. } => charges.1 += 1,
                }
            }
            let frontier = st.r(e).len().saturating_sub(1);
            if frontier < 5
                || ours > bound
                || !classified
                || !audit.pass
                || !audit.claims_hold
                || audit.total != sjtlab_core::rational::fmt_q(&ours)
            {
                failures.push(format!(
                    "seed {i} e={e}: frontier {frontier}, sum {ours} (audit {}), bound {bound}, classified {classified}, claims {}",
                    audit.total, audit.claims_hold
                ));
            }
        }
    }
    for f in failures.iter().take(5) {
        eprintln!("{f}");
    }
    report(
        8,
        scenarios >= 20 && failures.is_empty(),
        &format!(
            "{scenarios} scenarios at horizon 500, {audits} requirements audited, {} persistent and {} transient charges, {} failures",
            charges.0,
            charges.1,
            failures.len()
        ),
    );
}

#[test]
fn criterion_9_sum_of_benign() {
    let mut families = 0;
    let mut failures = Vec::new();
    for fam in 0..10u64 {
        let parts_n = 1 + (fam % 5) as usize;
        let mut tables = Vec::new();
        for j in 0..parts_n {
            let mut r = rng(11000 + fam * 10 + j as u64);
            let sc = gen::synth_scenario(&mut r, j as u32, 80, 2, 0);
            let (st, _) = synth::run(sc, &eps_list()).unwrap();
            tables.push(st.cost_table());
        }
        let parts: Vec<(CostApproximation, BenignBound)> = tables
            .iter()
            .enumerate()
            .map(|(j, c)| (c.clone(), BenignBound::SynthClosedForm { k: j as u32 }))
            .collect();
        let (combined, g) = sum_benign(&parts).unwrap();
        families += 1;
        let horizon = tables.iter().map(|c| c.horizon()).min().unwrap();
        let width = tables.iter().map(|c| c.width()).max().unwrap();
        let ours_ok = combined.horizon() == horizon
            && (0..horizon).all(|s| {
                (0..width).all(|x| {
                    let v = tables
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j < s)
                        .fold(Q::zero(), |a, (j, c)| {
                            a + pow2_neg(j as u32) * c.value(s, x)
                        });
                    v == combined.value(s, x)
                })
            });
        if !ours_ok {
            failures.push(format!(
                "family {fam}: combined table differs from the weighted sum"
            ));
        }
        for eps in eps_list() {
            let big_k = ceil_neg_log2(&eps) as usize + 1;
            let quarter = &eps / Q::from_integer(4.into());
            let bound: u64 = (0..parts_n.min(big_k + 1))
                .map(|j| ref_closed_form(j as u32, &quarter))
                .sum();
            let count = ref_marker_count(&combined, &eps);
            let cert = check_benign(&combined, &g, std::slice::from_ref(&eps)).unwrap();
            if count as u64 > bound || g.eval(&eps) != Some(bound) || cert.entries[0].count != count
            {
                failures.push(format!(
                    "family {fam} ε={eps}: k(ε) = {count}, bound {bound}"
                ));
            }
        }
    }
    for f in failures.iter().take(5) {
        eprintln!("{f}");
    }
    report(
        9,
        failures.is_empty(),
        &format!(
            "{families} families of 1..=5 synthesized parts, {} failures",
            failures.len()
        ),
    );
}

/// Greatest `t ≤ s` with every cell of the square `u, x ≤ t` converging in
/// `s` steps to a value in `[0,1]`, monotone inside the square.
fn ref_certified(p: &PartialCostTable, s: usize) -> Option<usize> {
    let good = |t: usize| {
        let v = |u: usize, x: usize| {
            p.probe(u, x, s as u64)
                .filter(|v| **v >= Q::zero() && **v <= Q::one())
        };
        (0..=t).all(|u| {
            (0..=t).all(|x| {
                v(u, x).is_some_and(|val| {
                    (x == 0 || v(u, x - 1).is_some_and(|l| val <= l))
                        && (u == 0 || v(u - 1, x).is_some_and(|d| val >= d))
                })
            })
        })
    };
    (0..=s).take_while(|&t| good(t)).last()
}

#[test]
fn criterion_10_totalization() {
    let mut failures = Vec::new();
    let (mut divergent, mut violating) = (0, 0);
    let count = 120u64;
    for i in 0..count {
        let mut r = rng(13000 + i);
        let p = gen::partial_cost(&mut r, 12, 10);
        let (h, w) = (16, 10);
        let diverges = (0..12).any(|u| (0..10).any(|x| p.probe(u, x, u64::MAX).is_none()));
        let over = (0..12)
            .any(|u| (0..10).any(|x| p.probe(u, x, u64::MAX).is_some_and(|v| *v > Q::one())));
        divergent += diverges as usize;
        violating += over as usize;
        let c = totalize(&p, h, w);
        if !check_monotone(&c) || c.check_invariants().is_err() {
            failures.push(format!("input {i}: output violates an invariant"));
            continue;
        }
        for s in 0..h {
            let t = ref_certified(&p, s);
            if t != certified_prefix(&p, s) {
                failures.push(format!("input {i} s={s}: certified prefix differs"));
            }
            let agrees = (0..w).all(|x| {
                let want = match t {
                    Some(t) if x <= t => p.probe(t, x, s as u64).cloned().unwrap(),
                    _ => Q::zero(),
                };
                c.value(s, x) == want
            });
            if !agrees {
                failures.push(format!(
                    "input {i} s={s}: row disagrees with the certified input"
                ));
            }
        }
    }
    for f in failures.iter().take(5) {
        eprintln!("{f}");
    }
    report(
        10,
        failures.is_empty() && divergent > 0 && violating > 0,
        &format!(
            "{count} partial inputs ({divergent} with divergent cells, {violating} with values above 1), {} failures",
            failures.len()
        ),
    );
}
