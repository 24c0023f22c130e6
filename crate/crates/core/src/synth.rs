//! The synthesis engine: from a partial approximation `⟨A_s⟩` and a constant
//! `k`, build a cost function `c`, a speed-up `f`, maps `rᵉ` and the change
//! set `W` of `⟨A_{f(n)}⟩`, then audit the charge accounting.

use std::collections::{BTreeMap, BTreeSet};

use num::Zero;
use serde::Serialize;

use crate::approx::{change_set, pair, unpair, ChangeSet, Delta02Approximation};
use crate::costfn::{check_benign, BenignBound, BenignityCertificate, CostApproximation};
use crate::rational::{fmt_q, pow2, pow2_neg, q, Q};
use crate::{Error, Result};

/// A requirement `Sᵉ`: a cost `dᵉ ≤ 1` in listed form and a partial
/// increasing map `hᵉ`, given as `(value, stage at which it is observed)`.
/// Only the longest prefix observed by stage `s` counts at stage `s`.
#[derive(Clone, Debug)]
pub struct Requirement {
    pub cost: CostApproximation,
    pub h: Vec<(usize, usize)>,
}

impl Requirement {
    /// Converts the cost to listed form; rejects values above 1 and a
    /// non-increasing `h`.
    pub fn new(cost: CostApproximation, h: Vec<(usize, usize)>) -> Result<Self> {
        if !cost.is_normalized() {
            return Err(Error::Rejected("requirement cost exceeds 1".into()));
        }
        if h.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Rejected(
                "requirement map h is not strictly increasing".into(),
            ));
        }
        Ok(Self {
            cost: cost.to_listed_form(),
            h,
        })
    }

    /// `hᵉ` total with every value visible from stage 0.
    pub fn instant(cost: CostApproximation, h: Vec<usize>) -> Result<Self> {
        Self::new(cost, h.into_iter().map(|v| (v, 0)).collect())
    }

    fn observed(&self, s: usize) -> usize {
        self.h.iter().take_while(|(_, o)| *o <= s).count()
    }

    fn d(&self, t: usize, x: usize) -> Q {
        self.cost.value(t, x)
    }
}

#[derive(Clone, Debug)]
pub struct SynthScenario {
    pub a: Delta02Approximation,
    pub k: u32,
    pub requirements: Vec<Requirement>,
    pub horizon: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StageKind {
    Halted {
        sum: String,
    },
    Idle,
    /// Case 1: `f(m) = value`.
    Extend {
        m: usize,
        value: usize,
    },
    /// Case 2: costs below `below` raised to at least `2^{-exp}`.
    Double {
        z: usize,
        exp: u32,
        below: usize,
    },
}

#[derive(Clone, Debug, Serialize)]
pub struct StageRecord {
    pub s: usize,
    pub bar: usize,
    pub hat: usize,
    pub kind: StageKind,
    /// Every `(e, z)` with `Sᵉ` worried about `z`.
    pub worried: Vec<(usize, usize)>,
    /// `(e, t, n)`: `rᵉ(t) = n` defined at this stage.
    pub r_extensions: Vec<(usize, usize, usize)>,
}

#[derive(Clone, Debug, Default)]
struct ReqState {
    s_e: Option<usize>,
    r: Vec<usize>,
    r_stage: Vec<usize>,
    counted: usize,
    activity: Q,
}

impl ReqState {
    /// `tᵉ_s`, defined for `s > sᵉ`.
    fn t_at(&self, s: usize) -> Option<usize> {
        self.r_stage.iter().rposition(|&st| st < s)
    }
}

/// The running construction.
#[derive(Clone, Debug)]
pub struct SynthState {
    sc: SynthScenario,
    /// Exponents of `c_s` below the current frontier; `c_s(z) = 2^{-z}` beyond.
    exps: Vec<u32>,
    /// `(s, exps)`: the table in force from stage `s` on.
    history: Vec<(usize, Vec<u32>)>,
    f: Vec<usize>,
    f_stage: Vec<usize>,
    reqs: Vec<ReqState>,
    last_double: Option<usize>,
    halted: Option<usize>,
    next: usize,
    measured: Q,
    measured_bar: usize,
    pending: Vec<(usize, usize)>,
    payments: Vec<(usize, usize)>,
    records: Vec<StageRecord>,
}

fn exp_value(e: u32) -> Q {
    pow2_neg(e)
}

impl SynthState {
    pub fn new(sc: SynthScenario) -> Self {
        let n = sc.requirements.len();
        Self {
            sc,
            exps: Vec::new(),
            history: vec![(0, Vec::new())],
            f: vec![0],
            f_stage: vec![0],
            reqs: vec![ReqState::default(); n],
            last_double: None,
            halted: None,
            next: 1,
            measured: Q::zero(),
            measured_bar: 0,
            pending: Vec::new(),
            payments: Vec::new(),
            records: Vec::new(),
        }
    }

    pub fn scenario(&self) -> &SynthScenario {
        &self.sc
    }

    /// `m_s`: the largest argument of `f`.
    pub fn m(&self) -> usize {
        self.f.len() - 1
    }

    pub fn f(&self) -> &[usize] {
        &self.f
    }

    /// Stage at which each value of `f` was defined.
    pub fn f_stages(&self) -> &[usize] {
        &self.f_stage
    }

    pub fn r(&self, e: usize) -> &[usize] {
        &self.reqs[e].r
    }

    pub fn r_stages(&self, e: usize) -> &[usize] {
        &self.reqs[e].r_stage
    }

    pub fn t_at(&self, e: usize, s: usize) -> Option<usize> {
        self.reqs[e].t_at(s)
    }

    pub fn activity(&self, e: usize) -> &Q {
        &self.reqs[e].activity
    }

    pub fn halted(&self) -> Option<usize> {
        self.halted
    }

    pub fn records(&self) -> &[StageRecord] {
        &self.records
    }

    /// `Σ c_u(A_u)` as measured at the last stage run.
    pub fn measured_sum(&self) -> &Q {
        &self.measured
    }

    /// `(u, x_u)` pairs that make up [`Self::measured_sum`].
    pub fn payments(&self) -> &[(usize, usize)] {
        &self.payments
    }

    /// Stages run so far.
    pub fn last_stage(&self) -> usize {
        self.next - 1
    }

    fn exp_now(&self, z: usize) -> u32 {
        self.exps.get(z).copied().unwrap_or(z as u32)
    }

    /// `c_u(z)`.
    pub fn c(&self, u: usize, z: usize) -> Q {
        let i = self.history.partition_point(|(st, _)| *st <= u) - 1;
        let e = self.history[i].1.get(z).copied().unwrap_or(z as u32);
        exp_value(e)
    }

    fn bit(&self, u: usize, x: usize) -> bool {
        self.sc.a.bit(u, x)
    }

    fn hat(&self) -> usize {
        self.last_double.map_or(0, |d| d + 1)
    }

    fn update_measured(&mut self, bar: usize) {
        let a = &self.sc.a;
        for u in self.measured_bar + 1..=bar {
            if let Some(x) = a.least_change(u) {
                self.pending.push((u, x));
            }
        }
        self.measured_bar = self.measured_bar.max(bar);
        let mut keep = Vec::new();
        for (u, x) in std::mem::take(&mut self.pending) {
            if x <= bar {
                self.measured += self.c(u, x);
                self.payments.push((u, x));
            } else {
                keep.push((u, x));
            }
        }
        self.pending = keep;
    }

    /// Least `y` with `A_u(y) ≠ A_v(y)`.
    fn first_diff(&self, u: usize, v: usize) -> Option<usize> {
        (0..self.sc.a.width()).find(|&y| self.bit(u, y) != self.bit(v, y))
    }

    fn update_activity(&mut self, e: usize, s: usize) {
        let m = self.m();
        let req = &self.sc.requirements[e];
        let seen = req.observed(s);
        let mut counted = self.reqs[e].counted;
        let mut add = Q::zero();
        while counted < seen && req.h[counted].0 <= m && counted < s {
            let t = counted;
            if t >= 1 {
                if let Some(y) = self.first_diff(self.f[req.h[t].0], self.f[req.h[t - 1].0]) {
                    add += req.d(t, y);
                }
            }
            counted += 1;
        }
        self.reqs[e].counted = counted;
        self.reqs[e].activity += add;
    }

    fn active(&self, e: usize) -> bool {
        self.reqs[e].activity <= q(1, 1)
    }

    /// Is `Sᵉ` worried about `z` at stage `s` (the stage about to run)?
    pub fn worried(&self, e: usize, z: usize, s: usize) -> bool {
        let m = self.m();
        if e >= m || z >= m || e >= self.reqs.len() || !self.active(e) {
            return false;
        }
        let Some(t) = self.reqs[e].t_at(s) else {
            return false;
        };
        let bar = self.sc.a.bar(s);
        let u = self.f[self.reqs[e].r[t]];
        if self.bit(bar, z) == self.bit(u, z) {
            return false;
        }
        let target = pow2_neg(e as u32 + 1) * self.sc.requirements[e].d(t, z);
        exp_value(self.exp_now(z)) < target
    }

    /// Runs one stage and returns its record.
    pub fn step(&mut self) -> Result<StageRecord> {
        let s = self.next;
        if self.halted.is_some() {
            return Err(Error::Precondition("construction has halted".into()));
        }
        self.next += 1;
        let bar = self.sc.a.bar(s);
        let hat = self.hat();
        self.update_measured(bar);
        if self.measured > pow2(self.sc.k) {
            self.halted = Some(s);
            let rec = StageRecord {
                s,
                bar,
                hat,
                kind: StageKind::Halted {
                    sum: fmt_q(&self.measured),
                },
                worried: Vec::new(),
                r_extensions: Vec::new(),
            };
            self.records.push(rec.clone());
            return Ok(rec);
        }
        let m = self.m();
        for e in 0..self.reqs.len() {
            let req = &self.sc.requirements[e];
            if self.reqs[e].s_e.is_none() && req.observed(s) > 0 && req.h[0].0 <= m {
                let st = &mut self.reqs[e];
                st.s_e = Some(s);
                st.r.push(req.h[0].0);
                st.r_stage.push(s);
            }
            self.update_activity(e, s);
        }
        let mut rec = StageRecord {
            s,
            bar,
            hat,
            kind: StageKind::Idle,
            worried: Vec::new(),
            r_extensions: Vec::new(),
        };
        if bar <= hat || bar <= self.f[m] {
            self.records.push(rec.clone());
            return Ok(rec);
        }
        for z in 0..m {
            for e in 0..m.min(self.reqs.len()) {
                if self.worried(e, z, s) {
                    rec.worried.push((e, z));
                }
            }
        }
        if let Some(&(_, z)) = rec.worried.first() {
            let cur = self.exp_now(z);
            if cur < 2 {
                return Err(Error::Invariant(format!(
                    "worried about {z} with c_s(z) ≥ 1/2"
                )));
            }
            let ne = cur - 1;
            if self.exps.len() < m {
                let start = self.exps.len();
                self.exps.extend((start..m).map(|y| y as u32));
            }
            for y in 0..m {
                self.exps[y] = self.exps[y].min(ne);
            }
            self.history.push((s + 1, self.exps.clone()));
            self.last_double = Some(s);
            rec.kind = StageKind::Double {
                z,
                exp: ne,
                below: m,
            };
        } else {
            self.f.push(bar);
            self.f_stage.push(s);
            rec.kind = StageKind::Extend {
                m: m + 1,
                value: bar,
            };
            rec.r_extensions = self.extend_r(s);
        }
        self.check_stage(s)?;
        self.records.push(rec.clone());
        Ok(rec)
    }

    fn extend_r(&mut self, s: usize) -> Vec<(usize, usize, usize)> {
        let m1 = self.m();
        let mut out = Vec::new();
        for e in 0..self.reqs.len().min(s) {
            let Some(t) = self.reqs[e].t_at(s) else {
                continue;
            };
            let req = &self.sc.requirements[e];
            let range: BTreeSet<usize> = req.h[..req.observed(s)].iter().map(|(v, _)| *v).collect();
            let last = self.f[m1];
            let window_const = |n: usize| {
                (n..=m1).all(|mm| (0..=t).all(|x| self.bit(self.f[mm], x) == self.bit(last, x)))
            };
            let lo = self.reqs[e].r[t];
            if let Some(n) = range.range(lo + 1..=m1).copied().find(|&n| window_const(n)) {
                self.reqs[e].r.push(n);
                self.reqs[e].r_stage.push(s);
                out.push((e, t + 1, n));
            }
        }
        out
    }

    fn check_stage(&self, s: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::Invariant(format!("stage {s}: {msg}")));
        if self.f.windows(2).any(|w| w[0] >= w[1]) {
            return fail("f is not strictly increasing".into());
        }
        if self.f[self.m()] > self.sc.a.bar(s + 1) {
            return fail("f(m) exceeds bar".into());
        }
        if self.exps.windows(2).any(|w| w[0] > w[1]) {
            return fail("c is not non-increasing".into());
        }
        for (e, st) in self.reqs.iter().enumerate() {
            let req = &self.sc.requirements[e];
            let seen: BTreeMap<usize, usize> = req.h[..req.observed(s)]
                .iter()
                .enumerate()
                .map(|(i, (v, _))| (*v, i))
                .collect();
            if st.r.windows(2).any(|w| w[0] >= w[1]) {
                return fail(format!("r^{e} is not strictly increasing"));
            }
            for (x, v) in st.r.iter().enumerate() {
                if *v > self.m() {
                    return fail(format!("r^{e}({x}) outside dom f"));
                }
                match seen.get(v) {
                    Some(_) if *v >= req.h[x].0 => {}
                    _ => return fail(format!("r^{e}({x}) not in range h^{e} or below h^{e}({x})")),
                }
            }
        }
        Ok(())
    }

    /// Runs stages until the horizon or a halt.
    pub fn run(&mut self) -> Result<()> {
        while self.next < self.sc.horizon && self.halted.is_none() {
            self.step()?;
        }
        Ok(())
    }

    /// `⟨c_s⟩` for `s ≤ last stage + 1`, as wide as it is tall; settled
    /// when halted.
    pub fn cost_table(&self) -> CostApproximation {
        let rows = self.next + 1;
        CostApproximation::from_fn(rows, rows, |s, z| self.c(s, z))
            .expect("c stays monotone")
            .settled(self.halted.is_some())
    }

    /// The change set of `⟨A_{f(n)}⟩`, indexed by `n`.
    pub fn change_set(&self) -> Result<ChangeSet> {
        change_set(&self.sc.a, Some(&self.f))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RequirementSummary {
    pub e: usize,
    pub s_e: Option<usize>,
    pub r: Vec<usize>,
    pub activity: String,
    pub active: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SynthReport {
    pub k: u32,
    pub horizon: usize,
    pub last_stage: usize,
    pub halted: Option<usize>,
    pub measured_sum: String,
    pub f: Vec<usize>,
    pub case1_stages: usize,
    pub case2_stages: usize,
    pub idle_stages: usize,
    pub requirements: Vec<RequirementSummary>,
    /// `(n, x, count)`: pair `(x, count)` enters `W` at index `n`.
    pub w: Vec<(usize, usize, usize)>,
    pub g_half: u64,
    pub benign: BenignityCertificate,
    pub checks: BTreeMap<String, bool>,
}

/// Runs a scenario to its horizon and checks benignity at each `ε`.
pub fn run(sc: SynthScenario, eps_list: &[Q]) -> Result<(SynthState, SynthReport)> {
    let mut st = SynthState::new(sc);
    st.run()?;
    let c = st.cost_table();
    c.check_invariants()?;
    let k = st.sc.k;
    let benign = check_benign(&c, &BenignBound::SynthClosedForm { k }, eps_list)?;
    let w = st.change_set()?;
    let count = |pred: fn(&StageKind) -> bool| st.records.iter().filter(|r| pred(&r.kind)).count();
    let mut checks = BTreeMap::new();
    checks.insert("benign".into(), benign.all_pass());
    checks.insert(
        "c_bounded_by_1".into(),
        c.rows().iter().flatten().all(|v| *v <= q(1, 1)),
    );
    checks.insert(
        "c_initial".into(),
        (0..c.width()).all(|z| c.value(0, z) == pow2_neg(z as u32)),
    );
    if let Some(h) = st.halted {
        checks.insert("halt_sum_exceeds".into(), st.measured > pow2(k));
        checks.insert("halt_stage_recorded".into(), st.last_stage() == h);
    }
    let report = SynthReport {
        k,
        horizon: st.sc.horizon,
        last_stage: st.last_stage(),
        halted: st.halted,
        measured_sum: fmt_q(&st.measured),
        f: st.f.clone(),
        case1_stages: count(|k| matches!(k, StageKind::Extend { .. })),
        case2_stages: count(|k| matches!(k, StageKind::Double { .. })),
        idle_stages: count(|k| matches!(k, StageKind::Idle)),
        requirements: (0..st.reqs.len())
            .map(|e| RequirementSummary {
                e,
                s_e: st.reqs[e].s_e,
                r: st.reqs[e].r.clone(),
                activity: fmt_q(&st.reqs[e].activity),
                active: st.active(e),
            })
            .collect(),
        w: w.enumeration(),
        g_half: crate::costfn::synth_benign_bound(k, &q(1, 2)),
        benign,
        checks,
    };
    Ok((st, report))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum ChargeCase {
    /// The change persists to `f(rᵉ(t))` and is paid by the activity sum at
    /// index `x`.
    Persistent { x: usize, paid: String },
    /// The change was undone before `f(rᵉ(t))`; `u` is the undoing stage in
    /// `Σ c_s(A_s)`. `eligible` says whether `Sᵉ` could worry at stage
    /// `stage`; `backed` whether `c_{f(n)}(z) ≥ δ_e dᵉ_{tᵉ_s}(z)`.
    Transient {
        stage: usize,
        t_at_stage: Option<usize>,
        u: usize,
        paid: String,
        eligible: bool,
        backed: bool,
    },
}

#[derive(Clone, Debug, Serialize)]
pub struct Charge {
    pub t: usize,
    pub y: usize,
    pub z: usize,
    pub n: usize,
    pub amount: String,
    #[serde(flatten)]
    pub case: ChargeCase,
}

#[derive(Clone, Debug, Serialize)]
pub struct FinalAudit {
    pub e: usize,
    pub frontier: usize,
    pub charges: Vec<Charge>,
    pub persistent_sum: String,
    pub transient_sum: String,
    pub total: String,
    pub bound: String,
    /// Every eligible transient charge is backed and `tᵉ_s = t − 1` wherever
    /// the stage is eligible.
    pub claims_hold: bool,
    pub pass: bool,
}

/// Classifies every nonzero charge `dᵉ_t(y_t)` of `Σ dᵉ_t(W_{rᵉ(t)})` and
/// checks `Σ ≤ 1 + 2^k/δ_e`.
pub fn verify_final_accounting(st: &SynthState, e: usize) -> Result<FinalAudit> {
    let sc = &st.sc;
    let req = sc
        .requirements
        .get(e)
        .ok_or_else(|| Error::Precondition(format!("no requirement {e}")))?;
    let rs = &st.reqs[e];
    if rs.activity > q(1, 1) {
        return Err(Error::Precondition(format!(
            "activity sum of requirement {e} exceeds 1"
        )));
    }
    let w = st.change_set()?;
    let f = &st.f;
    let delta = pow2_neg(e as u32 + 1);
    let hvals: Vec<usize> = req.h.iter().map(|(v, _)| *v).collect();
    let mut charges = Vec::new();
    let (mut persistent, mut transient) = (Q::zero(), Q::zero());
    let mut used_x = BTreeSet::new();
    let mut used_u = BTreeSet::new();
    let mut claims_hold = true;
    let bad = |t: usize, msg: &str| Error::Invariant(format!("requirement {e}, t = {t}: {msg}"));
    for t in 1..rs.r.len() {
        let (lo, hi) = (rs.r[t - 1], rs.r[t]);
        let y = w
            .pairs()
            .filter(|(_, st)| *st > lo && *st <= hi)
            .map(|((x, c), _)| pair(x, c))
            .min();
        let Some(y) = y else { continue };
        let amount = req.d(t, y);
        if amount.is_zero() {
            continue;
        }
        let (z, _) = unpair(y);
        let n = (lo + 1..=hi)
            .find(|&n| st.bit(f[n], z) != st.bit(f[n - 1], z))
            .ok_or_else(|| bad(t, "no change of A(z) inside the window"))?;
        let case = if st.bit(f[n], z) == st.bit(f[hi], z) {
            let (j0, j1) = match (hvals.binary_search(&lo), hvals.binary_search(&hi)) {
                (Ok(a), Ok(b)) => (a, b),
                _ => return Err(bad(t, "r value outside the range of h")),
            };
            let x = (j0 + 1..=j1)
                .find(|&x| st.bit(f[hvals[x]], z) != st.bit(f[hvals[x - 1]], z))
                .ok_or_else(|| bad(t, "persistent change not visible along h"))?;
            let yx = st
                .first_diff(f[hvals[x]], f[hvals[x - 1]])
                .expect("differs at z");
            let paid = req.d(x, yx);
            if x < t || paid < amount || !used_x.insert(x) {
                return Err(bad(t, "persistent charge not covered by the activity sum"));
            }
            persistent += &amount;
            ChargeCase::Persistent {
                x,
                paid: fmt_q(&paid),
            }
        } else {
            let stage = st.f_stage[n];
            let t_at_stage = rs.t_at(stage);
            let u = (f[n] + 1..=f[hi])
                .find(|&u| st.bit(u, z) != st.bit(u - 1, z))
                .ok_or_else(|| bad(t, "transient change without an undoing stage"))?;
            let xu = sc.a.least_change(u).expect("A changes at u");
            let paid = st.c(u, xu);
            if !used_u.insert(u) {
                return Err(bad(t, "transient charges overlap"));
            }
            let m_at = n - 1;
            let active_then = rs.activity <= q(1, 1);
            let eligible = e < m_at && active_then && t_at_stage.is_some() && z < m_at;
            let backed = t_at_stage.is_some_and(|ts| st.c(f[n], z) >= &delta * req.d(ts, z));
            if eligible && (!backed || t_at_stage != Some(t - 1)) {
                claims_hold = false;
            }
            transient += &amount;
            ChargeCase::Transient {
                stage,
                t_at_stage,
                u,
                paid: fmt_q(&paid),
                eligible,
                backed,
            }
        };
        charges.push(Charge {
            t,
            y,
            z,
            n,
            amount: fmt_q(&amount),
            case,
        });
    }
    let total = &persistent + &transient;
    let bound = q(1, 1) + pow2(sc.k) / &delta;
    Ok(FinalAudit {
        e,
        frontier: rs.r.len().saturating_sub(1),
        charges,
        persistent_sum: fmt_q(&persistent),
        transient_sum: fmt_q(&transient),
        pass: total <= bound,
        total: fmt_q(&total),
        bound: fmt_q(&bound),
        claims_hold,
    })
}
