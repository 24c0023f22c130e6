//! The box-promotion construction: levels of tested lengths, initial and
//! hypercube testing against a trace oracle, conflicts and promotions,
//! believability and the extracted approximation with its cost ledger.
//!
//! Traces follow the closed form of [`TraceOracle`], so a level's state is
//! fixed once a length is added; the stage loop decides when lengths are
//! added. Hypercube boxes are only materialized for audits.

use std::collections::{BTreeMap, BTreeSet};

use num::Zero;
use serde::Serialize;

use crate::bitstr::{Antichain, BinaryString};
use crate::costfn::{markers, CostApproximation};
use crate::rational::{fmt_q, pow2_neg, Q};
use crate::tracer::{
    prefix_of_real, real_prefix, BoxId, BoxLayout, Functional, Policy, TestMode, TraceOracle,
};
use crate::{Error, Result};

/// `m_k(2^{-r})` for `r = 0..=rmax`, scanned on the listed form of `c`.
#[derive(Clone, Debug)]
pub struct MarkerTable {
    per_r: Vec<Vec<usize>>,
    listed: CostApproximation,
}

impl MarkerTable {
    pub fn new(c: &CostApproximation, rmax: usize) -> Result<Self> {
        let listed = c.to_listed_form();
        let per_r = (0..=rmax)
            .map(|r| markers(&listed, &pow2_neg(r as u32)).map(|m| m.markers))
            .collect::<Result<_>>()?;
        Ok(Self { per_r, listed })
    }

    /// The cost function with `c_s(x) = 0` for `x ≥ s`; same markers, same limit.
    pub fn listed(&self) -> &CostApproximation {
        &self.listed
    }

    pub fn markers(&self, r: usize) -> &[usize] {
        &self.per_r[r]
    }

    /// `max({n} ∪ {m_k(2^{-r}) : r ≤ n, m_k(2^{-r}) ≤ s})`.
    pub fn l(&self, n: usize, s: usize) -> usize {
        self.per_r
            .iter()
            .take(n + 1)
            .flat_map(|ms| ms.iter().copied().filter(|&m| m <= s))
            .fold(n, usize::max)
    }

    /// [`Self::l`] with `n ≤ l ≤ max{n,s}` and `c_s(l) < 2^{-n}` asserted.
    pub fn l_checked(&self, n: usize, s: usize) -> Result<usize> {
        if n >= self.per_r.len() {
            return Err(Error::Precondition(format!(
                "marker table stops below level {n}"
            )));
        }
        let l = self.l(n, s);
        if l < n || l > n.max(s) {
            return Err(Error::Invariant(format!("l_{s}({n}) = {l} out of range")));
        }
        if self.listed.value(s, l) >= pow2_neg(n as u32) {
            return Err(Error::Invariant(format!("c_{s}(l_{s}({n})) ≥ 2^-{n}")));
        }
        Ok(l)
    }

    /// Number of distinct values of `l_s(n)` over `n ≤ s < horizon`.
    pub fn distinct_values(&self, n: usize, horizon: usize) -> usize {
        (n..horizon.max(n + 1))
            .map(|s| self.l(n, s))
            .collect::<BTreeSet<_>>()
            .len()
    }
}

/// A `g` table large enough for every level: the distinct `l_s(n)` counts.
pub fn measured_g(c: &CostApproximation, nmax: usize, horizon: usize) -> Result<Vec<usize>> {
    let table = MarkerTable::new(c, nmax)?;
    Ok((0..=nmax)
        .map(|n| table.distinct_values(n, horizon))
        .collect())
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub layout: BoxLayout,
    pub cost: CostApproximation,
    pub horizon: usize,
    pub ground_truth: Option<BinaryString>,
    pub oracle: TraceOracle,
}

#[derive(Clone, Debug, Serialize)]
pub struct Sigma {
    pub value: BinaryString,
    pub enumerated: usize,
    pub success: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LengthEntry {
    pub len: usize,
    pub added: usize,
    pub promoted: bool,
    /// `σ^n_k(1), σ^n_k(2), …` in enumeration order.
    pub sigmas: Vec<Sigma>,
    /// First stage with two successful strings agreeing below the previous length.
    pub conflict: Option<usize>,
    #[serde(skip)]
    conflict_pair: Option<(usize, usize)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelState {
    pub n: usize,
    pub lengths: Vec<LengthEntry>,
}

impl LevelState {
    /// `k_s(n)`.
    pub fn k_at(&self, s: usize) -> usize {
        self.lengths.iter().take_while(|e| e.added <= s).count()
    }

    /// `ℓ^n_k` (1-based).
    pub fn len_k(&self, k: usize) -> usize {
        self.lengths[k - 1].len
    }

    /// `ℓ^n[s]`, or `None` before the level has any length.
    pub fn ell_at(&self, s: usize) -> Option<usize> {
        self.k_at(s).checked_sub(1).map(|i| self.lengths[i].len)
    }

    fn max_len(&self) -> Option<usize> {
        self.lengths.last().map(|e| e.len)
    }

    pub fn sigma(&self, k: usize, i: usize) -> Option<&Sigma> {
        self.lengths.get(k - 1)?.sigmas.get(i - 1)
    }

    /// Test of `σ^n_k(i)` successful by stage `s`.
    pub fn successful(&self, k: usize, i: usize, s: usize) -> bool {
        self.sigma(k, i)
            .is_some_and(|sg| sg.enumerated <= s && sg.success.is_some_and(|t| t <= s))
    }

    /// Some `σ^n_k(i)` equal to `sigma` is successfully tested by stage `s`.
    pub fn successfully_tested(&self, k: usize, sigma: &BinaryString, s: usize) -> bool {
        self.lengths[k - 1]
            .sigmas
            .iter()
            .enumerate()
            .any(|(i, sg)| sg.value == *sigma && self.successful(k, i + 1, s))
    }

    pub fn conflict(&self, k: usize, s: usize) -> bool {
        self.lengths
            .get(k - 1)
            .is_some_and(|e| e.added <= s && e.conflict.is_some_and(|c| c <= s))
    }

    pub fn conflicts_at(&self, s: usize) -> usize {
        (1..=self.k_at(s)).filter(|&k| self.conflict(k, s)).count()
    }
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    LengthAdded {
        n: usize,
        k: usize,
        len: usize,
        promoted: bool,
    },
    Enumerated {
        n: usize,
        k: usize,
        i: usize,
        sigma: BinaryString,
    },
    Successful {
        n: usize,
        k: usize,
        i: usize,
    },
    Conflict {
        n: usize,
        k: usize,
        len: usize,
    },
    Promoted {
        from: usize,
        len: usize,
    },
    PromotionDropped {
        from: usize,
        len: usize,
    },
}

#[derive(Clone, Debug, Serialize)]
pub struct StageEvent {
    pub stage: usize,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Clone, Debug)]
pub struct RunState {
    pub layout: BoxLayout,
    pub oracle: TraceOracle,
    pub table: MarkerTable,
    pub horizon: usize,
    pub ground_truth: Option<BinaryString>,
    levels: Vec<LevelState>,
    pub events: Vec<StageEvent>,
    next_stage: usize,
    dropped: BTreeSet<(usize, usize)>,
}

impl RunState {
    pub fn new(sc: &Scenario) -> Result<Self> {
        let o = sc.layout.o;
        Ok(Self {
            layout: sc.layout.clone(),
            oracle: sc.oracle.clone(),
            table: MarkerTable::new(&sc.cost, sc.layout.nmax)?,
            horizon: sc.horizon,
            ground_truth: sc.ground_truth.clone(),
            levels: (o..=sc.layout.nmax)
                .map(|n| LevelState {
                    n,
                    lengths: Vec::new(),
                })
                .collect(),
            events: Vec::new(),
            next_stage: o,
            dropped: BTreeSet::new(),
        })
    }

    pub fn o(&self) -> usize {
        self.layout.o
    }

    pub fn nmax(&self) -> usize {
        self.layout.nmax
    }

    pub fn level(&self, n: usize) -> &LevelState {
        &self.levels[n - self.layout.o]
    }

    pub fn levels(&self) -> &[LevelState] {
        &self.levels
    }

    /// Top level acting at stage `s`.
    pub fn top(&self, s: usize) -> usize {
        s.min(self.layout.nmax)
    }

    fn push(&mut self, stage: usize, event: Event) {
        self.events.push(StageEvent { stage, event });
    }

    fn add_length(&mut self, n: usize, len: usize, s: usize, promoted: bool) -> Result<()> {
        let cap = self.layout.dims(n);
        let o = self.layout.o;
        let prev = self.levels[n - o].max_len();
        if prev.is_some_and(|p| p >= len) {
            return Err(Error::Invariant(format!(
                "level {n}: length {len} not longer than {prev:?}"
            )));
        }
        let k = self.levels[n - o].lengths.len() + 1;
        if k > cap {
            return Err(Error::Invariant(format!(
                "level {n} needs length #{k} but has only n+g(n) = {cap} boxes"
            )));
        }
        let sigmas: Vec<Sigma> = self
            .oracle
            .initial_trace(n, k, len, s)
            .into_iter()
            .map(|(st, value)| {
                let success = self.oracle.cube_success_stage(n, &value, st);
                Sigma {
                    value,
                    enumerated: st,
                    success,
                }
            })
            .collect();
        let below = prev.unwrap_or(0);
        let mut best: Option<(usize, (usize, usize))> = None;
        for i in 0..sigmas.len() {
            for j in i + 1..sigmas.len() {
                let (Some(a), Some(b)) = (sigmas[i].success, sigmas[j].success) else {
                    continue;
                };
                if sigmas[i].value.restrict(below)? == sigmas[j].value.restrict(below)? {
                    let st = a.max(b);
                    if best.is_none_or(|(bs, _)| st < bs) {
                        best = Some((st, (i + 1, j + 1)));
                    }
                }
            }
        }
        self.levels[n - o].lengths.push(LengthEntry {
            len,
            added: s,
            promoted,
            sigmas,
            conflict: best.map(|b| b.0),
            conflict_pair: best.map(|b| b.1),
        });
        self.push(
            s,
            Event::LengthAdded {
                n,
                k,
                len,
                promoted,
            },
        );
        Ok(())
    }

    /// Runs stage `s`; stages must be run in order starting from `o`.
    pub fn stage(&mut self, s: usize) -> Result<()> {
        if s != self.next_stage {
            return Err(Error::Precondition(format!(
                "expected stage {}, got {s}",
                self.next_stage
            )));
        }
        self.next_stage += 1;
        let o = self.layout.o;
        let mut promoted: Vec<usize> = Vec::new();
        for n in (o..=self.top(s)).rev() {
            // Step 1.
            promoted.sort_unstable();
            for len in std::mem::take(&mut promoted) {
                self.add_length(n, len, s, true)?;
            }
            let l = self.table.l_checked(n, s)?;
            if self.levels[n - o].max_len().is_none_or(|m| l > m) {
                self.add_length(n, l, s, false)?;
            }
            // Step 2: strings appearing now are tested on the cube now.
            let mut fresh = Vec::new();
            let mut succ = Vec::new();
            for (k0, e) in self.levels[n - o].lengths.iter().enumerate() {
                for (i0, sg) in e.sigmas.iter().enumerate() {
                    if sg.enumerated == s {
                        fresh.push((k0 + 1, i0 + 1, sg.value.clone()));
                    }
                    if sg.success == Some(s) {
                        succ.push((k0 + 1, i0 + 1));
                    }
                }
            }
            for (k, i, sigma) in fresh {
                self.push(s, Event::Enumerated { n, k, i, sigma });
            }
            for (k, i) in succ {
                self.push(s, Event::Successful { n, k, i });
            }
            // Step 3.
            let level = &self.levels[n - o];
            let new_conflicts: Vec<(usize, usize)> = level
                .lengths
                .iter()
                .enumerate()
                .filter(|(_, e)| e.conflict.map(|c| c.max(e.added)) == Some(s))
                .map(|(k0, e)| (k0 + 1, e.len))
                .collect();
            let conflicted: Vec<usize> = (1..=level.k_at(s))
                .filter(|&k| level.conflict(k, s))
                .map(|k| level.len_k(k))
                .collect();
            for (k, len) in new_conflicts {
                self.push(s, Event::Conflict { n, k, len });
            }
            if n > o {
                let below = &self.levels[n - 1 - o];
                let floor = below.max_len();
                let present: BTreeSet<usize> = below.lengths.iter().map(|e| e.len).collect();
                for len in conflicted {
                    if floor.is_none_or(|m| len > m) {
                        promoted.push(len);
                        self.push(s, Event::Promoted { from: n, len });
                    } else if !present.contains(&len) && self.dropped.insert((n, len)) {
                        self.push(s, Event::PromotionDropped { from: n, len });
                    }
                }
            }
        }
        self.check_stage(s)
    }

    fn check_stage(&self, s: usize) -> Result<()> {
        let o = self.layout.o;
        let top = self.top(s);
        for n in o..=top {
            let lvl = self.level(n);
            if lvl.lengths.len() > self.layout.dims(n) {
                return Err(Error::Invariant(format!(
                    "level {n} over capacity at stage {s}"
                )));
            }
            let c = lvl.conflicts_at(s);
            if c + 1 > n {
                return Err(Error::Invariant(format!(
                    "level {n} has {c} conflicted lengths at stage {s}, bound is {}",
                    n - 1
                )));
            }
            let ell = lvl.ell_at(s).unwrap_or(0);
            if ell < n {
                return Err(Error::Invariant(format!("ℓ^{n}[{s}] = {ell} < {n}")));
            }
            if n < top && ell > self.level(n + 1).ell_at(s).unwrap_or(0) {
                return Err(Error::Invariant(format!(
                    "length chain breaks between levels {n} and {}",
                    n + 1
                )));
            }
        }
        if s <= self.layout.nmax && self.level(s).ell_at(s) != Some(s) {
            return Err(Error::Invariant(format!("ℓ^{s}[{s}] ≠ {s}")));
        }
        Ok(())
    }

    /// Runs every remaining stage below the horizon.
    pub fn run_to_horizon(&mut self) -> Result<()> {
        while self.next_stage < self.horizon {
            self.stage(self.next_stage)?;
        }
        Ok(())
    }

    pub fn last_stage(&self) -> usize {
        self.next_stage.saturating_sub(1)
    }

    /// The tested set of `z_ν` at stage `s`, replaying cube tests with
    /// `i ∈ ν(k)` in stage order.
    pub fn materialize(
        &self,
        n: usize,
        nu: &[BTreeSet<usize>],
        s: usize,
    ) -> Result<(BoxId, Functional)> {
        let id = self.layout.box_coord(n, nu)?;
        let lvl = self.level(n);
        let mut tests: Vec<(usize, usize, usize, &BinaryString)> = Vec::new();
        for (k0, e) in lvl.lengths.iter().enumerate() {
            for &i in &nu[k0] {
                if let Some(sg) = e.sigmas.get(i - 1) {
                    if sg.enumerated <= s {
                        tests.push((sg.enumerated, k0 + 1, i, &sg.value));
                    }
                }
            }
        }
        tests.sort();
        let mut psi = Functional::new();
        for (st, _, _, sigma) in tests {
            psi.test_string(&id, sigma, st.max(sigma.len()), TestMode::Compressed)?;
        }
        Ok((id, psi))
    }

    /// `T_s(z_ν)` restricted to `Z_{ν,s}`.
    pub fn trace_at(
        &self,
        n: usize,
        nu: &[BTreeSet<usize>],
        s: usize,
    ) -> Result<Vec<BinaryString>> {
        let (id, psi) = self.materialize(n, nu, s)?;
        Ok(match psi.tested(&id) {
            Some(z) => self
                .oracle
                .cube_trace(n, z)
                .into_iter()
                .filter(|(st, _)| *st <= s)
                .map(|(_, v)| v)
                .collect(),
            None => Vec::new(),
        })
    }

    /// Success of `σ^n_k(i)` by stage `s`, decided by materializing every
    /// projection class of `ν` with `i ∈ ν(k)`. `None` if there are more
    /// than `limit` classes.
    pub fn success_by_brute_force(
        &self,
        n: usize,
        k: usize,
        i: usize,
        s: usize,
        limit: usize,
    ) -> Result<Option<bool>> {
        let lvl = self.level(n);
        let Some(sg) = lvl.sigma(k, i) else {
            return Ok(Some(false));
        };
        if sg.enumerated > s {
            return Ok(Some(false));
        }
        let dims = self.layout.dims(n);
        let mut options: Vec<Vec<BTreeSet<usize>>> = Vec::with_capacity(dims);
        let mut classes = 1usize;
        for kk in 1..=dims {
            let present = lvl
                .lengths
                .get(kk - 1)
                .map_or(0, |e| e.sigmas.iter().filter(|x| x.enumerated <= s).count());
            let mut opts: Vec<BTreeSet<usize>> = vec![BTreeSet::new()];
            for a in 1..=present {
                opts.push([a].into());
                for b in a + 1..=present {
                    opts.push([a, b].into());
                }
            }
            if kk == k {
                opts.retain(|o| o.contains(&i));
            }
            classes = classes.saturating_mul(opts.len());
            options.push(opts);
        }
        if classes > limit {
            return Ok(None);
        }
        let mut idx = vec![0usize; dims];
        loop {
            let nu: Vec<BTreeSet<usize>> = idx
                .iter()
                .zip(&options)
                .map(|(&j, o)| o[j].clone())
                .collect();
            let trace = self.trace_at(n, &nu, s)?;
            if !trace.iter().any(|t| t.comparable(&sg.value)) {
                return Ok(Some(false));
            }
            let mut d = 0;
            loop {
                if d == dims {
                    return Ok(Some(s > sg.enumerated));
                }
                idx[d] += 1;
                if idx[d] < options[d].len() {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct WitnessRow {
    pub k: usize,
    pub conflict: bool,
    pub c_size: usize,
    pub d_size: usize,
    pub p: i64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Witness {
    pub n: usize,
    pub stage: usize,
    /// `ν(k)` for `k = 1..=n+g(n)`.
    pub nu: Vec<BTreeSet<usize>>,
    pub conflicts: usize,
    pub c1: Vec<BinaryString>,
    pub trace: Vec<BinaryString>,
    pub ledger: Vec<WitnessRow>,
}

/// The coordinate whose box certifies the conflict count at level `n`,
/// stage `s`, with the `C_k`, `D_k`, `p_k` ledger checked.
pub fn build_witness(state: &RunState, n: usize, s: usize) -> Result<Witness> {
    let lvl = state.level(n);
    let ks = lvl.k_at(s);
    let dims = state.layout.dims(n);
    let mut nu = vec![BTreeSet::new(); dims];
    let mut c = Antichain::new();
    let mut rows = Vec::new();
    let mut p_next = 0i64;
    let mut conflicts = 0;
    for k in (1..=ks).rev() {
        let conflicted = lvl.conflict(k, s);
        if conflicted {
            conflicts += 1;
            let (i, j) = lvl.lengths[k - 1]
                .conflict_pair
                .expect("conflict has a pair");
            for idx in [i, j] {
                let sigma = &lvl.sigma(k, idx).unwrap().value;
                if !c.iter().any(|m| m.comparable(sigma)) {
                    c.insert(sigma.clone())?;
                    nu[k - 1].insert(idx);
                }
            }
        }
        let below = if k == 1 { 0 } else { lvl.len_k(k - 1) };
        let d: BTreeSet<BinaryString> =
            c.iter().map(|m| m.restrict(below)).collect::<Result<_>>()?;
        let p = c.len() as i64 - d.len() as i64;
        if p < p_next || (conflicted && p == p_next) {
            return Err(Error::Invariant(format!(
                "level {n} stage {s}: p_{k} = {p} against p_{} = {p_next}",
                k + 1
            )));
        }
        rows.push(WitnessRow {
            k,
            conflict: conflicted,
            c_size: c.len(),
            d_size: d.len(),
            p,
        });
        p_next = p;
    }
    rows.reverse();
    if !c.is_empty() && c.len() as i64 != p_next + 1 {
        return Err(Error::Invariant(format!(
            "level {n} stage {s}: |C_1| ≠ p_1 + 1"
        )));
    }
    if p_next < conflicts as i64 {
        return Err(Error::Invariant(format!(
            "level {n} stage {s}: p_1 below conflict count"
        )));
    }
    let trace = state.trace_at(n, &nu, s)?;
    if trace.len() < c.len() {
        return Err(Error::Invariant(format!(
            "level {n} stage {s}: |T(z_ν)| = {} < |C_1| = {}",
            trace.len(),
            c.len()
        )));
    }
    if trace.len() > state.layout.capacity(n) {
        return Err(Error::Invariant(format!(
            "level {n} stage {s}: trace over capacity"
        )));
    }
    if !trace.iter().all(|t| c.iter().any(|m| m.is_prefix_of(t))) {
        return Err(Error::Invariant(format!(
            "level {n} stage {s}: trace escapes C_1"
        )));
    }
    Ok(Witness {
        n,
        stage: s,
        nu,
        conflicts,
        c1: c.iter().cloned().collect(),
        trace,
        ledger: rows,
    })
}

/// Lengths and `ρ*` fixed after the run.
#[derive(Clone, Debug)]
pub struct Believability {
    pub rho_star: BinaryString,
    pub s_o: usize,
}

/// `ρ* = A↾ℓ^o` and the least `s > o` by which `ℓ^o[s] = ℓ^o` and `ρ*` is
/// successfully tested at level `o`.
pub fn find_rho_star(state: &RunState) -> Option<Believability> {
    let a = state.ground_truth.as_ref()?;
    let o = state.o();
    let last = state.last_stage();
    let lvl = state.level(o);
    let ell = lvl.ell_at(last)?;
    let rho = real_prefix(a, ell);
    let k = lvl.k_at(last);
    (o + 1..=last)
        .find(|&s| lvl.ell_at(s) == Some(ell) && lvl.successfully_tested(k, &rho, s))
        .map(|s_o| Believability { rho_star: rho, s_o })
}

/// The unique `n`-believable string at stage `s`, if any.
pub fn believable(
    state: &RunState,
    b: &Believability,
    n: usize,
    s: usize,
) -> Result<Option<BinaryString>> {
    let o = state.o();
    let lvl = state.level(n);
    let k = lvl.k_at(s);
    if k == 0 {
        return Ok(None);
    }
    let mut found: Vec<BinaryString> = Vec::new();
    for (i0, sg) in lvl.lengths[k - 1].sigmas.iter().enumerate() {
        if !lvl.successful(k, i0 + 1, s) || !b.rho_star.is_prefix_of(&sg.value) {
            continue;
        }
        let ok = (o..=n).all(|m| {
            let lm = state.level(m);
            (1..=lm.k_at(s)).all(|kk| {
                let len = lm.len_k(kk);
                len <= sg.value.len()
                    && sg
                        .value
                        .restrict(len)
                        .is_ok_and(|pre| lm.successfully_tested(kk, &pre, s))
            })
        });
        if ok && !found.contains(&sg.value) {
            found.push(sg.value.clone());
        }
    }
    match found.len() {
        0 => Ok(None),
        1 => Ok(found.pop()),
        _ => Err(Error::Invariant(format!(
            "{} strings are {n}-believable at stage {s}",
            found.len()
        ))),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExtractedStage {
    pub t: usize,
    pub s_t: usize,
    pub sigma: BinaryString,
    pub x: Option<usize>,
    pub cost: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct SLedger {
    pub n: usize,
    pub members: Vec<usize>,
    pub bound: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Extraction {
    pub rho_star: BinaryString,
    pub s_o: usize,
    pub stages: Vec<ExtractedStage>,
    /// No further believable string appeared before the horizon.
    pub truncated: bool,
    pub s_ledger: Vec<SLedger>,
    pub obedience_sum: String,
    pub bucket_bound: String,
}

/// `s_t`, `σ_t`, `x_t` and the `S_n` ledger. Level `min(t, nmax)` stands in
/// for level `t` once `t` passes the top level.
pub fn extract_approximation(state: &RunState, b: &Believability) -> Result<Extraction> {
    let o = state.o();
    let nmax = state.nmax();
    let last = state.last_stage();
    let c = state.table.listed();
    let mut stages = vec![ExtractedStage {
        t: o,
        s_t: b.s_o,
        sigma: b.rho_star.clone(),
        x: None,
        cost: fmt_q(&Q::zero()),
    }];
    let mut prev_s = b.s_o;
    let mut t = o + 1;
    let mut total = Q::zero();
    let mut costs: Vec<(usize, Q)> = Vec::new();
    'outer: loop {
        for s in prev_s + 1..=last {
            if let Some(sigma) = believable(state, b, state.top(t).max(o), s)? {
                let prev = &stages.last().unwrap().sigma;
                let width = sigma.len().max(prev.len());
                let x = real_prefix(prev, width).first_difference(&real_prefix(&sigma, width));
                let cost = x.map_or(Q::zero(), |x| c.value(t, x));
                total += &cost;
                costs.push((t, cost.clone()));
                stages.push(ExtractedStage {
                    t,
                    s_t: s,
                    sigma,
                    x,
                    cost: fmt_q(&cost),
                });
                prev_s = s;
                t += 1;
                continue 'outer;
            }
        }
        break;
    }
    let mut s_ledger = Vec::new();
    for n in 0..=nmax {
        let threshold = pow2_neg(n as u32);
        let members: Vec<usize> = costs
            .iter()
            .filter(|(_, v)| *v >= threshold)
            .map(|(t, _)| *t)
            .collect();
        let bound = n + n * n.saturating_sub(1) / 2;
        if members.len() > bound {
            return Err(Error::Invariant(format!(
                "|S_{n}| = {} exceeds {bound}",
                members.len()
            )));
        }
        s_ledger.push(SLedger { n, members, bound });
    }
    // Each cost ≥ 2^{-nmax} lies in some [2^{-n}, 2^{-(n-1)}); smaller ones are
    // charged at 2^{-nmax}.
    let floor = pow2_neg(nmax as u32);
    let small = costs
        .iter()
        .filter(|(_, v)| !v.is_zero() && *v < floor)
        .count();
    let bucket_bound = s_ledger
        .iter()
        .filter(|l| l.n >= 1)
        .fold(Q::zero(), |acc, l| {
            acc + pow2_neg(l.n as u32 - 1) * Q::from_integer(l.members.len().into())
        })
        + floor * Q::from_integer(small.into());
    if total > bucket_bound {
        return Err(Error::Invariant(
            "obedience sum exceeds the S_n bucket bound".into(),
        ));
    }
    Ok(Extraction {
        rho_star: b.rho_star.clone(),
        s_o: b.s_o,
        truncated: true,
        stages,
        s_ledger,
        obedience_sum: fmt_q(&total),
        bucket_bound: fmt_q(&bucket_bound),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelSummary {
    pub n: usize,
    pub lengths: Vec<usize>,
    pub promoted: Vec<usize>,
    pub conflicts: Vec<(usize, usize)>,
    pub g: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub o: usize,
    pub nmax: usize,
    pub horizon: usize,
    pub levels: Vec<LevelSummary>,
    pub witnesses: Vec<Witness>,
    pub extraction: Option<Extraction>,
    pub checks: BTreeMap<String, bool>,
    pub notes: Vec<String>,
    pub events: Vec<StageEvent>,
}

/// Runs the construction to the horizon and every audit on the result.
pub fn run(sc: &Scenario) -> Result<(RunState, RunReport)> {
    if sc.horizon <= sc.layout.o {
        return Err(Error::Precondition("horizon must exceed o".into()));
    }
    let mut st = RunState::new(sc)?;
    st.run_to_horizon()?;
    let last = st.last_stage();
    let mut checks = BTreeMap::new();
    let mut notes = Vec::new();
    checks.insert("capacity".into(), true);
    checks.insert("conflict_bound".into(), true);
    checks.insert("monotone_chain".into(), true);

    // Witnesses at each stage where a level's conflict count grows, and at the end.
    let mut witnesses = Vec::new();
    for n in st.o()..=st.nmax() {
        let lvl = st.level(n);
        let mut stages: BTreeSet<usize> = lvl
            .lengths
            .iter()
            .filter_map(|e| e.conflict.map(|c| c.max(e.added)))
            .filter(|&c| c <= last)
            .collect();
        stages.insert(last);
        for s in stages {
            if s >= n {
                witnesses.push(build_witness(&st, n, s)?);
            }
        }
    }
    checks.insert("witness_ledgers".into(), true);

    let mut extraction = None;
    if let Some(b) = find_rho_star(&st) {
        for s in b.s_o..=last {
            for n in st.o()..=st.nmax() {
                believable(&st, &b, n, s)?;
            }
        }
        checks.insert("believability_unique".into(), true);
        let ex = extract_approximation(&st, &b)?;
        checks.insert("s_n_bounds".into(), true);
        if let (Policy::Honest { .. }, Some(a)) = (&st.oracle.policy, &st.ground_truth) {
            let all_prefix = ex.stages.iter().all(|x| prefix_of_real(&x.sigma, a));
            checks.insert("honest_prefixes".into(), all_prefix);
            if !all_prefix {
                return Err(Error::Invariant(
                    "honest run extracted a non-prefix of A".into(),
                ));
            }
        }
        extraction = Some(ex);
    } else if st.ground_truth.is_some() {
        notes.push("ρ* never successfully tested before the horizon; extraction skipped".into());
    }
    if let (Policy::Honest { delay }, Some(a)) = (&st.oracle.policy, &st.ground_truth) {
        let mut ok = true;
        for lvl in st.levels() {
            for (k0, e) in lvl.lengths.iter().enumerate() {
                if e.added + 2 * delay < last {
                    ok &= lvl.successfully_tested(k0 + 1, &real_prefix(a, e.len), last);
                }
            }
        }
        checks.insert("honest_convergence".into(), ok);
        if !ok {
            return Err(Error::Invariant(
                "honest trace left a prefix of A untested".into(),
            ));
        }
    }
    for (n, len) in &st.dropped {
        notes.push(format!(
            "conflicted length {len} at level {n} not promoted: level {} already past it",
            n - 1
        ));
    }
    let levels = st
        .levels()
        .iter()
        .map(|l| LevelSummary {
            n: l.n,
            lengths: l.lengths.iter().map(|e| e.len).collect(),
            promoted: l
                .lengths
                .iter()
                .filter(|e| e.promoted)
                .map(|e| e.len)
                .collect(),
            conflicts: l
                .lengths
                .iter()
                .filter_map(|e| {
                    e.conflict
                        .filter(|&c| c <= last)
                        .map(|c| (e.len, c.max(e.added)))
                })
                .collect(),
            g: st.layout.g(l.n),
        })
        .collect();
    let report = RunReport {
        o: st.o(),
        nmax: st.nmax(),
        horizon: st.horizon,
        levels,
        witnesses,
        extraction,
        checks,
        notes,
        events: st.events.clone(),
    };
    Ok((st, report))
}


#[cfg(test)]
mod fuzz {
    use super::*;
    use crate::gen;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_runs_keep_every_invariant() {
        let mut extracted = 0;
        for seed in 0..60u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let o = 1 + (seed % 2) as usize;
            let sc = gen::boxpromo_scenario(&mut rng, o, 4, 50).unwrap();
            let (_, report) = run(&sc).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
            extracted += report.extraction.is_some() as usize;
        }
        assert!(extracted > 30, "only {extracted} runs reached extraction");
    }
}
