//! Finite Δ⁰₂ approximations with a convergence schedule, change sets,
//! parity decoding and the obedience speed-up search.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num::Zero;
use serde::Serialize;

use crate::bitstr::BinaryString;
use crate::costfn::CostApproximation;
use crate::rational::{fmt_q, pow2_neg, Q};
use crate::{Error, Result};

/// Wall stage at which a cell becomes readable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Wall {
    At(usize),
    Never,
}

/// Rows `A_s↾X` for `s < S`, plus the stage at which each cell becomes
/// readable. Cells not mentioned in the schedule are readable at stage 0;
/// columns `x ≥ X` read as 0 and are always readable; stages `≥ S` are never
/// readable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Delta02Approximation {
    rows: Vec<BinaryString>,
    width: usize,
    schedule: BTreeMap<(usize, usize), Wall>,
    limit: Option<BinaryString>,
    // square_wall[b]: stage from which every cell with u, x ≤ b is readable.
    square_wall: Vec<Wall>,
}

impl Delta02Approximation {
    pub fn new(
        rows: Vec<BinaryString>,
        schedule: BTreeMap<(usize, usize), Wall>,
        limit: Option<BinaryString>,
    ) -> Result<Self> {
        let Some(width) = rows.first().map(BinaryString::len) else {
            return Err(Error::Rejected(
                "approximation needs at least one stage".into(),
            ));
        };
        if let Some(s) = rows.iter().position(|r| r.len() != width) {
            return Err(Error::Rejected(format!("row {s} has the wrong width")));
        }
        if let Some(l) = &limit {
            if l.len() != width {
                return Err(Error::Rejected("limit word has the wrong width".into()));
            }
            if rows.last() != Some(l) {
                return Err(Error::Invariant(
                    "approximation has not reached its limit within the horizon".into(),
                ));
            }
        }
        let mut a = Self {
            rows,
            width,
            schedule,
            limit,
            square_wall: Vec::new(),
        };
        a.square_wall = a.compute_square_walls();
        Ok(a)
    }

    /// Every cell readable immediately, no ground truth.
    pub fn total(rows: Vec<BinaryString>) -> Result<Self> {
        Self::new(rows, BTreeMap::new(), None)
    }

    fn compute_square_walls(&self) -> Vec<Wall> {
        let mut out = Vec::with_capacity(self.rows.len());
        let mut acc = Wall::At(0);
        for b in 0..self.rows.len() {
            let border = (0..=b).map(|x| (b, x)).chain((0..b).map(|u| (u, b)));
            for (u, x) in border {
                acc = acc.max(self.wall(u, x));
            }
            out.push(acc);
        }
        out
    }

    pub fn horizon(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn limit(&self) -> Option<&BinaryString> {
        self.limit.as_ref()
    }

    pub fn rows(&self) -> &[BinaryString] {
        &self.rows
    }

    /// The row at stage `s`, ignoring the schedule.
    pub fn row(&self, s: usize) -> &BinaryString {
        &self.rows[s]
    }

    pub fn final_row(&self) -> &BinaryString {
        self.rows.last().unwrap()
    }

    pub fn bit(&self, s: usize, x: usize) -> bool {
        x < self.width && self.rows[s].bit(x)
    }

    pub fn wall(&self, u: usize, x: usize) -> Wall {
        if u >= self.rows.len() {
            Wall::Never
        } else if x >= self.width {
            Wall::At(0)
        } else {
            self.schedule.get(&(u, x)).copied().unwrap_or(Wall::At(0))
        }
    }

    /// `A_u(x)` if it has converged by stage `s`.
    pub fn read(&self, u: usize, x: usize, s: usize) -> Option<bool> {
        match self.wall(u, x) {
            Wall::At(w) if w <= s => Some(self.bit(u, x)),
            _ => None,
        }
    }

    pub fn is_total(&self) -> bool {
        !self.schedule.values().any(|w| *w == Wall::Never)
    }

    /// Greatest `b < s` with every `A_u(x)`, `u, x ≤ b`, readable at stage
    /// `s`; 0 if there is none.
    pub fn bar(&self, s: usize) -> usize {
        let limit = s.min(self.square_wall.len());
        let n = self.square_wall[..limit].partition_point(|w| *w <= Wall::At(s));
        n.saturating_sub(1)
    }

    /// Least `x` with `A_{s-1}(x) ≠ A_s(x)`.
    pub fn least_change(&self, s: usize) -> Option<usize> {
        if s == 0 || s >= self.rows.len() {
            return None;
        }
        self.rows[s - 1].first_difference(&self.rows[s])
    }

    /// Stage subsequence `⟨A_{h(i)}⟩` as a total approximation.
    pub fn compose(&self, h: &[usize]) -> Result<Self> {
        check_increasing(h)?;
        let rows = h
            .iter()
            .take_while(|&&t| t < self.rows.len())
            .map(|&t| self.rows[t].clone())
            .collect::<Vec<_>>();
        if rows.is_empty() {
            return Err(Error::Rejected(
                "speed-up leaves no stage inside the horizon".into(),
            ));
        }
        Self::total(rows)
    }

    /// Text format: `S X`, `S` rows of bits, then optional `(s,x,wall)`
    /// triples (`∞` for never) and an optional `limit <bits>` line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "missing `S X` header"))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::parse(hline, format!("bad dimension {t:?}")))
            })
            .collect::<Result<_>>()?;
        let [horizon, width] = dims[..] else {
            return Err(Error::parse(hline, "header must be `S X`"));
        };
        let mut rows = Vec::with_capacity(horizon);
        for s in 0..horizon {
            let (ln, line) = lines.next().ok_or_else(|| {
                Error::parse(hline, format!("expected {horizon} rows, found {s}"))
            })?;
            let row = parse_bits(line, width).map_err(|m| Error::parse(ln, m))?;
            rows.push(row);
        }
        let mut schedule = BTreeMap::new();
        let mut limit = None;
        for (ln, line) in lines {
            if let Some(rest) = line.strip_prefix("limit") {
                limit = Some(parse_bits(rest.trim(), width).map_err(|m| Error::parse(ln, m))?);
                continue;
            }
            for tok in line.split(')').map(str::trim).filter(|t| !t.is_empty()) {
                let body = tok.strip_prefix('(').ok_or_else(|| {
                    Error::parse(ln, format!("expected `(s,x,wall)`, got {tok:?}"))
                })?;
                let parts: Vec<&str> = body.split(',').map(str::trim).collect();
                let [s, x, w] = parts[..] else {
                    return Err(Error::parse(
                        ln,
                        format!("expected three fields in {tok:?}"),
                    ));
                };
                let num = |t: &str| {
                    t.parse::<usize>()
                        .map_err(|_| Error::parse(ln, format!("bad number {t:?}")))
                };
                let wall = if w == "∞" || w == "inf" {
                    Wall::Never
                } else {
                    Wall::At(num(w)?)
                };
                schedule.insert((num(s)?, num(x)?), wall);
            }
        }
        Self::new(rows, schedule, limit).map_err(|e| Error::parse(hline, e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.horizon(), self.width);
        for r in &self.rows {
            let bits: String = r.bits().map(|b| if b { '1' } else { '0' }).collect();
            let _ = writeln!(out, "{bits}");
        }
        for ((s, x), w) in &self.schedule {
            match w {
                Wall::At(v) => {
                    let _ = writeln!(out, "({s},{x},{v})");
                }
                Wall::Never => {
                    let _ = writeln!(out, "({s},{x},∞)");
                }
            }
        }
        if let Some(l) = &self.limit {
            let bits: String = l.bits().map(|b| if b { '1' } else { '0' }).collect();
            let _ = writeln!(out, "limit {bits}");
        }
        out
    }
}

fn parse_bits(line: &str, width: usize) -> std::result::Result<BinaryString, String> {
    if width == 0 && (line.is_empty() || line == "-" || line == "ε") {
        return Ok(BinaryString::empty());
    }
    let bits: std::result::Result<Vec<bool>, String> = line
        .chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(format!("bad bit {other:?}")),
        })
        .collect();
    let bits = bits?;
    if bits.len() != width {
        return Err(format!("expected {width} bits, found {}", bits.len()));
    }
    Ok(BinaryString::from_bits(bits))
}

fn check_increasing(h: &[usize]) -> Result<()> {
    if h.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Rejected(
            "speed-up map is not strictly increasing".into(),
        ));
    }
    Ok(())
}

/// `(x + n)(x + n + 1)/2 + n`.
pub fn pair(x: usize, n: usize) -> usize {
    (x + n) * (x + n + 1) / 2 + n
}

pub fn unpair(z: usize) -> (usize, usize) {
    let mut w = 0;
    while (w + 1) * (w + 2) / 2 <= z {
        w += 1;
    }
    let n = z - w * (w + 1) / 2;
    (w - n, n)
}

/// Checks `x ≤ pair(x, n)` and round-tripping on a small grid.
pub fn pairing_self_test() -> Result<()> {
    for x in 0..64 {
        for n in 0..64 {
            let z = pair(x, n);
            if x > z || unpair(z) != (x, n) {
                return Err(Error::Invariant(format!(
                    "pairing self-test failed at ({x},{n})"
                )));
            }
        }
    }
    Ok(())
}

/// Pairs `(x, n)`: `x` changed at least `n ≥ 1` times. The value is the
/// stage at which the pair was enumerated.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ChangeSet {
    pairs: BTreeMap<(usize, usize), usize>,
    stages: usize,
}

impl ChangeSet {
    pub fn from_pairs(
        pairs: impl IntoIterator<Item = ((usize, usize), usize)>,
        stages: usize,
    ) -> Self {
        Self {
            pairs: pairs.into_iter().collect(),
            stages,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Number of stages in the underlying (possibly composed) sequence.
    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn contains(&self, x: usize, n: usize) -> bool {
        self.pairs.contains_key(&(x, n))
    }

    pub fn stage_of(&self, x: usize, n: usize) -> Option<usize> {
        self.pairs.get(&(x, n)).copied()
    }

    pub fn pairs(&self) -> impl Iterator<Item = ((usize, usize), usize)> + '_ {
        self.pairs.iter().map(|(k, v)| (*k, *v))
    }

    pub fn max_count(&self, x: usize) -> usize {
        self.pairs
            .range((x, 0)..=(x, usize::MAX))
            .map(|((_, n), _)| *n)
            .max()
            .unwrap_or(0)
    }

    /// Pairs enumerated exactly at `stage`, ordered by `x` then `n`.
    pub fn new_at(&self, stage: usize) -> Vec<(usize, usize)> {
        self.pairs
            .iter()
            .filter(|(_, v)| **v == stage)
            .map(|(k, _)| *k)
            .collect()
    }

    /// Per stage, the least pair code entering `W`; this is the least
    /// position where `W_{s-1}` and `W_s` differ.
    pub fn least_new_codes(&self) -> BTreeMap<usize, usize> {
        let mut out = BTreeMap::new();
        for ((x, n), s) in &self.pairs {
            let code = pair(*x, *n);
            out.entry(*s)
                .and_modify(|c: &mut usize| *c = (*c).min(code))
                .or_insert(code);
        }
        out
    }

    /// `Σ d_s(W_s)` with positions coded by [`pair`].
    pub fn obedience_sum(&self, d: &CostApproximation) -> Q {
        self.least_new_codes()
            .into_iter()
            .fold(Q::zero(), |acc, (s, code)| acc + d.value(s, code))
    }

    /// Pairs sorted by enumeration stage, ties by `x` then `n`.
    pub fn enumeration(&self) -> Vec<(usize, usize, usize)> {
        let mut v: Vec<_> = self.pairs.iter().map(|((x, n), s)| (*s, *x, *n)).collect();
        v.sort();
        v
    }
}

/// Change set of `⟨B_{h(i)}⟩`, with `h` the identity when absent. Entries of
/// `h` at or past the horizon are clipped.
pub fn change_set(b: &Delta02Approximation, speedup: Option<&[usize]>) -> Result<ChangeSet> {
    let seq: Vec<usize> = match speedup {
        Some(h) => {
            check_increasing(h)?;
            h.iter().copied().take_while(|&t| t < b.horizon()).collect()
        }
        None => (0..b.horizon()).collect(),
    };
    let mut counts = vec![0usize; b.width()];
    let mut pairs = BTreeMap::new();
    for i in 1..seq.len() {
        let (prev, cur) = (b.row(seq[i - 1]), b.row(seq[i]));
        for (x, count) in counts.iter_mut().enumerate() {
            if prev.bit(x) != cur.bit(x) {
                *count += 1;
                pairs.insert((x, *count), i);
            }
        }
    }
    Ok(ChangeSet {
        pairs,
        stages: seq.len(),
    })
}

/// `B(x) = B_0(x) XOR parity(max n with (x, n) ∈ W)`.
pub fn decode(w: &ChangeSet, b0: &BinaryString) -> BinaryString {
    BinaryString::from_bits((0..b0.len()).map(|x| b0.bit(x) ^ (w.max_count(x) % 2 == 1)))
}

#[derive(Clone, Debug, Serialize)]
pub struct SpeedupStep {
    pub s: usize,
    pub t: usize,
    pub x: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpeedupOutcome {
    /// `h(s) = t_{s+1}`.
    pub h: Vec<usize>,
    /// `(t_s, x_s)` for `s = 0, 1, …`.
    pub ledger: Vec<SpeedupStep>,
    /// Initial entries of `h` dropped so that the tail sum meets the budget.
    pub omitted: usize,
    #[serde(serialize_with = "ser_q")]
    pub full_sum: Q,
    #[serde(serialize_with = "ser_q")]
    pub tail_sum: Q,
    /// `2 Σ e_s(B̂_s) + Σ_{1≤s<|h|} 2^{-s}`.
    #[serde(serialize_with = "ser_q")]
    pub proof_bound: Q,
}

fn ser_q<S: serde::Serializer>(v: &Q, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&fmt_q(v))
}

impl SpeedupOutcome {
    /// `h` with the omitted prefix removed.
    pub fn tail(&self) -> &[usize] {
        &self.h[self.omitted..]
    }
}

/// Sum of `d_i(x)` along `⟨B_{h(i)}⟩`, `x` the least change between
/// consecutive composed stages.
pub fn obedience_along_speedup(d: &CostApproximation, b: &Delta02Approximation, h: &[usize]) -> Q {
    (1..h.len())
        .filter_map(|i| {
            b.row(h[i - 1])
                .first_difference(b.row(h[i]))
                .map(|x| (i, x))
        })
        .fold(Q::zero(), |acc, (i, x)| acc + d.value(i, x))
}

/// Searches for `required` values of `h` (so `required + 1` pairs
/// `(t_s, x_s)`), least pair first ordered by `t` then `x`, then drops the
/// fewest initial values of `h` that bring the sum within `budget`.
pub fn speedup_for_obedience(
    d: &CostApproximation,
    e: &CostApproximation,
    b: &Delta02Approximation,
    bhat: &Delta02Approximation,
    budget: &Q,
    required: usize,
) -> Result<SpeedupOutcome> {
    let horizon = b.horizon().min(bhat.horizon());
    let wide = d.width().max(b.width()).max(bhat.width());
    let agree_below = |t: usize, x: usize| (0..x.min(wide)).all(|y| b.bit(t, y) == bhat.bit(t, y));
    let mut ledger: Vec<SpeedupStep> = Vec::new();
    let (mut t_prev, mut x_prev) = (1usize, 1usize);
    let mut fails = [0usize; 3];
    for s in 0..=required {
        let threshold = pow2_neg(s as u32 + 1);
        let mut found = None;
        'search: for t in t_prev + 1..horizon {
            let guarded =
                (0..x_prev).all(|y| e.value(t, y) * Q::from_integer(2.into()) >= d.value(t, y));
            for x in x_prev + 1..=x_prev.max(wide) + 1 {
                if d.value(t, x) >= threshold {
                    fails[0] += 1;
                } else if !agree_below(t, x) {
                    fails[1] += 1;
                } else if !guarded {
                    fails[2] += 1;
                } else {
                    found = Some((t, x));
                    break 'search;
                }
            }
        }
        let Some((t, x)) = found else {
            return Err(Error::HorizonExhausted(format!(
                "no pair (t,x) for s={s} below stage {horizon}; failures: small-cost {}, agreement {}, guard {}",
                fails[0], fails[1], fails[2]
            )));
        };
        ledger.push(SpeedupStep { s, t, x });
        t_prev = t;
        x_prev = x;
    }
    let h: Vec<usize> = ledger.iter().skip(1).map(|st| st.t).collect();
    let full_sum = obedience_along_speedup(d, b, &h);
    let e_sum = crate::costfn::obedience_sum(e, bhat);
    let tail_geom = (1..h.len()).fold(Q::zero(), |acc, s| acc + pow2_neg(s as u32));
    let proof_bound = e_sum * Q::from_integer(2.into()) + tail_geom;
    let mut omitted = 0;
    let mut tail_sum = full_sum.clone();
    while tail_sum > *budget {
        omitted += 1;
        tail_sum = obedience_along_speedup(d, b, &h[omitted..]);
    }
    Ok(SpeedupOutcome {
        h,
        ledger,
        omitted,
        full_sum,
        tail_sum,
        proof_bound,
    })
}

/// Re-checks the three search conditions at each ledger step.
pub fn audit_speedup(
    d: &CostApproximation,
    e: &CostApproximation,
    b: &Delta02Approximation,
    bhat: &Delta02Approximation,
    out: &SpeedupOutcome,
) -> Result<()> {
    let (mut t_prev, mut x_prev) = (1usize, 1usize);
    for st in &out.ledger {
        let (t, x) = (st.t, st.x);
        if t <= t_prev || x <= x_prev {
            return Err(Error::Invariant(format!(
                "ledger step {} not increasing",
                st.s
            )));
        }
        if d.value(t, x) >= pow2_neg(st.s as u32 + 1) {
            return Err(Error::Invariant(format!("step {}: d_t(x) too large", st.s)));
        }
        if (0..x).any(|y| b.bit(t, y) != bhat.bit(t, y)) {
            return Err(Error::Invariant(format!(
                "step {}: B and B̂ disagree below x",
                st.s
            )));
        }
        if (0..x_prev).any(|y| e.value(t, y) * Q::from_integer(2.into()) < d.value(t, y)) {
            return Err(Error::Invariant(format!(
                "step {}: guard 2e ≥ d fails",
                st.s
            )));
        }
        t_prev = t;
        x_prev = x;
    }
    check_increasing(&out.h)
}
