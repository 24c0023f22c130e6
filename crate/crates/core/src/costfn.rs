//! Monotone cost-function approximations on a finite horizon, their marker
//! sequences, benignity certificates, obedience sums, weighted sums and the
//! totalization of partial approximations.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num::{One, Zero};
use serde::Serialize;

use crate::approx::Delta02Approximation;
use crate::rational::{ceil_neg_log2, fmt_q, parse_q, pow2, pow2_neg, q, Q};
use crate::{Error, Result};

/// A table `q(s, x)` for `s < horizon`, `x < width`.
///
/// Reads outside the table follow one convention throughout the crate:
/// columns `x ≥ width` read as 0 and stages `s ≥ horizon` repeat the last row.
/// When `settled` is set the last row is the limit, so the second convention
/// is exact rather than a guess.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostApproximation {
    rows: Vec<Vec<Q>>,
    width: usize,
    settled: bool,
}

impl CostApproximation {
    /// Validates shape, non-negativity and both monotonicity invariants.
    pub fn new(rows: Vec<Vec<Q>>) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.is_empty() {
            return Err(Error::Rejected(
                "cost table needs at least one stage".into(),
            ));
        }
        if let Some(s) = rows.iter().position(|r| r.len() != width) {
            return Err(Error::Rejected(format!("row {s} has the wrong width")));
        }
        let c = Self {
            rows,
            width,
            settled: false,
        };
        c.check_invariants()?;
        Ok(c)
    }

    pub fn from_fn(horizon: usize, width: usize, f: impl Fn(usize, usize) -> Q) -> Result<Self> {
        Self::new(
            (0..horizon)
                .map(|s| (0..width).map(|x| f(s, x)).collect())
                .collect(),
        )
    }

    /// `q(s, x) = 2^{-x}` at every stage.
    pub fn static_pow2(horizon: usize, width: usize) -> Self {
        Self::from_fn(horizon, width, |_, x| pow2_neg(x as u32))
            .expect("2^-x is monotone")
            .settled(true)
    }

    pub fn zero(horizon: usize, width: usize) -> Self {
        Self::from_fn(horizon, width, |_, _| Q::zero())
            .expect("zero is monotone")
            .settled(true)
    }

    pub fn settled(mut self, settled: bool) -> Self {
        self.settled = settled;
        self
    }

    pub fn is_settled(&self) -> bool {
        self.settled
    }

    pub fn horizon(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn rows(&self) -> &[Vec<Q>] {
        &self.rows
    }

    /// Value with the out-of-table conventions applied.
    pub fn value(&self, s: usize, x: usize) -> Q {
        if x >= self.width {
            return Q::zero();
        }
        let s = s.min(self.rows.len() - 1);
        self.rows[s][x].clone()
    }

    pub fn check_invariants(&self) -> Result<()> {
        for (s, row) in self.rows.iter().enumerate() {
            for (x, v) in row.iter().enumerate() {
                if *v < Q::zero() {
                    return Err(Error::Invariant(format!("negative cost at ({s},{x})")));
                }
                if x > 0 && *v > row[x - 1] {
                    return Err(Error::Invariant(format!(
                        "c_{s} increases from x={} to x={x}",
                        x - 1
                    )));
                }
                if s > 0 && *v < self.rows[s - 1][x] {
                    return Err(Error::Invariant(format!(
                        "c_s({x}) decreases from s={} to s={s}",
                        s - 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_normalized(&self) -> bool {
        self.rows.iter().flatten().all(|v| *v <= Q::one())
    }

    /// `q(s, x) = 0` whenever `x ≥ s`.
    pub fn is_listed_form(&self) -> bool {
        self.rows
            .iter()
            .enumerate()
            .all(|(s, row)| row.iter().skip(s).all(Zero::is_zero))
    }

    /// Zeroes every cell with `x ≥ s`. Monotonicity is preserved and the
    /// pointwise limit is unchanged.
    pub fn to_listed_form(&self) -> Self {
        let rows = self
            .rows
            .iter()
            .enumerate()
            .map(|(s, row)| {
                row.iter()
                    .enumerate()
                    .map(|(x, v)| if x >= s { Q::zero() } else { v.clone() })
                    .collect()
            })
            .collect();
        Self {
            rows,
            width: self.width,
            settled: false,
        }
    }

    /// Last-column value at the final stage, compared against `threshold`.
    /// Reported only; the limit condition is never enforced.
    pub fn limit_report(&self, threshold: &Q) -> LimitReport {
        let tail = self.value(self.horizon() - 1, self.width.saturating_sub(1));
        LimitReport {
            below_threshold: tail < *threshold,
            tail_value: fmt_q(&tail),
            threshold: fmt_q(threshold),
        }
    }

    /// Plain-text matrix: `S X`, then `S` rows of `p/q` tokens.
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
            let row: Vec<Q> = line
                .split_whitespace()
                .map(|t| parse_q(t).ok_or_else(|| Error::parse(ln, format!("bad rational {t:?}"))))
                .collect::<Result<_>>()?;
            if row.len() != width {
                return Err(Error::parse(
                    ln,
                    format!("expected {width} values, found {}", row.len()),
                ));
            }
            rows.push(row);
        }
        let mut settled = false;
        for (ln, line) in lines {
            if line == "settled" {
                settled = true;
            } else {
                return Err(Error::parse(
                    ln,
                    format!("unexpected trailing line {line:?}"),
                ));
            }
        }
        let c = Self::new(rows).map_err(|e| Error::parse(hline, e.to_string()))?;
        Ok(c.settled(settled))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.horizon(), self.width);
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(fmt_q).collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
        out
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LimitReport {
    pub tail_value: String,
    pub threshold: String,
    pub below_threshold: bool,
}

/// `m_1(ε) < m_2(ε) < …` for one approximation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MarkerSequence {
    pub epsilon: Q,
    pub markers: Vec<usize>,
    /// The count is only a lower bound on `k(ε)`: the horizon ended while the
    /// last marker's column could still reach `ε`.
    pub truncated: bool,
}

impl MarkerSequence {
    pub fn count(&self) -> usize {
        self.markers.len()
    }
}

/// Marker scan over the table's own horizon.
pub fn markers(c: &CostApproximation, epsilon: &Q) -> Result<MarkerSequence> {
    markers_upto(c, epsilon, c.horizon() - 1)
}

/// Marker scan using stages `≤ last_stage` only (stages past the table repeat
/// its last row). Markers never depend on later stages, so this is the
/// sequence as known at `last_stage`.
pub fn markers_upto(
    c: &CostApproximation,
    epsilon: &Q,
    last_stage: usize,
) -> Result<MarkerSequence> {
    if *epsilon <= Q::zero() {
        return Err(Error::Precondition(
            "marker threshold must be positive".into(),
        ));
    }
    let mut out = vec![0usize];
    loop {
        let m = *out.last().unwrap();
        let found = (m + 1..=last_stage).find(|&s| c.value(s, m) >= *epsilon);
        match found {
            Some(s) => out.push(s),
            None => {
                let within = last_stage + 1 >= c.horizon();
                // A settled table's last row is final, so the scan may run
                // on past the horizon exactly.
                if c.settled && within && m >= last_stage && c.value(last_stage, m) >= *epsilon {
                    out.push(m + 1);
                    continue;
                }
                let truncated = !(c.settled && within) && m < c.width();
                return Ok(MarkerSequence {
                    epsilon: epsilon.clone(),
                    markers: out,
                    truncated,
                });
            }
        }
    }
}

/// `Σ_{s≥1} c_s(x_s)` over stages where `A` changes, `x_s` the least change.
pub fn obedience_sum(c: &CostApproximation, a: &Delta02Approximation) -> Q {
    obedience_along(
        c,
        (1..a.horizon()).filter_map(|s| a.least_change(s).map(|x| (s, x))),
    )
}

/// Sum of `c_s(x)` over explicit `(s, x)` charge positions.
pub fn obedience_along(
    c: &CostApproximation,
    changes: impl IntoIterator<Item = (usize, usize)>,
) -> Q {
    changes
        .into_iter()
        .fold(Q::zero(), |acc, (s, x)| acc + c.value(s, x))
}

/// A computable bound `ε ↦ g(ε)` on marker counts.
#[derive(Clone, Debug)]
pub enum BenignBound {
    Const(u64),
    /// Explicit values at finitely many thresholds.
    Table(BTreeMap<Q, u64>),
    /// The measured marker count of a finite table, which bounds it exactly
    /// within its horizon.
    Measured(CostApproximation),
    /// `ε ↦ 2 + 2^{k+N} + N²(1 + 2^N + 2^{k+N})` with `2^{-N} < ε/2`.
    SynthClosedForm {
        k: u32,
    },
    /// `ε ↦ Σ_{j≤K} g^j(ε/4)` with `K = ⌈-log₂ ε⌉ + 1`.
    WeightedSum(Vec<BenignBound>),
}

impl BenignBound {
    pub fn eval(&self, eps: &Q) -> Option<u64> {
        match self {
            BenignBound::Const(v) => Some(*v),
            BenignBound::Table(t) => t.get(eps).copied(),
            BenignBound::Measured(c) => markers(c, eps).ok().map(|m| m.count() as u64),
            BenignBound::SynthClosedForm { k } => Some(synth_benign_bound(*k, eps)),
            BenignBound::WeightedSum(parts) => {
                let big_k = ceil_neg_log2(eps) as usize + 1;
                let quarter = eps / Q::from_integer(4.into());
                parts.iter().take(big_k + 1).map(|g| g.eval(&quarter)).sum()
            }
        }
    }
}

/// Closed-form benignity bound of the synthesized cost function.
pub fn synth_benign_bound(k: u32, eps: &Q) -> u64 {
    let n = crate::rational::least_pow2_below(&(eps / Q::from_integer(2.into())));
    let p_kn = 1u64 << (k + n);
    let p_n = 1u64 << n;
    let n = n as u64;
    2 + p_kn + n * n * (1 + p_n + p_kn)
}

#[derive(Clone, Debug, Serialize)]
pub struct BenignEntry {
    pub epsilon: String,
    pub count: usize,
    pub truncated: bool,
    pub bound: Option<u64>,
    pub verdict: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenignityCertificate {
    pub entries: Vec<BenignEntry>,
}

impl BenignityCertificate {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.verdict)
    }
}

/// Per `ε`: does the marker count stay within `g(ε)`? A missing bound value
/// fails the verdict.
pub fn check_benign(
    c: &CostApproximation,
    g: &BenignBound,
    eps_list: &[Q],
) -> Result<BenignityCertificate> {
    let entries = eps_list
        .iter()
        .map(|eps| {
            let m = markers(c, eps)?;
            let bound = g.eval(eps);
            Ok(BenignEntry {
                epsilon: fmt_q(eps),
                count: m.count(),
                truncated: m.truncated,
                bound,
                verdict: bound.is_some_and(|b| m.count() as u64 <= b),
            })
        })
        .collect::<Result<_>>()?;
    Ok(BenignityCertificate { entries })
}

/// `q(s,x) = Σ_{k<s} 2^{-k} q^k(s,x)` together with the bound
/// `ε ↦ Σ_{k≤K} g^k(ε/4)`.
///
/// The combined horizon is the shortest part horizon; the width is the widest.
pub fn sum_benign(
    parts: &[(CostApproximation, BenignBound)],
) -> Result<(CostApproximation, BenignBound)> {
    if parts.is_empty() {
        return Err(Error::Precondition("sum of zero cost functions".into()));
    }
    if let Some(i) = parts.iter().position(|(c, _)| !c.is_normalized()) {
        return Err(Error::Rejected(format!("part {i} exceeds 1")));
    }
    let horizon = parts.iter().map(|(c, _)| c.horizon()).min().unwrap();
    let width = parts.iter().map(|(c, _)| c.width()).max().unwrap();
    let combined = CostApproximation::from_fn(horizon, width, |s, x| {
        parts
            .iter()
            .take(s)
            .enumerate()
            .fold(Q::zero(), |acc, (k, (c, _))| {
                acc + pow2_neg(k as u32) * c.value(s, x)
            })
    })?
    .settled(parts.iter().all(|(c, _)| c.is_settled()) && horizon > parts.len());
    let bound = BenignBound::WeightedSum(parts.iter().map(|(_, g)| g.clone()).collect());
    Ok((combined, bound))
}

/// Scaled copy `factor · c`.
pub fn scale(c: &CostApproximation, factor: &Q) -> CostApproximation {
    CostApproximation {
        rows: c
            .rows
            .iter()
            .map(|r| r.iter().map(|v| v * factor).collect())
            .collect(),
        width: c.width,
        settled: c.settled,
    }
}

/// A partially computable cost array: each cell either converges after a
/// number of evaluation steps to a value, or never does. Cells outside the
/// stored rectangle diverge.
#[derive(Clone, Debug, Default)]
pub struct PartialCostTable {
    cells: Vec<Vec<Option<(u64, Q)>>>,
}

impl PartialCostTable {
    pub fn new(cells: Vec<Vec<Option<(u64, Q)>>>) -> Self {
        Self { cells }
    }

    /// Every cell converges at step 0.
    pub fn instant(c: &CostApproximation) -> Self {
        Self {
            cells: c
                .rows()
                .iter()
                .map(|r| r.iter().map(|v| Some((0, v.clone()))).collect())
                .collect(),
        }
    }

    pub fn set(&mut self, u: usize, x: usize, cell: Option<(u64, Q)>) {
        if let Some(c) = self.cells.get_mut(u).and_then(|r| r.get_mut(x)) {
            *c = cell;
        }
    }

    /// Runs the computation of `d_u(x)` for `steps` steps.
    pub fn probe(&self, u: usize, x: usize, steps: u64) -> Option<&Q> {
        match self.cells.get(u)?.get(x)? {
            Some((need, v)) if *need <= steps => Some(v),
            _ => None,
        }
    }
}

/// Greatest `t ≤ s` whose square `(u, x) ≤ t` converges within `s` steps,
/// stays within `[0, 1]` and is monotone; `None` if even `t = 0` fails.
pub fn certified_prefix(partial: &PartialCostTable, s: usize) -> Option<usize> {
    let steps = s as u64;
    let read = |u: usize, x: usize| -> Option<&Q> {
        partial
            .probe(u, x, steps)
            .filter(|v| **v >= Q::zero() && **v <= Q::one())
    };
    // Square t extends square t-1 by its border; each border cell is checked
    // against its left and lower neighbours, which lie inside the square.
    let cell_ok = |u: usize, x: usize| -> bool {
        let Some(v) = read(u, x) else { return false };
        (x == 0 || read(u, x - 1).is_some_and(|l| v <= l))
            && (u == 0 || read(u - 1, x).is_some_and(|d| v >= d))
    };
    let mut best = None;
    for t in 0..=s {
        let border = (0..=t).map(|x| (t, x)).chain((0..t).map(|u| (u, t)));
        if !border.into_iter().all(|(u, x)| cell_ok(u, x)) {
            break;
        }
        best = Some(t);
    }
    best
}

/// Total monotone approximation built by delaying: stage `s` copies
/// `d_{t(s)}` on `x ≤ t(s)` and is 0 beyond.
pub fn totalize(partial: &PartialCostTable, horizon: usize, width: usize) -> CostApproximation {
    let rows = (0..horizon)
        .map(|s| {
            let t = certified_prefix(partial, s);
            (0..width)
                .map(|x| match t {
                    Some(t) if x <= t => partial.probe(t, x, s as u64).cloned().unwrap_or_default(),
                    _ => Q::zero(),
                })
                .collect()
        })
        .collect();
    CostApproximation {
        rows,
        width,
        settled: false,
    }
}

/// Handy for tests and generators: `v/2^e`.
pub fn dyadic(v: i64, e: u32) -> Q {
    q(v, 1) * pow2_neg(e)
}

/// `2^k` as a rational.
pub fn two_pow(k: u32) -> Q {
    pow2(k)
}
