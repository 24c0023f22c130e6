//! Box layout, the functional Ψ and trace oracles.
//!
//! An oracle is described per level `n` by a family of at most `n`
//! candidate reals `γ_j` (each a finite word padded with zeros), each with a
//! reveal stage and a delay. A hypercube box `z_ν` traces, for each `γ_j`
//! lying in `[Z_ν]`, the member of `Z_ν` below `γ_j`; an initial-testing box
//! `z^n_k` traces `γ_j↾ℓ^n_k`, plus optional scripted noise. Every box thus
//! holds at most `n` values, and the honest oracle is the family `{A}`.

use std::collections::{BTreeMap, BTreeSet};

use num::{BigUint, One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bitstr::{cover_avoiding, extensions_avoiding, Antichain, BinaryString};
use crate::{Error, Result};

/// Number of subsets of `{1..n}` of size at most 2.
pub fn alpha(n: usize) -> Result<u64> {
    if n == 0 {
        return Err(Error::Precondition("alpha is defined for n ≥ 1".into()));
    }
    let n = n as u64;
    Ok(1 + n + n * (n - 1) / 2)
}

/// Index of a member of `P(n)`: ∅, {1}, …, {n}, {1,2}, {1,3}, …, {n-1,n}.
fn subset_index(n: usize, mask: u32) -> u64 {
    let elems: Vec<usize> = (1..=n).filter(|i| mask & (1 << (i - 1)) != 0).collect();
    match elems[..] {
        [] => 0,
        [i] => i as u64,
        [i, j] => {
            // Pairs in lexicographic order after the n singletons.
            let before: usize = (1..i).map(|a| n - a).sum();
            (n + before + (j - i)) as u64
        }
        _ => unreachable!("validated"),
    }
}

/// Stable identifier of an input.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum BoxId {
    /// `z^n_k`, `k` counted from 1.
    Initial { n: usize, k: usize },
    /// `z_ν` in `M^n`; `nu[k-1]` is the bitmask of `ν(k)` (bit `i-1` for `i`).
    Cube { n: usize, nu: Vec<u32> },
}

impl BoxId {
    pub fn level(&self) -> usize {
        match self {
            BoxId::Initial { n, .. } | BoxId::Cube { n, .. } => *n,
        }
    }
}

/// The partition `M^1, I^1, M^2, I^2, …` up to `nmax`, with `g` given as a
/// table indexed by level.
#[derive(Clone, Debug, Serialize)]
pub struct BoxLayout {
    pub o: usize,
    pub nmax: usize,
    g: Vec<usize>,
}

impl BoxLayout {
    /// `g[n]` must be present for every `1 ≤ n ≤ nmax`; `g[0]` is ignored.
    pub fn new(o: usize, nmax: usize, g: Vec<usize>) -> Result<Self> {
        if o == 0 {
            return Err(Error::Precondition("overhead o must be at least 1".into()));
        }
        if nmax < o {
            return Err(Error::Precondition(format!("nmax {nmax} below o {o}")));
        }
        if g.len() <= nmax {
            return Err(Error::Rejected(format!(
                "g table covers levels < {}, need up to {nmax}",
                g.len()
            )));
        }
        Ok(Self { o, nmax, g })
    }

    pub fn g(&self, n: usize) -> usize {
        self.g[n]
    }

    pub fn g_table(&self) -> &[usize] {
        &self.g
    }

    /// `|D(n)| = |I^n| = n + g(n)`.
    pub fn dims(&self, n: usize) -> usize {
        n + self.g[n]
    }

    /// Trace capacity `max{h(z), o}` of a level-`n` box.
    pub fn capacity(&self, n: usize) -> usize {
        n.max(self.o)
    }

    pub fn m_size(&self, n: usize) -> BigUint {
        BigUint::from(alpha(n).expect("n ≥ 1")).pow(self.dims(n) as u32)
    }

    fn m_offset(&self, n: usize) -> BigUint {
        (1..n).fold(BigUint::zero(), |acc, m| {
            acc + self.m_size(m) + BigUint::from(self.dims(m))
        })
    }

    pub fn box_coord(&self, n: usize, nu: &[BTreeSet<usize>]) -> Result<BoxId> {
        if n == 0 || n > self.nmax {
            return Err(Error::Rejected(format!(
                "level {n} outside 1..={}",
                self.nmax
            )));
        }
        if nu.len() != self.dims(n) {
            return Err(Error::Rejected(format!(
                "ν must have {} directions, got {}",
                self.dims(n),
                nu.len()
            )));
        }
        let mut masks = Vec::with_capacity(nu.len());
        for (k, set) in nu.iter().enumerate() {
            if set.len() > 2 || set.iter().any(|&i| i == 0 || i > n) {
                return Err(Error::Rejected(format!(
                    "ν({}) = {set:?} is not in P({n})",
                    k + 1
                )));
            }
            masks.push(set.iter().fold(0u32, |m, &i| m | (1 << (i - 1))));
        }
        Ok(BoxId::Cube { n, nu: masks })
    }

    /// Position of the box in ω.
    pub fn position(&self, id: &BoxId) -> BigUint {
        match id {
            BoxId::Initial { n, k } => self.m_offset(*n) + self.m_size(*n) + BigUint::from(k - 1),
            BoxId::Cube { n, nu } => {
                let a = BigUint::from(alpha(*n).expect("n ≥ 1"));
                let mut pos = BigUint::zero();
                let mut place = BigUint::one();
                for mask in nu {
                    pos += &place * BigUint::from(subset_index(*n, *mask));
                    place *= &a;
                }
                self.m_offset(*n) + pos
            }
        }
    }

    /// The order function: `h(x) = n` on `M^n ∪ I^n`; `None` past `nmax`.
    pub fn order(&self, x: &BigUint) -> Option<usize> {
        let mut start = BigUint::zero();
        for n in 1..=self.nmax {
            start += self.m_size(n) + BigUint::from(self.dims(n));
            if *x < start {
                return Some(n);
            }
        }
        None
    }
}

/// The strings tested on one box, each with the stage it entered.
#[derive(Clone, Debug, Default)]
pub struct TestedSet {
    members: Antichain,
    entered: BTreeMap<BinaryString, usize>,
}

impl TestedSet {
    pub fn members(&self) -> &Antichain {
        &self.members
    }

    pub fn entered(&self, sigma: &BinaryString) -> Option<usize> {
        self.entered.get(sigma).copied()
    }

    /// The member below the infinite sequence `gamma⌢0^ω`, if any.
    pub fn member_below_real(&self, gamma: &BinaryString) -> Option<&BinaryString> {
        self.members.iter().find(|m| prefix_of_real(m, gamma))
    }

    fn add_all(&mut self, new: BTreeSet<BinaryString>, stage: usize) -> Result<()> {
        for tau in new {
            self.entered.insert(tau.clone(), stage);
            self.members.insert(tau)?;
        }
        Ok(())
    }
}

/// `sigma ⊑ gamma⌢0^ω`.
pub fn prefix_of_real(sigma: &BinaryString, gamma: &BinaryString) -> bool {
    (0..sigma.len()).all(|i| sigma.bit(i) == (i < gamma.len() && gamma.bit(i)))
}

/// `(gamma⌢0^ω)↾len`.
pub fn real_prefix(gamma: &BinaryString, len: usize) -> BinaryString {
    BinaryString::from_bits((0..len).map(|i| i < gamma.len() && gamma.bit(i)))
}

/// How a test adds strings to a box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TestMode {
    /// Every length-`s` extension not already covered.
    Literal,
    /// The minimal prefix-free family with the same clopen set.
    Compressed,
}

/// Axioms `Ψ^τ(z) = τ`, kept as one tested set per box.
#[derive(Clone, Debug, Default)]
pub struct Functional {
    boxes: BTreeMap<BoxId, TestedSet>,
}

impl Functional {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tested(&self, z: &BoxId) -> Option<&TestedSet> {
        self.boxes.get(z)
    }

    pub fn boxes(&self) -> impl Iterator<Item = (&BoxId, &TestedSet)> {
        self.boxes.iter()
    }

    /// Makes `[σ] ⊆ 𝒵_z` while keeping `Z_z` an antichain.
    pub fn test_string(
        &mut self,
        z: &BoxId,
        sigma: &BinaryString,
        s: usize,
        mode: TestMode,
    ) -> Result<()> {
        let set = self.boxes.entry(z.clone()).or_default();
        let new = match mode {
            TestMode::Literal => extensions_avoiding(sigma, s, &set.members)?,
            TestMode::Compressed => {
                if sigma.len() > s {
                    return Err(Error::Precondition(format!(
                        "|σ| = {} exceeds stage {s}",
                        sigma.len()
                    )));
                }
                cover_avoiding(sigma, &set.members)
            }
        };
        set.add_all(new, s)
    }

    /// At most one axiom applies to any `x` of length `depth`.
    pub fn single_valued_at(&self, depth: usize) -> bool {
        assert!(depth < 20, "brute-force depth too large");
        self.boxes.values().all(|set| {
            BinaryString::all_of_length(depth)
                .all(|x| set.members.iter().filter(|m| m.comparable(&x)).count() <= 1)
        })
    }
}

/// One candidate real of a level family.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Candidate {
    pub value: BinaryString,
    pub reveal: usize,
    pub delay: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Policy {
    Honest { delay: usize },
    Scripted,
    Random { seed: u64 },
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceOracle {
    pub policy: Policy,
    families: BTreeMap<usize, Vec<Candidate>>,
    /// Extra values for initial-testing boxes, keyed by `(n, k)`.
    noise: BTreeMap<(usize, usize), Vec<(usize, BinaryString)>>,
    honest: Option<Candidate>,
    o: usize,
}

impl TraceOracle {
    /// The family `{A}` at every level.
    pub fn honest(ground_truth: BinaryString, delay: usize, o: usize) -> Self {
        Self {
            policy: Policy::Honest { delay },
            families: BTreeMap::new(),
            noise: BTreeMap::new(),
            honest: Some(Candidate {
                value: ground_truth,
                reveal: 0,
                delay,
            }),
            o,
        }
    }

    /// Never enumerates anything.
    pub fn silent(o: usize) -> Self {
        Self {
            policy: Policy::Scripted,
            families: BTreeMap::new(),
            noise: BTreeMap::new(),
            honest: None,
            o,
        }
    }

    /// Lines `stage M<n> value [delay]` add a candidate to level `n`;
    /// lines `stage I<n>.<k> value` add noise to `z^n_k`.
    pub fn scripted(text: &str, o: usize) -> Result<Self> {
        let mut oracle = Self::silent(o);
        for (i, line) in text.lines().enumerate() {
            let ln = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            if !(3..=4).contains(&toks.len()) {
                return Err(Error::parse(ln, "expected `stage box value [delay]`"));
            }
            let stage: usize = toks[0]
                .parse()
                .map_err(|_| Error::parse(ln, format!("bad stage {:?}", toks[0])))?;
            let value: BinaryString = toks[2]
                .parse()
                .map_err(|_| Error::parse(ln, format!("bad word {:?}", toks[2])))?;
            let delay: usize = match toks.get(3) {
                Some(t) => t
                    .parse()
                    .map_err(|_| Error::parse(ln, format!("bad delay {t:?}")))?,
                None => 0,
            };
            if let Some(level) = toks[1].strip_prefix('M') {
                let n: usize = level
                    .parse()
                    .map_err(|_| Error::parse(ln, format!("bad level {level:?}")))?;
                oracle.families.entry(n).or_default().push(Candidate {
                    value,
                    reveal: stage,
                    delay,
                });
            } else if let Some(rest) = toks[1].strip_prefix('I') {
                let (n, k) = rest
                    .split_once('.')
                    .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)))
                    .ok_or_else(|| Error::parse(ln, format!("bad box {:?}", toks[1])))?;
                oracle.noise.entry((n, k)).or_default().push((stage, value));
            } else {
                return Err(Error::parse(ln, format!("unknown box {:?}", toks[1])));
            }
        }
        oracle.validate_capacity()?;
        Ok(oracle)
    }

    fn validate_capacity(&self) -> Result<()> {
        for (n, fam) in &self.families {
            let cap = self.capacity(*n);
            if fam.len() > cap {
                return Err(Error::Rejected(format!(
                    "level {n} script has {} candidates, capacity {cap}",
                    fam.len()
                )));
            }
        }
        for ((n, k), extra) in &self.noise {
            let distinct: BTreeSet<_> = extra.iter().map(|(_, v)| v).collect();
            let used = distinct.len() + self.family(*n).len();
            if used > self.capacity(*n) {
                return Err(Error::Rejected(format!(
                    "box I{n}.{k} script can reach {used} values, capacity {}",
                    self.capacity(*n)
                )));
            }
        }
        Ok(())
    }

    /// A trace of `Ψ^A` with a random delay, padded out with random junk
    /// candidates near `A` and random noise; all clamped to capacity.
    pub fn random(
        seed: u64,
        ground_truth: &BinaryString,
        layout: &BoxLayout,
        horizon: usize,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = horizon.max(ground_truth.len()) + 1;
        let truth = real_prefix(ground_truth, len);
        let mut families = BTreeMap::new();
        let mut noise = BTreeMap::new();
        for n in layout.o..=layout.nmax {
            let cap = layout.capacity(n);
            let mut fam = vec![Candidate {
                value: truth.clone(),
                reveal: rng.gen_range(0..=horizon / 8),
                delay: rng.gen_range(0..=3),
            }];
            let junk = rng.gen_range(0..cap);
            for _ in 0..junk {
                let mut bits: Vec<bool> = truth.bits().collect();
                // Flip a couple of positions so candidates share long prefixes.
                // Early divergence points make the junk expensive to retract.
                let span = (2 * layout.nmax + 2).min(len);
                for _ in 0..rng.gen_range(1..=2) {
                    let p = rng.gen_range(0..span);
                    bits[p] = !bits[p];
                }
                fam.push(Candidate {
                    value: BinaryString::from_bits(bits),
                    reveal: rng.gen_range(0..=horizon / 4),
                    delay: rng.gen_range(0..=1),
                });
            }
            for k in 1..=layout.dims(n) {
                if rng.gen_bool(0.3) {
                    let count = rng.gen_range(1..=2);
                    let vals = (0..count)
                        .map(|_| {
                            let w = BinaryString::from_bits((0..len).map(|_| rng.gen_bool(0.5)));
                            (rng.gen_range(0..horizon.max(1)), w)
                        })
                        .collect();
                    noise.insert((n, k), vals);
                }
            }
            families.insert(n, fam);
        }
        Self {
            policy: Policy::Random { seed },
            families,
            noise,
            honest: None,
            o: layout.o,
        }
    }

    pub fn capacity(&self, n: usize) -> usize {
        n.max(self.o)
    }

    /// The level-`n` candidates, clamped to capacity by reveal order.
    pub fn family(&self, n: usize) -> Vec<Candidate> {
        if let Some(h) = &self.honest {
            return vec![h.clone()];
        }
        let mut fam = self.families.get(&n).cloned().unwrap_or_default();
        fam.sort_by_key(|c| c.reveal);
        fam.truncate(self.capacity(n));
        fam
    }

    /// `T(z^n_k)` for a box first tested at `first_tested` with all strings of
    /// length `len`: `(stage, value)` in enumeration order, ties
    /// lexicographic, at most `capacity(n)` distinct values.
    pub fn initial_trace(
        &self,
        n: usize,
        k: usize,
        len: usize,
        first_tested: usize,
    ) -> Vec<(usize, BinaryString)> {
        let cap = self.capacity(n);
        let mut chosen: BTreeMap<BinaryString, usize> = BTreeMap::new();
        for c in self.family(n) {
            let st = c.reveal.max(first_tested) + c.delay;
            let v = real_prefix(&c.value, len);
            chosen
                .entry(v)
                .and_modify(|e| *e = (*e).min(st))
                .or_insert(st);
        }
        // Noise only fills slots the family leaves free, so family values
        // (the traced Ψ^A among them) are never crowded out.
        let mut extra: Vec<(usize, BinaryString)> = self
            .noise
            .get(&(n, k))
            .map(|v| {
                v.iter()
                    .map(|(st, w)| ((*st).max(first_tested), real_prefix(w, len)))
                    .collect()
            })
            .unwrap_or_default();
        extra.sort();
        for (st, v) in extra {
            if chosen.len() == cap {
                break;
            }
            chosen.entry(v).or_insert(st);
        }
        let mut out: Vec<(usize, BinaryString)> =
            chosen.into_iter().map(|(v, st)| (st, v)).collect();
        out.sort();
        out
    }

    /// Least stage by which a string tested on the cube at stage `tested`
    /// is successful on every box it was tested on. Success is read only
    /// from the stage after the test.
    pub fn cube_success_stage(
        &self,
        n: usize,
        sigma: &BinaryString,
        tested: usize,
    ) -> Option<usize> {
        self.family(n)
            .iter()
            .filter(|c| prefix_of_real(sigma, &c.value))
            .map(|c| (c.reveal.max(tested) + c.delay).max(tested + 1))
            .min()
    }

    /// `T(z_ν)` for a materialized box: for each candidate in `[Z_ν]`, the
    /// member of `Z_ν` below it.
    pub fn cube_trace(&self, n: usize, z: &TestedSet) -> Vec<(usize, BinaryString)> {
        let mut out: BTreeMap<BinaryString, usize> = BTreeMap::new();
        for c in self.family(n) {
            if let Some(m) = z.member_below_real(&c.value) {
                let st = c.reveal.max(z.entered(m).unwrap_or(0)) + c.delay;
                out.entry(m.clone())
                    .and_modify(|e| *e = (*e).min(st))
                    .or_insert(st);
            }
        }
        let mut v: Vec<_> = out.into_iter().map(|(m, st)| (st, m)).collect();
        v.sort();
        v
    }

    /// New enumerations at stage `s` into the materialized boxes of `psi`.
    pub fn oracle_step(&self, psi: &Functional, s: usize) -> Vec<(BoxId, BinaryString)> {
        let mut out = Vec::new();
        for (id, set) in psi.boxes() {
            if let BoxId::Cube { n, .. } = id {
                for (st, v) in self.cube_trace(*n, set) {
                    if st == s {
                        out.push((id.clone(), v));
                    }
                }
            }
        }
        out
    }
}
