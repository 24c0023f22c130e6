//! Finite binary strings, prefix-free families and the clopen subsets of
//! Cantor space they generate.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};

use crate::{Error, Result};

/// A finite word over `{0,1}`. Ordering is lexicographic with a proper
/// prefix sorting before its extensions.
#[derive(Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BinaryString(Vec<u8>);

impl BinaryString {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn from_bits<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        Self(bits.into_iter().map(u8::from).collect())
    }

    /// `count` copies of `bit`.
    pub fn constant(bit: bool, count: usize) -> Self {
        Self(vec![u8::from(bit); count])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bit(&self, i: usize) -> bool {
        self.0[i] == 1
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        self.0.iter().map(|&b| b == 1)
    }

    pub fn child(&self, bit: bool) -> Self {
        let mut v = self.0.clone();
        v.push(u8::from(bit));
        Self(v)
    }

    pub fn push(&mut self, bit: bool) {
        self.0.push(u8::from(bit));
    }

    /// Pads with zeros (or truncates) to exactly `len` bits.
    pub fn padded(&self, len: usize) -> Self {
        let mut v = self.0.clone();
        v.resize(len, 0);
        Self(v)
    }

    pub fn restrict(&self, ell: usize) -> Result<Self> {
        if ell > self.len() {
            return Err(Error::Precondition(format!(
                "restrict to {ell} of a string of length {}",
                self.len()
            )));
        }
        Ok(Self(self.0[..ell].to_vec()))
    }

    /// Improper prefixes count: `σ ⪯ σ`.
    pub fn is_prefix_of(&self, other: &Self) -> bool {
        self.len() <= other.len() && other.0[..self.len()] == self.0[..]
    }

    pub fn comparable(&self, other: &Self) -> bool {
        self.is_prefix_of(other) || other.is_prefix_of(self)
    }

    /// Least index where the two strings differ, comparing up to the shorter
    /// length.
    pub fn first_difference(&self, other: &Self) -> Option<usize> {
        self.0.iter().zip(&other.0).position(|(a, b)| a != b)
    }

    /// All strings of length `len`, in lexicographic order.
    pub fn all_of_length(len: usize) -> impl Iterator<Item = BinaryString> {
        assert!(len < 32, "enumeration of 2^{len} strings");
        (0u64..(1u64 << len)).map(move |code| {
            BinaryString(
                (0..len)
                    .map(|i| ((code >> (len - 1 - i)) & 1) as u8)
                    .collect(),
            )
        })
    }
}

impl fmt::Display for BinaryString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("ε");
        }
        for &b in &self.0 {
            f.write_str(if b == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BinaryString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "\"{self}\"")
    }
}

impl FromStr for BinaryString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "ε" || s == "e" || s == "-" {
            return Ok(Self::empty());
        }
        s.chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::Rejected(format!("not a bit: {other:?}"))),
            })
            .collect::<Result<Vec<u8>>>()
            .map(Self)
    }
}

impl Serialize for BinaryString {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

/// Convenience for tests and literals; panics on a non-bit character.
pub fn bs(s: &str) -> BinaryString {
    s.parse().expect("binary literal")
}

pub fn restrict(sigma: &BinaryString, ell: usize) -> Result<BinaryString> {
    sigma.restrict(ell)
}

pub fn comparable(sigma: &BinaryString, tau: &BinaryString) -> bool {
    sigma.comparable(tau)
}

/// A finite prefix-free set of strings.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Antichain {
    members: BTreeSet<BinaryString>,
}

impl Antichain {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_members<I: IntoIterator<Item = BinaryString>>(items: I) -> Result<Self> {
        let mut a = Self::new();
        for m in items {
            a.insert(m)?;
        }
        Ok(a)
    }

    /// Rejects a string comparable with an existing member; re-inserting an
    /// existing member is also a violation.
    pub fn insert(&mut self, sigma: BinaryString) -> Result<()> {
        if let Some(clash) = self.members.iter().find(|m| m.comparable(&sigma)) {
            return Err(Error::Invariant(format!(
                "antichain violation: {sigma} is comparable with {clash}"
            )));
        }
        self.members.insert(sigma);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &BinaryString> {
        self.members.iter()
    }

    pub fn contains(&self, sigma: &BinaryString) -> bool {
        self.members.contains(sigma)
    }

    /// The member that is a prefix of `x`, if any (unique by prefix-freeness).
    pub fn member_below(&self, x: &BinaryString) -> Option<&BinaryString> {
        self.members.iter().find(|m| m.is_prefix_of(x))
    }

    /// Pairwise check, independent of how the set was built.
    pub fn is_prefix_free(&self) -> bool {
        let v: Vec<_> = self.members.iter().collect();
        v.iter()
            .enumerate()
            .all(|(i, a)| v[i + 1..].iter().all(|b| !a.comparable(b)))
    }
}

/// `[Z]`: the infinite sequences extending some generator.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ClopenSet {
    generators: Antichain,
}

impl ClopenSet {
    pub fn new(generators: Antichain) -> Self {
        Self { generators }
    }

    pub fn generators(&self) -> &Antichain {
        &self.generators
    }

    /// `[σ] ∩ C ≠ ∅`.
    pub fn meets(&self, sigma: &BinaryString) -> bool {
        self.generators.iter().any(|g| g.comparable(sigma))
    }

    /// `[σ] ⊆ C`.
    pub fn covers(&self, sigma: &BinaryString) -> bool {
        if self.generators.iter().any(|g| g.is_prefix_of(sigma)) {
            return true;
        }
        if !self
            .generators
            .iter()
            .any(|g| g.len() > sigma.len() && sigma.is_prefix_of(g))
        {
            return false;
        }
        self.covers(&sigma.child(false)) && self.covers(&sigma.child(true))
    }

    /// Depth-`L` view: the length-`L` strings whose cylinders lie in the set.
    /// Exact when every generator has length at most `L`.
    pub fn at_depth(&self, depth: usize) -> BTreeSet<BinaryString> {
        BinaryString::all_of_length(depth)
            .filter(|x| self.generators.member_below(x).is_some())
            .collect()
    }
}

pub fn meets(sigma: &BinaryString, set: &ClopenSet) -> bool {
    set.meets(sigma)
}

/// Every length-`L` extension of `sigma` that does not extend a member of `z`.
///
/// This enumerates `2^{L-|σ|}` strings; [`cover_avoiding`] produces the same
/// clopen set with a minimal number of generators.
pub fn extensions_avoiding(
    sigma: &BinaryString,
    len: usize,
    z: &Antichain,
) -> Result<BTreeSet<BinaryString>> {
    if len < sigma.len() {
        return Err(Error::Precondition(format!(
            "extension length {len} shorter than |σ| = {}",
            sigma.len()
        )));
    }
    let free = len - sigma.len();
    Ok(BinaryString::all_of_length(free)
        .map(|tail| BinaryString::from_bits(sigma.bits().chain(tail.bits())))
        .filter(|tau| z.member_below(tau).is_none())
        .collect())
}

/// Minimal prefix-free family `R` with `[R] = [σ] \ [Z]`, every member
/// extending `σ`. Empty when some member of `z` is a prefix of `σ`.
pub fn cover_avoiding(sigma: &BinaryString, z: &Antichain) -> BTreeSet<BinaryString> {
    let mut out = BTreeSet::new();
    cover_rec(sigma, z, &mut out);
    out
}

fn cover_rec(sigma: &BinaryString, z: &Antichain, out: &mut BTreeSet<BinaryString>) {
    if z.iter().any(|m| m.is_prefix_of(sigma)) {
        return;
    }
    if !z
        .iter()
        .any(|m| m.len() > sigma.len() && sigma.is_prefix_of(m))
    {
        out.insert(sigma.clone());
        return;
    }
    cover_rec(&sigma.child(false), z, out);
    cover_rec(&sigma.child(true), z, out);
}
