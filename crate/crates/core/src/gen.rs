//! Seeded random instances for fuzzing and the acceptance suite.

use rand::Rng;

use crate::approx::{Delta02Approximation, Wall};
use crate::bitstr::BinaryString;
use crate::boxpromo::{measured_g, Scenario};
use crate::costfn::{scale, CostApproximation, PartialCostTable};
use crate::rational::{pow2_neg, q, Q};
use crate::synth::{Requirement, SynthScenario};
use crate::tracer::{BoxLayout, TraceOracle};
use crate::Result;

pub fn word<R: Rng>(rng: &mut R, len: usize) -> BinaryString {
    BinaryString::from_bits((0..len).map(|_| rng.gen_bool(0.5)))
}

/// Monotone dyadic table bounded by 1. Increments get rarer and smaller
/// further right, so the limit tends to 0.
pub fn cost<R: Rng>(rng: &mut R, horizon: usize, width: usize) -> CostApproximation {
    let mut rows: Vec<Vec<Q>> = vec![vec![Q::default(); width]; horizon];
    for s in 0..horizon {
        for x in (0..width).rev() {
            let below = if s > 0 {
                rows[s - 1][x].clone()
            } else {
                Q::default()
            };
            let right = if x + 1 < width {
                rows[s][x + 1].clone()
            } else {
                Q::default()
            };
            let mut v = if below > right { below } else { right };
            if rng.gen_bool(0.25 / (1.0 + x as f64 / 2.0)) {
                v += pow2_neg(rng.gen_range(x as u32 / 2 + 1..=x as u32 / 2 + 4));
            }
            let one = q(1, 1);
            rows[s][x] = if v > one { one } else { v };
        }
    }
    CostApproximation::new(rows).expect("generated table is monotone")
}

/// `max(L(x)·w_s, c'/8)` with `L` a decaying dyadic profile, `w_s` a
/// non-decreasing weight reaching 1 and `c'` a [`cost`] table. Markers for
/// thresholds `2^{-r}` stop near `x = r`.
pub fn benign_cost<R: Rng>(rng: &mut R, horizon: usize, width: usize) -> CostApproximation {
    let mut exp = 0u32;
    let profile: Vec<Q> = (0..width)
        .map(|_| {
            let v = pow2_neg(exp);
            exp += rng.gen_range(1..=2);
            v
        })
        .collect();
    let arrive = rng.gen_range(1..=horizon.max(2) / 2);
    let noise = cost(rng, horizon, width);
    let eighth = q(1, 8);
    CostApproximation::from_fn(horizon, width, |s, x| {
        let w = if s >= arrive {
            q(1, 1)
        } else {
            pow2_neg(((arrive - s) as u32).min(4))
        };
        let a = &profile[x] * w;
        let b = noise.value(s, x) * &eighth;
        if a > b {
            a
        } else {
            b
        }
    })
    .expect("max of monotone tables is monotone")
}

/// A total approximation that settles on a random word before the horizon.
pub fn settling_approx<R: Rng>(
    rng: &mut R,
    horizon: usize,
    width: usize,
    flips: usize,
) -> Delta02Approximation {
    let limit = word(rng, width);
    let settle = rng.gen_range(horizon / 2..=horizon * 3 / 4);
    let mut rows = Vec::with_capacity(horizon);
    let mut cur = word(rng, width);
    for s in 0..horizon {
        if s >= settle {
            cur = limit.clone();
        } else if width > 0 {
            for _ in 0..rng.gen_range(0..=flips) {
                let x = rng.gen_range(0..width);
                let mut bits: Vec<bool> = cur.bits().collect();
                bits[x] = !bits[x];
                cur = BinaryString::from_bits(bits);
            }
        }
        rows.push(cur.clone());
    }
    Delta02Approximation::total(rows).expect("rectangular")
}

/// Instance for the obedience speed-up: `d` is a [`cost`] table scaled by
/// 1/128 and frozen from some stage on, `e` is `d` delayed, `b` settles and
/// `bhat` is `b` delayed. Both pairs share their limits.
pub fn speedup_instance<R: Rng>(
    rng: &mut R,
    horizon: usize,
) -> (
    CostApproximation,
    CostApproximation,
    Delta02Approximation,
    Delta02Approximation,
) {
    let raw = scale(&cost(rng, horizon, 8), &q(1, 128));
    let freeze = rng.gen_range(horizon / 4..=horizon / 2);
    let d_rows: Vec<Vec<Q>> = (0..horizon)
        .map(|s| raw.rows()[s.min(freeze)].clone())
        .collect();
    let lag = rng.gen_range(0..=4);
    let e_rows: Vec<Vec<Q>> = (0..horizon)
        .map(|s| d_rows[s.saturating_sub(lag)].clone())
        .collect();
    let b = settling_approx(rng, horizon, 6, 2);
    let blag = rng.gen_range(0..=4);
    let bhat = (0..horizon)
        .map(|s| b.row(s.saturating_sub(blag)).clone())
        .collect();
    (
        CostApproximation::new(d_rows).expect("frozen rows stay monotone"),
        CostApproximation::new(e_rows).expect("delayed rows stay monotone"),
        b,
        Delta02Approximation::total(bhat).expect("rectangular"),
    )
}

pub fn total_approx<R: Rng>(rng: &mut R, horizon: usize, width: usize) -> Delta02Approximation {
    Delta02Approximation::total((0..horizon).map(|_| word(rng, width)).collect())
        .expect("rectangular")
}

/// Adds a random convergence schedule with some delayed and some divergent cells.
pub fn with_schedule<R: Rng>(
    rng: &mut R,
    a: &Delta02Approximation,
    delayed: usize,
    never: usize,
) -> Delta02Approximation {
    let mut sched = std::collections::BTreeMap::new();
    let (h, w) = (a.horizon(), a.width().max(1));
    for _ in 0..delayed {
        let u = rng.gen_range(0..h);
        sched.insert((u, rng.gen_range(0..w)), Wall::At(u + rng.gen_range(0..h)));
    }
    for _ in 0..never {
        sched.insert((rng.gen_range(0..h), rng.gen_range(0..w)), Wall::Never);
    }
    Delta02Approximation::new(a.rows().to_vec(), sched, None).expect("same rows")
}

/// A random box-promotion run: random cost, measured `g`, random ground
/// truth, and either an honest or a randomized oracle.
pub fn boxpromo_scenario<R: Rng>(
    rng: &mut R,
    o: usize,
    nmax: usize,
    horizon: usize,
) -> Result<Scenario> {
    let cost = if rng.gen_bool(0.8) {
        benign_cost(rng, horizon, horizon)
    } else {
        cost(rng, horizon, horizon)
    };
    let g = measured_g(&cost, nmax, horizon)?;
    let layout = BoxLayout::new(o, nmax, g)?;
    let len = rng.gen_range(1..=horizon);
    let truth = word(rng, len);
    let oracle = if rng.gen_bool(0.3) {
        TraceOracle::honest(truth.clone(), rng.gen_range(0..=2), o)
    } else {
        TraceOracle::random(rng.gen(), &truth, &layout, horizon)
    };
    Ok(Scenario {
        layout,
        cost,
        horizon,
        ground_truth: Some(truth),
        oracle,
    })
}

/// All-zero start with `changes` flips placed in the first half, mostly at
/// high positions; about half are undone a few stages later.
pub fn sparse_approx<R: Rng>(
    rng: &mut R,
    horizon: usize,
    width: usize,
    changes: usize,
) -> Delta02Approximation {
    let mut flips: Vec<(usize, usize)> = Vec::new();
    for _ in 0..changes {
        let s = rng.gen_range(1..=horizon / 2);
        let x = if rng.gen_bool(0.8) {
            rng.gen_range(width / 2..width)
        } else {
            rng.gen_range(0..width)
        };
        flips.push((s, x));
        if rng.gen_bool(0.5) {
            flips.push(((s + rng.gen_range(1..=6)).min(horizon - 1), x));
        }
    }
    let mut rows = Vec::with_capacity(horizon);
    let mut cur = vec![false; width];
    for s in 0..horizon {
        for (fs, x) in &flips {
            if *fs == s {
                cur[*x] = !cur[*x];
            }
        }
        rows.push(BinaryString::from_bits(cur.iter().copied()));
    }
    Delta02Approximation::total(rows).expect("rectangular")
}

/// A synthesis scenario with `reqs` requirements. Each `hᵉ` has gaps of 1 to
/// 4 and every value is observed a few stages after it is reached.
pub fn synth_scenario<R: Rng>(
    rng: &mut R,
    k: u32,
    horizon: usize,
    reqs: usize,
    delayed_cells: usize,
) -> SynthScenario {
    let width = rng.gen_range(4..=12);
    let changes = rng.gen_range(0..=6);
    let mut a = sparse_approx(rng, horizon, width, changes);
    if delayed_cells > 0 {
        a = with_schedule(rng, &a, delayed_cells, 0);
    }
    let requirements = (0..reqs)
        .map(|_| {
            let d = scale(&cost(rng, 40, 40), &q(1, 2));
            let mut h = Vec::new();
            let mut v = rng.gen_range(0..=3);
            while v < horizon {
                h.push((v, v + rng.gen_range(0..=5)));
                v += rng.gen_range(1..=4);
            }
            Requirement::new(d, h).expect("generated requirement is valid")
        })
        .collect();
    SynthScenario {
        a,
        k,
        requirements,
        horizon,
    }
}

/// A partial cost table with divergent cells, slow cells and cells above 1.
pub fn partial_cost<R: Rng>(rng: &mut R, horizon: usize, width: usize) -> PartialCostTable {
    let base = cost(rng, horizon, width);
    let mut cells: Vec<Vec<Option<(u64, Q)>>> = base
        .rows()
        .iter()
        .map(|r| {
            r.iter()
                .map(|v| Some((rng.gen_range(0..4u64), v.clone())))
                .collect()
        })
        .collect();
    let mut poke = |rng: &mut R, f: &dyn Fn(&mut R) -> Option<(u64, Q)>| {
        let (u, x) = (rng.gen_range(0..horizon), rng.gen_range(0..width));
        cells[u][x] = f(rng);
    };
    for _ in 0..rng.gen_range(0..3) {
        poke(rng, &|_| None);
    }
    for _ in 0..rng.gen_range(0..3) {
        poke(rng, &|r| {
            Some((r.gen_range(0..horizon as u64 * 2), q(r.gen_range(0..3), 2)))
        });
    }
    for _ in 0..rng.gen_range(0..2) {
        poke(rng, &|_| Some((0, q(2, 1))));
    }
    PartialCostTable::new(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generators_are_deterministic_and_valid() {
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        let ca = cost(&mut a, 10, 8);
        assert_eq!(ca, cost(&mut b, 10, 8));
        assert!(ca.is_normalized());
        let ap = settling_approx(&mut a, 12, 5, 2);
        assert_eq!(ap.row(11), ap.row(9));
    }
}
