//! Bond percolation on the convolution graphs `G_r`.
//!
//! Vertices are `(m, n)` with column `m ∈ [0, W)` and row `n ∈ [0, H)`,
//! periodic in `n`. Column `m` connects to column `m + 1` through the edges
//! `(m, n) ~ (m + 1, n + i mod H)` for `i = 0 … r − 1`, i.e. a stride-1
//! convolution of kernel size `r`. A configuration percolates when an open
//! path joins column 0 to column `W − 1`.
//!
//! Each edge gets one uniform draw per trial and is open iff the draw is
//! below `p`, so for a fixed seed the crossing event is monotone in `p`.

use std::collections::VecDeque;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeSpec {
    pub r: usize,
    pub width: usize,
    pub height: usize,
    pub p: f64,
    pub seed: u64,
}

impl LatticeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.r < 2 {
            return Err(Error::domain(format!("kernel size r must be >= 2, got {}", self.r)));
        }
        if self.width < 2 || self.height < 2 {
            return Err(Error::domain("lattice needs at least 2 rows and 2 columns"));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::domain(format!("p must be in [0, 1], got {}", self.p)));
        }
        Ok(())
    }

    fn edge_count(&self) -> usize {
        (self.width - 1) * self.height * self.r
    }
}

/// Open-iff-below threshold on 32-bit draws; `p = 1` opens everything.
fn threshold(p: f64) -> u64 {
    (p * 4_294_967_296.0).floor() as u64
}

/// Fills `draws` with the edge draws for `seed`, ordered by
/// `(column, row, offset)`.
fn fill_draws(seed: u64, draws: &mut [u32]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for d in draws.iter_mut() {
        *d = rng.next_u32();
    }
}

fn crosses(spec: &LatticeSpec, draws: &[u32], visited: &mut [bool], queue: &mut VecDeque<usize>) -> bool {
    let (w, h, r) = (spec.width, spec.height, spec.r);
    let cut = threshold(spec.p);
    let open = |edge: usize| (draws[edge] as u64) < cut;
    visited.fill(false);
    queue.clear();
    for n in 0..h {
        visited[n] = true;
        queue.push_back(n);
    }
    while let Some(v) = queue.pop_front() {
        let (m, n) = (v / h, v % h);
        if m == w - 1 {
            return true;
        }
        // forward edges out of (m, n)
        for i in 0..r {
            if open((m * h + n) * r + i) {
                let u = (m + 1) * h + (n + i) % h;
                if !visited[u] {
                    visited[u] = true;
                    queue.push_back(u);
                }
            }
        }
        // backward edges into (m, n) from (m − 1, n − i)
        if m > 0 {
            for i in 0..r {
                let src = (n + h - i % h) % h;
                if open(((m - 1) * h + src) * r + i) {
                    let u = (m - 1) * h + src;
                    if !visited[u] {
                        visited[u] = true;
                        queue.push_back(u);
                    }
                }
            }
        }
    }
    false
}

/// One seeded sample: does an open path join the first and last columns?
pub fn percolation_trial(spec: &LatticeSpec) -> Result<bool> {
    spec.validate()?;
    let mut draws = vec![0u32; spec.edge_count()];
    fill_draws(spec.seed, &mut draws);
    let mut visited = vec![false; spec.width * spec.height];
    Ok(crosses(spec, &draws, &mut visited, &mut VecDeque::new()))
}

/// Seed of trial `t` in a batch seeded with `base`.
pub fn trial_seed(base: u64, t: usize) -> u64 {
    base.wrapping_add(t as u64)
}

/// Fraction of `trials` coupled samples that cross at `spec.p`.
pub fn crossing_frequency(spec: &LatticeSpec, trials: usize) -> Result<f64> {
    spec.validate()?;
    if trials == 0 {
        return Err(Error::domain("need at least one trial"));
    }
    let hits: usize = (0..trials)
        .into_par_iter()
        .map_init(
            || {
                (
                    vec![0u32; spec.edge_count()],
                    vec![false; spec.width * spec.height],
                    VecDeque::new(),
                )
            },
            |(draws, visited, queue), t| {
                fill_draws(trial_seed(spec.seed, t), draws);
                crosses(spec, draws, visited, queue) as usize
            },
        )
        .sum();
    Ok(hits as f64 / trials as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PercolationEstimate {
    pub r: usize,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    pub trials: usize,
    pub probes: usize,
    pub p_hat: f64,
    pub interval: [f64; 2],
}

impl PercolationEstimate {
    pub fn half_width(&self) -> f64 {
        (self.interval[1] - self.interval[0]) / 2.0
    }
}

/// Bisects `[0, 1]` for the `p` at which half the coupled trials cross.
pub fn estimate_threshold(
    r: usize,
    height: usize,
    width: usize,
    trials: usize,
    probes: usize,
    seed: u64,
) -> Result<PercolationEstimate> {
    if trials < 50 {
        return Err(Error::domain(format!("need at least 50 trials, got {trials}")));
    }
    if probes < 10 {
        return Err(Error::domain(format!("need at least 10 probes, got {probes}")));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..probes {
        let mid = (lo + hi) / 2.0;
        let spec = LatticeSpec {
            r,
            width,
            height,
            p: mid,
            seed,
        };
        if crossing_frequency(&spec, trials)? >= 0.5 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(PercolationEstimate {
        r,
        height,
        width,
        trials,
        probes,
        p_hat: (lo + hi) / 2.0,
        interval: [lo, hi],
    })
}

fn p0_poly(p: f64) -> f64 {
    2.0 * p + p * p - p.powi(4) - 1.0
}

/// Root of `2p + p² − p⁴ = 1` in `(0, 1)`, by bisection to 1e-10.
pub fn solve_p0() -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > 1e-10 {
        let mid = (lo + hi) / 2.0;
        if p0_poly(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo + hi) / 2.0
}

/// Checks that `(m, n) ↦ (m − n, n)` carries every `G₂` edge inside a
/// `patch × patch` window onto a unit square-lattice edge, injectively.
pub fn check_g2_isomorphism(patch: usize) -> Result<bool> {
    check_map_on_g2(patch, |m, n| (m - n, n))
}

/// Same check for an arbitrary vertex map.
pub fn check_map_on_g2(patch: usize, map: impl Fn(i64, i64) -> (i64, i64)) -> Result<bool> {
    if patch < 2 {
        return Err(Error::domain("patch size must be at least 2"));
    }
    let p = patch as i64;
    let mut images = std::collections::HashSet::new();
    for m in 0..p {
        for n in 0..p {
            if !images.insert(map(m, n)) {
                return Ok(false);
            }
        }
    }
    for m in 0..p - 1 {
        for n in 0..p {
            for i in 0..2 {
                if n + i >= p {
                    continue;
                }
                let (a, b) = (map(m, n), map(m + 1, n + i));
                if (a.0 - b.0).abs() + (a.1 - b.1).abs() != 1 {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}
