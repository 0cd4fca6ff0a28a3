//! Reservoir sampling with a predicate over streams of varying density.
//!
//! Items fail or pass a predicate that is costly to evaluate. The skip-based
//! reservoir evaluates it only on the items it lands on, so the work depends
//! on how dense the passing items are.

use std::fmt::Write as _;
use std::hint::black_box;

use rand::distr::{Alphanumeric, SampleString};
use rand::Rng;

use resjoin::reservoir::{derive_seed, DensityProfile, Reservoir, SliceStream};

use crate::gen::rng;
use crate::stats::mean_se;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Predicate {
    /// Burns `cost` rounds of integer mixing per evaluation.
    Busy { cost: u32 },
    /// Edit distance to a fixed query string at most `threshold`.
    EditDistance { threshold: usize },
}

#[derive(Clone, Debug)]
pub struct RswpConfig {
    pub n: usize,
    pub k: usize,
    pub densities: Vec<f64>,
    pub trials: u64,
    pub seed: u64,
    pub predicate: Predicate,
    /// Items are fed in batches of this size.
    pub batch: usize,
}

impl RswpConfig {
    pub fn new(n: usize, k: usize, densities: Vec<f64>, trials: u64, seed: u64) -> Self {
        Self {
            n,
            k,
            densities,
            trials,
            seed,
            predicate: Predicate::Busy { cost: 64 },
            batch: 1024,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RswpRow {
    pub density: f64,
    pub real_items: f64,
    pub mean_visited: f64,
    /// Standard error of `mean_visited` across trials.
    pub se_visited: f64,
    pub mean_predicate_calls: f64,
    pub mean_skip_stops: f64,
    /// Fill length plus expected skip stops for the same layouts.
    pub forecast_visited: f64,
}

pub const HEADER: &str =
    "density,mean_real,mean_visited,se_visited,mean_predicate_calls,mean_skip_stops,forecast_visited";

pub fn to_csv(rows: &[RswpRow]) -> String {
    let mut s = String::new();
    for r in rows {
        let _ = writeln!(
            s,
            "{:.2},{:.1},{:.1},{:.2},{:.1},{:.1},{:.1}",
            r.density, r.real_items, r.mean_visited, r.se_visited, r.mean_predicate_calls, r.mean_skip_stops, r.forecast_visited
        );
    }
    s
}

fn busy(real: bool, cost: u32) -> bool {
    let mut x = 0x9e37_79b9_7f4a_7c15u64;
    for i in 0..cost {
        x = black_box(x ^ (x >> 31)).wrapping_mul(0xbf58_476d_1ce4_e5b9).wrapping_add(i as u64);
    }
    black_box(x);
    real
}

pub fn levenshtein(a: &[u8], b: &[u8]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

const WORD: usize = 32;

/// A string within `threshold` edits of `query` when `real`, otherwise one
/// that is farther away.
fn word(query: &[u8], real: bool, threshold: usize, rng: &mut impl Rng) -> Vec<u8> {
    if real {
        let mut w = query.to_vec();
        for _ in 0..rng.random_range(0..=threshold / 2) {
            let i = rng.random_range(0..w.len());
            w[i] = rng.sample(Alphanumeric);
        }
        return w;
    }
    loop {
        let w = Alphanumeric.sample_string(rng, WORD).into_bytes();
        if levenshtein(&w, query) > threshold {
            return w;
        }
    }
}

#[derive(Clone, Debug)]
enum Item {
    Flag(bool),
    Word(Vec<u8>),
}

pub fn run(cfg: &RswpConfig) -> Vec<RswpRow> {
    let mut rows = Vec::with_capacity(cfg.densities.len());
    for (di, &d) in cfg.densities.iter().enumerate() {
        let (mut calls, mut stops, mut forecast, mut reals) = (0.0, 0.0, 0.0, 0.0);
        let mut visits = Vec::with_capacity(cfg.trials as usize);
        for trial in 0..cfg.trials {
            let seed = derive_seed(derive_seed(cfg.seed, di as u64), trial);
            let mut r = rng(seed);
            let marks: Vec<bool> = (0..cfg.n).map(|_| r.random_bool(d.clamp(0.0, 1.0))).collect();
            let profile = DensityProfile::from_marks(marks.iter().copied());
            let f = profile.expected_stops(cfg.k as u64);
            forecast += f.next_count as f64 + f.expected_skip_stops;
            reals += profile.real_count() as f64;
            let (items, query): (Vec<Item>, Vec<u8>) = match cfg.predicate {
                Predicate::Busy { .. } => (marks.iter().map(|&m| Item::Flag(m)).collect(), Vec::new()),
                Predicate::EditDistance { threshold } => {
                    let q = Alphanumeric.sample_string(&mut r, WORD).into_bytes();
                    let items = marks
                        .iter()
                        .map(|&m| Item::Word(word(&q, m, threshold, &mut r)))
                        .collect();
                    (items, q)
                }
            };
            let mut evaluations = 0u64;
            let mut theta = |x: &Item| {
                evaluations += 1;
                match (x, cfg.predicate) {
                    (Item::Flag(m), Predicate::Busy { cost }) => busy(*m, cost),
                    (Item::Word(w), Predicate::EditDistance { threshold }) => levenshtein(w, &query) <= threshold,
                    _ => unreachable!("item kind follows the predicate"),
                }
            };
            let mut res: Reservoir<Item> = Reservoir::new(cfg.k, derive_seed(seed, 1));
            for chunk in items.chunks(cfg.batch.max(1)) {
                res.batch_update(&mut SliceStream::new(chunk), &mut theta);
            }
            let st = res.stats();
            visits.push(st.visited() as f64);
            stops += st.skip_stops as f64;
            calls += evaluations as f64;
        }
        let t = cfg.trials.max(1) as f64;
        let (mean_visited, se_visited) = mean_se(&visits);
        rows.push(RswpRow {
            density: d,
            real_items: reals / t,
            mean_visited,
            se_visited,
            mean_predicate_calls: calls / t,
            mean_skip_stops: stops / t,
            forecast_visited: forecast / t,
        });
    }
    rows
}
