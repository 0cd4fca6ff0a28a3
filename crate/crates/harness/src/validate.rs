//! Monte Carlo uniformity validation against the brute-force oracle.

use std::fmt::Write as _;
use std::sync::Arc;

use rustc_hash::FxHashMap;

use resjoin::reservoir::{derive_seed, Mutation};
use resjoin::{Candidate, Engine, EngineOptions, JoinQuery, StreamEvent, Value};

use crate::oracle::Oracle;
use crate::stats::{inclusion_test, InclusionTest};

#[derive(Clone, Debug)]
pub struct UniformityConfig {
    pub k: usize,
    pub trials: u64,
    pub seed: u64,
    /// Event counts after which samples are tallied.
    pub checkpoints: Vec<usize>,
    /// Oracle search-step cap.
    pub cap: u64,
    pub grouping: Option<bool>,
    pub mutation: Option<Mutation>,
    pub threads: usize,
}

impl UniformityConfig {
    pub fn new(k: usize, trials: u64, seed: u64, checkpoints: Vec<usize>) -> Self {
        Self {
            k,
            trials,
            seed,
            checkpoints,
            cap: 50_000_000,
            grouping: None,
            mutation: None,
            threads: default_threads(),
        }
    }
}

pub fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Event counts at the given fractions of a stream, rounded up, at least 1.
pub fn checkpoints_at(events: usize, fractions: &[f64]) -> Vec<usize> {
    fractions
        .iter()
        .map(|f| ((events as f64 * f).ceil() as usize).clamp(1, events.max(1)))
        .collect()
}

#[derive(Clone, Debug)]
pub struct CheckpointReport {
    pub events: usize,
    pub results: usize,
    pub counts: Vec<u64>,
    pub test: InclusionTest,
    /// Sampled values that are not join results, dummies included.
    pub foreign: u64,
    /// Trials whose sample repeats a result.
    pub repeated: u64,
    /// Trials whose sample size differs from `min(k, |Q|)`.
    pub wrong_size: u64,
}

impl CheckpointReport {
    pub fn passes(&self, alpha: f64) -> bool {
        self.test.passes(alpha) && self.foreign == 0 && self.repeated == 0 && self.wrong_size == 0
    }
}

#[derive(Clone, Debug)]
pub struct UniformityReport {
    pub query: String,
    pub k: usize,
    pub trials: u64,
    pub checkpoints: Vec<CheckpointReport>,
}

impl UniformityReport {
    pub fn passes(&self, alpha: f64) -> bool {
        self.checkpoints.iter().all(|c| c.passes(alpha))
    }

    pub const HEADER: &'static str = "query,k,trials,events,results,chi2,df,p_value,max_abs_z,max_dev,beyond_3sigma,beyond_3sigma_p,foreign,repeated,wrong_size";

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for c in &self.checkpoints {
            let t = &c.test;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:.4},{},{:.6e},{:.4},{:.6},{},{:.6e},{},{},{}",
                self.query,
                self.k,
                self.trials,
                c.events,
                c.results,
                t.chi2,
                t.df,
                t.p_value,
                t.max_abs_z,
                t.max_dev,
                t.beyond_3sigma,
                t.beyond_3sigma_p,
                c.foreign,
                c.repeated,
                c.wrong_size
            );
        }
        s
    }
}

struct Tally {
    counts: Vec<Vec<u64>>,
    foreign: Vec<u64>,
    repeated: Vec<u64>,
    wrong_size: Vec<u64>,
}

impl Tally {
    fn new(sizes: &[usize]) -> Self {
        Self {
            counts: sizes.iter().map(|&n| vec![0; n]).collect(),
            foreign: vec![0; sizes.len()],
            repeated: vec![0; sizes.len()],
            wrong_size: vec![0; sizes.len()],
        }
    }

    fn merge(&mut self, other: Tally) {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        let add = |a: &mut Vec<u64>, b: Vec<u64>| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.foreign, other.foreign);
        add(&mut self.repeated, other.repeated);
        add(&mut self.wrong_size, other.wrong_size);
    }
}

/// Exact `Q(R^i)` at every checkpoint, sorted.
pub fn oracle_results(
    query: &JoinQuery,
    events: &[StreamEvent],
    checkpoints: &[usize],
    cap: u64,
) -> anyhow::Result<Vec<Vec<Vec<Value>>>> {
    let mut oracle = Oracle::for_query(query);
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut done = 0usize;
    for &cp in checkpoints {
        anyhow::ensure!(cp <= events.len() && cp >= done, "checkpoints must be ordered and within the stream");
        for e in &events[done..cp] {
            oracle.insert(e.relation.index(), &e.values);
        }
        done = cp;
        out.push(oracle.join(cap)?);
    }
    Ok(out)
}

/// Runs `trials` independently seeded engines over the stream and tests
/// per-result inclusion frequencies at every checkpoint.
pub fn validate_uniformity(
    query: Arc<JoinQuery>,
    events: &[StreamEvent],
    cfg: &UniformityConfig,
) -> anyhow::Result<UniformityReport> {
    let truth = oracle_results(&query, events, &cfg.checkpoints, cfg.cap)?;
    let lookup: Vec<FxHashMap<&[Value], usize>> = truth
        .iter()
        .map(|rs| rs.iter().enumerate().map(|(i, r)| (r.as_slice(), i)).collect())
        .collect();
    let sizes: Vec<usize> = truth.iter().map(Vec::len).collect();

    let threads = cfg.threads.max(1).min(cfg.trials.max(1) as usize);
    let per = cfg.trials.div_ceil(threads as u64);
    let run = |lo: u64, hi: u64| -> anyhow::Result<Tally> {
        let mut tally = Tally::new(&sizes);
        let mut seen: Vec<usize> = Vec::with_capacity(cfg.k);
        for trial in lo..hi {
            let mut opts = EngineOptions::new(cfg.k, derive_seed(cfg.seed, trial));
            opts.grouping = cfg.grouping;
            opts.mutation = cfg.mutation;
            let mut engine = Engine::new(query.clone(), opts);
            let mut next = 0usize;
            for (i, e) in events.iter().enumerate() {
                engine.feed(e)?;
                while next < cfg.checkpoints.len() && cfg.checkpoints[next] == i + 1 {
                    seen.clear();
                    let samples = engine.reservoir().samples();
                    if samples.len() != cfg.k.min(sizes[next]) {
                        tally.wrong_size[next] += 1;
                    }
                    for c in samples {
                        let idx = match c {
                            Candidate::Real(r) => lookup[next].get(engine.result_values(r).as_slice()).copied(),
                            Candidate::Dummy => None,
                        };
                        match idx {
                            Some(j) => {
                                tally.counts[next][j] += 1;
                                seen.push(j);
                            }
                            None => tally.foreign[next] += 1,
                        }
                    }
                    seen.sort_unstable();
                    if seen.windows(2).any(|w| w[0] == w[1]) {
                        tally.repeated[next] += 1;
                    }
                    next += 1;
                }
            }
        }
        Ok(tally)
    };
    let parts: Vec<anyhow::Result<Tally>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads as u64)
            .map(|t| {
                let lo = (t * per).min(cfg.trials);
                let hi = ((t + 1) * per).min(cfg.trials);
                let run = &run;
                s.spawn(move || run(lo, hi))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("trial worker panicked")).collect()
    });
    let mut total = Tally::new(&sizes);
    for p in parts {
        total.merge(p?);
    }

    let checkpoints = cfg
        .checkpoints
        .iter()
        .enumerate()
        .map(|(i, &ev)| CheckpointReport {
            events: ev,
            results: sizes[i],
            test: inclusion_test(&total.counts[i], cfg.trials, cfg.k),
            counts: total.counts[i].clone(),
            foreign: total.foreign[i],
            repeated: total.repeated[i],
            wrong_size: total.wrong_size[i],
        })
        .collect();
    Ok(UniformityReport {
        query: query.name.clone(),
        k: cfg.k,
        trials: cfg.trials,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::{random_instance, rng};
    use crate::queries;

    fn small_line3() -> (Arc<JoinQuery>, Vec<StreamEvent>) {
        let q = Arc::new(queries::load("line3").unwrap());
        let ev = random_instance(&q, 8, 3, &mut rng(31));
        (q, ev)
    }

    #[test]
    fn tiny_line3_is_uniform() {
        let (q, ev) = small_line3();
        let cps = checkpoints_at(ev.len(), &[0.5, 1.0]);
        let cfg = UniformityConfig::new(3, 20_000, 7, cps);
        let r = validate_uniformity(q, &ev, &cfg).unwrap();
        assert!(r.checkpoints.last().unwrap().results > 3);
        assert!(r.passes(0.001), "{}", r.to_csv());
    }

    #[test]
    fn large_k_includes_everything() {
        let (q, ev) = small_line3();
        let cps = checkpoints_at(ev.len(), &[1.0]);
        let cfg = UniformityConfig::new(10_000, 50, 1, cps);
        let r = validate_uniformity(q, &ev, &cfg).unwrap();
        let c = &r.checkpoints[0];
        assert!(c.counts.iter().all(|&n| n == 50));
        assert!(r.passes(0.001));
    }

    #[test]
    fn frozen_weight_is_detected() {
        let (q, ev) = small_line3();
        let cps = checkpoints_at(ev.len(), &[1.0]);
        let mut cfg = UniformityConfig::new(2, 20_000, 3, cps);
        cfg.mutation = Some(Mutation::FreezeWeight);
        let r = validate_uniformity(q, &ev, &cfg).unwrap();
        assert!(r.checkpoints[0].test.p_value < 1e-6, "{}", r.to_csv());
    }

    #[test]
    fn thread_count_does_not_change_counts() {
        let (q, ev) = small_line3();
        let cps = checkpoints_at(ev.len(), &[1.0]);
        let mut cfg = UniformityConfig::new(2, 600, 5, cps);
        cfg.threads = 1;
        let a = validate_uniformity(q.clone(), &ev, &cfg).unwrap();
        cfg.threads = 4;
        let b = validate_uniformity(q, &ev, &cfg).unwrap();
        assert_eq!(a.checkpoints[0].counts, b.checkpoints[0].counts);
    }
}
