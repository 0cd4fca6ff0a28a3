//! Checkpointed runs of the engine and the two baselines.
//!
//! Work counters go to the metrics table, wall-clock numbers to a separate
//! timing table so that the former is reproducible byte for byte.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::{Duration, Instant};

use resjoin::{Engine, EngineOptions, JoinQuery, StreamEvent};

use crate::baseline::{MaterializedReservoir, RebuildRedraw};
use crate::oracle::Oracle;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    Engine,
    /// Rebuild-and-redraw over the materialized join (B1).
    Rebuild,
    /// Classic reservoir over every materialized delta result (B2).
    Materialized,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Engine => "engine",
            Method::Rebuild => "rebuild",
            Method::Materialized => "materialized",
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub k: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
    /// Work budget of a baseline, in visited items.
    pub budget: u64,
    /// Search-step cap of the backtracking oracle on cyclic queries.
    pub cap: u64,
    /// Whether to report `|Q(R)|` at checkpoints.
    pub oracle: bool,
    pub methods: Vec<Method>,
    pub grouping: Option<bool>,
}

impl BenchConfig {
    pub fn new(k: usize, seed: u64, checkpoint_every: usize) -> Self {
        Self {
            k,
            seed,
            checkpoint_every: checkpoint_every.max(1),
            budget: 100_000_000,
            cap: 10_000_000,
            oracle: true,
            methods: vec![Method::Engine, Method::Rebuild, Method::Materialized],
            grouping: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BenchRow {
    pub method: Method,
    pub events: usize,
    /// `Σ|ΔJ|` for the engine.
    pub padded_total: Option<u128>,
    pub join_size: Option<u128>,
    pub visited: u64,
    pub propagation_loops: u64,
    pub samples: usize,
    pub timed_out: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventTimes {
    pub median: Duration,
    pub p99: Duration,
    pub max: Duration,
    /// Share of events within 100 times the median.
    pub within_100x_median: f64,
}

impl EventTimes {
    pub fn from_durations(mut d: Vec<Duration>) -> Option<Self> {
        if d.is_empty() {
            return None;
        }
        d.sort_unstable();
        let q = |f: f64| d[((d.len() - 1) as f64 * f).round() as usize];
        let median = q(0.5);
        let bound = median * 100;
        let within = d.iter().filter(|&&x| x <= bound).count() as f64 / d.len() as f64;
        Some(Self {
            median,
            p99: q(0.99),
            max: *d.last().unwrap(),
            within_100x_median: within,
        })
    }
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub query: String,
    pub rows: Vec<BenchRow>,
    /// `(method, events, cumulative feed time)` per checkpoint.
    pub timings: Vec<(Method, usize, Duration)>,
    pub engine_event_times: Option<EventTimes>,
    pub max_event_propagation: u64,
    pub max_event_propagation_at: u64,
}

impl BenchReport {
    pub const HEADER: &'static str =
        "query,method,events,padded_total,join_size,visited,propagation_loops,samples,status";
    pub const TIMING_HEADER: &'static str = "query,method,events,elapsed_ms";

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<u128>| v.map_or("-".to_string(), |x| x.to_string());
        let mut s = String::new();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                self.query,
                r.method.name(),
                r.events,
                opt(r.padded_total),
                opt(r.join_size),
                r.visited,
                r.propagation_loops,
                r.samples,
                if r.timed_out { "timeout" } else { "ok" }
            );
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::new();
        for (m, ev, d) in &self.timings {
            let _ = writeln!(s, "{},{},{},{:.3}", self.query, m.name(), ev, d.as_secs_f64() * 1e3);
        }
        if let Some(t) = &self.engine_event_times {
            let _ = writeln!(
                s,
                "# engine per-event: median_us={:.3} p99_us={:.3} max_us={:.3} within_100x_median={:.5}",
                t.median.as_secs_f64() * 1e6,
                t.p99.as_secs_f64() * 1e6,
                t.max.as_secs_f64() * 1e6,
                t.within_100x_median
            );
        }
        s
    }

    pub fn final_row(&self, method: Method) -> Option<&BenchRow> {
        self.rows.iter().rev().find(|r| r.method == method)
    }
}

fn checkpoints(n: usize, every: usize) -> Vec<usize> {
    let mut cps: Vec<usize> = (every..=n).step_by(every).collect();
    if cps.last() != Some(&n) && n > 0 {
        cps.push(n);
    }
    cps
}

/// `|Q(R^i)|` at each checkpoint when it can be computed within the cap.
pub fn join_sizes(query: &JoinQuery, events: &[StreamEvent], cps: &[usize], cap: u64) -> Vec<Option<u128>> {
    let mut oracle = Oracle::for_query(query);
    let mut done = 0;
    cps.iter()
        .map(|&cp| {
            for e in &events[done..cp] {
                oracle.insert(e.relation.index(), &e.values);
            }
            done = cp;
            oracle
                .tree_count()
                .or_else(|| oracle.count(cap).ok().map(u128::from))
        })
        .collect()
}

pub fn bench(query: Arc<JoinQuery>, events: &[StreamEvent], cfg: &BenchConfig) -> anyhow::Result<BenchReport> {
    let cps = checkpoints(events.len(), cfg.checkpoint_every);
    let sizes = if cfg.oracle {
        join_sizes(&query, events, &cps, cfg.cap)
    } else {
        vec![None; cps.len()]
    };
    let mut report = BenchReport {
        query: query.name.clone(),
        rows: Vec::new(),
        timings: Vec::new(),
        engine_event_times: None,
        max_event_propagation: 0,
        max_event_propagation_at: 0,
    };
    for &method in &cfg.methods {
        match method {
            Method::Engine => {
                let mut opts = EngineOptions::new(cfg.k, cfg.seed);
                opts.grouping = cfg.grouping;
                let mut engine = Engine::new(query.clone(), opts);
                let mut per_event = Vec::with_capacity(events.len());
                let mut elapsed = Duration::ZERO;
                let mut next = 0;
                for (i, e) in events.iter().enumerate() {
                    let t0 = Instant::now();
                    engine.feed(e)?;
                    let dt = t0.elapsed();
                    elapsed += dt;
                    per_event.push(dt);
                    if next < cps.len() && cps[next] == i + 1 {
                        let m = engine.metrics();
                        report.rows.push(BenchRow {
                            method,
                            events: i + 1,
                            padded_total: Some(m.join_total),
                            join_size: sizes[next],
                            visited: m.reservoir.visited(),
                            propagation_loops: m.index.propagation_loops,
                            samples: engine.reservoir().samples().len(),
                            timed_out: false,
                        });
                        report.timings.push((method, i + 1, elapsed));
                        next += 1;
                    }
                }
                let m = engine.metrics();
                report.max_event_propagation = m.max_event_propagation;
                report.max_event_propagation_at = m.max_event_propagation_at;
                report.engine_event_times = EventTimes::from_durations(per_event);
            }
            Method::Rebuild | Method::Materialized => {
                enum B {
                    R(RebuildRedraw),
                    M(MaterializedReservoir),
                }
                let mut b = if method == Method::Rebuild {
                    B::R(RebuildRedraw::new(&query, cfg.k, cfg.seed, cfg.budget))
                } else {
                    B::M(MaterializedReservoir::new(&query, cfg.k, cfg.seed, cfg.budget))
                };
                let mut elapsed = Duration::ZERO;
                let mut next = 0;
                for (i, e) in events.iter().enumerate() {
                    let t0 = Instant::now();
                    let res = match &mut b {
                        B::R(r) => r.feed(e),
                        B::M(m) => m.feed(e),
                    };
                    elapsed += t0.elapsed();
                    let (visited, join, samples) = match &b {
                        B::R(r) => (r.visited(), r.join_size(), r.samples().len()),
                        B::M(m) => (m.visited(), m.join_size(), m.samples().len()),
                    };
                    let at_cp = next < cps.len() && cps[next] == i + 1;
                    if res.is_err() || at_cp {
                        report.rows.push(BenchRow {
                            method,
                            events: i + 1,
                            padded_total: None,
                            join_size: if res.is_err() { None } else { Some(join as u128) },
                            visited,
                            propagation_loops: 0,
                            samples,
                            timed_out: res.is_err(),
                        });
                        report.timings.push((method, i + 1, elapsed));
                        next += 1;
                    }
                    if res.is_err() {
                        break;
                    }
                }
            }
        }
    }
    Ok(report)
}
