//! Named Monte Carlo and oracle checks, runnable one by one or as a suite.

use std::sync::Arc;

use rustc_hash::FxHashSet;

use resjoin::index::JoinIndex;
use resjoin::query::{load_query, QueryShape};
use resjoin::reservoir::{derive_seed, geo_sample, DensityProfile, Mutation, Reservoir, SliceStream, UniformSource};
use resjoin::{Engine, EngineOptions, Interner, JoinQuery, Value};

use crate::bench::{bench, BenchConfig, Method};
use crate::criteria::{count_bound_violations, line3_stream, sweep};
use crate::gen::{erdos_renyi, graph_stream, random_instance, rng};
use crate::ingest::{parse_stream, write_stream};
use crate::oracle::Oracle;
use crate::queries;
use crate::rswp::{self, RswpConfig};
use crate::stats::same_distribution;
use crate::validate::{checkpoints_at, default_threads, oracle_results, validate_uniformity, UniformityConfig};

pub struct Check {
    pub name: &'static str,
    pub about: &'static str,
    pub run: fn(u64) -> anyhow::Result<(bool, String)>,
}

pub const CHECKS: &[Check] = &[
    Check { name: "reservoir.geometric-mean", about: "mean skip at w=0.25 over 10^6 draws is 3 ± 0.02", run: geometric_mean },
    Check { name: "reservoir.k2-n5", about: "k=2, N=5: every inclusion probability 2/5 ± 0.01", run: k2_n5 },
    Check { name: "reservoir.all-real", about: "N=100, k=10 all real: inclusion 0.1 ± 0.005", run: all_real },
    Check { name: "reservoir.alternating", about: "N=200 alternating, k=5: real inclusion 0.05 ± 0.005", run: alternating },
    Check { name: "reservoir.two-batches", about: "batches [a,b],[c,d], k=1: each sampled with probability 1/4", run: two_batches },
    Check { name: "reservoir.split-equivalence", about: "single-item batches match one unsplit feed in distribution", run: split_equivalence },
    Check { name: "reservoir.alternating-stops", about: "stop count on N=200 alternating, k=5 within 5% of the forecast", run: alternating_stops },
    Check { name: "reservoir.density-rdrd", about: "[R,D,R,D] has density 1/2 by exhaustive prefix check", run: density_rdrd },
    Check { name: "index.reserve-trace", about: "first R2 tuple of line-3 waits until R3 is non-empty", run: reserve_trace },
    Check { name: "index.propagation-bound", about: "propagation loops on a 2000-tuple line-3 stream within 4 N log2 N", run: propagation_bound },
    Check { name: "index.bucket-size", about: "buckets (1,2),(3,1) give a batch of 12", run: bucket_size },
    Check { name: "index.sweep-oracle", about: "positional sweeps of line-3 batches equal oracle deltas, density bound holds", run: sweep_oracle },
    Check { name: "index.count-bound", about: "wcnt within 2^|T_e| of the subtree count on 100 line-3 instances", run: count_bound },
    Check { name: "ghd.triangle-delta", about: "triangle node delta after (2,3),(3,1) then (1,2) is (1,2,3)", run: triangle_delta },
    Check { name: "ghd.dumbbell-disjoint", about: "dumbbell node deltas on a 200-edge graph partition every node join", run: dumbbell_disjoint },
    Check { name: "engine.line3-uniform", about: "line-3, k=5, 2·10^5 trials: inclusion uniform at 25/50/100%", run: engine_line3_uniform },
    Check { name: "harness.er-roundtrip", about: "generated Erdős–Rényi stream survives write and parse", run: er_roundtrip },
    Check { name: "harness.oracle-consistency", about: "|Q| on 60 line-3 edges equals the summed deltas", run: oracle_consistency },
    Check { name: "harness.mutation", about: "frozen reservoir weight is detected with p < 10^-6", run: mutation },
    Check { name: "harness.tiny-uniform", about: "tiny line-3 instance passes at p > 0.001", run: tiny_uniform },
    Check { name: "harness.k-covers-all", about: "k ≥ |Q| samples every result in every trial", run: k_covers_all },
    Check { name: "bench.visit-ratio", about: "line-3, N=2^16: engine visits at most 5% of the materialized baseline", run: visit_ratio },
    Check { name: "bench.update-time", about: "line-4: 99% of events within 100x the median event time", run: update_time },
    Check { name: "rswp.density-gain", about: "N=10^5, k=10^3: density 1.0 visits at most a tenth of density 0", run: density_gain },
];

pub fn find(name: &str) -> Option<&'static Check> {
    CHECKS.iter().find(|c| c.name == name)
}

fn iv(v: &[i64]) -> Vec<Value> {
    v.iter().map(|&x| Value::Int(x)).collect()
}

/// Per-item inclusion frequencies of the skip reservoir on a fixed layout.
fn frequencies(marks: &[bool], k: usize, trials: u64, seed: u64, batched: bool) -> Vec<u64> {
    let items: Vec<(usize, bool)> = marks.iter().copied().enumerate().collect();
    let threads = default_threads().min(trials as usize).max(1) as u64;
    let per = trials.div_ceil(threads);
    let parts: Vec<Vec<u64>> = std::thread::scope(|s| {
        let hs: Vec<_> = (0..threads)
            .map(|t| {
                let items = &items;
                s.spawn(move || {
                    let mut counts = vec![0u64; items.len()];
                    for trial in (t * per).min(trials)..((t + 1) * per).min(trials) {
                        let mut r = Reservoir::new(k, derive_seed(seed, trial));
                        if batched {
                            for one in items.chunks(1) {
                                r.batch_update(&mut SliceStream::new(one), |x: &(usize, bool)| x.1);
                            }
                        } else {
                            r.feed(&mut SliceStream::new(items), |x: &(usize, bool)| x.1);
                        }
                        for &(i, _) in r.samples() {
                            counts[i] += 1;
                        }
                    }
                    counts
                })
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut total = vec![0u64; items.len()];
    for p in parts {
        total.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    total
}

fn within(counts: &[u64], trials: u64, target: f64, tol: f64) -> (bool, f64) {
    let worst = counts
        .iter()
        .map(|&c| (c as f64 / trials as f64 - target).abs())
        .fold(0.0, f64::max);
    (worst <= tol, worst)
}

fn geometric_mean(seed: u64) -> anyhow::Result<(bool, String)> {
    let mut src = UniformSource::seeded(seed);
    let n = 1_000_000u64;
    let total: u128 = (0..n).map(|_| geo_sample(0.25, &mut src)).sum();
    let mean = total as f64 / n as f64;
    Ok(((mean - 3.0).abs() <= 0.02, format!("mean {mean:.4}")))
}

fn k2_n5(seed: u64) -> anyhow::Result<(bool, String)> {
    let c = frequencies(&[true; 5], 2, 1_000_000, seed, false);
    let (ok, worst) = within(&c, 1_000_000, 0.4, 0.01);
    Ok((ok, format!("max deviation {worst:.5}")))
}

fn all_real(seed: u64) -> anyhow::Result<(bool, String)> {
    let c = frequencies(&[true; 100], 10, 1_000_000, seed, false);
    let (ok, worst) = within(&c, 1_000_000, 0.1, 0.005);
    Ok((ok, format!("max deviation {worst:.5}")))
}

fn alternating(seed: u64) -> anyhow::Result<(bool, String)> {
    let marks: Vec<bool> = (0..200).map(|i| i % 2 == 0).collect();
    let c = frequencies(&marks, 5, 1_000_000, seed, false);
    let reals: Vec<u64> = c.iter().step_by(2).copied().collect();
    let dummies: u64 = c.iter().skip(1).step_by(2).sum();
    let (ok, worst) = within(&reals, 1_000_000, 0.05, 0.005);
    Ok((ok && dummies == 0, format!("max deviation {worst:.5}, dummy samples {dummies}")))
}

fn two_batches(seed: u64) -> anyhow::Result<(bool, String)> {
    let trials = 1_000_000u64;
    let items = [0usize, 1, 2, 3];
    let mut hits = [0u64; 4];
    for t in 0..trials {
        let mut r = Reservoir::new(1, derive_seed(seed, t));
        r.batch_update(&mut SliceStream::new(&items[..2]), |_| true);
        r.batch_update(&mut SliceStream::new(&items[2..]), |_| true);
        hits[r.samples()[0]] += 1;
    }
    let (ok, worst) = within(&hits, trials, 0.25, 0.003);
    Ok((ok, format!("frequencies {hits:?}, max deviation {worst:.5}")))
}

fn split_equivalence(seed: u64) -> anyhow::Result<(bool, String)> {
    let marks: Vec<bool> = (0..1000).map(|i| i % 3 != 0).collect();
    let trials = 20_000;
    let a = frequencies(&marks, 10, trials, derive_seed(seed, 1), false);
    let b = frequencies(&marks, 10, trials, derive_seed(seed, 2), true);
    let keep = |c: &[u64]| -> Vec<u64> { c.iter().zip(&marks).filter(|x| *x.1).map(|x| *x.0).collect() };
    let (chi2, p) = same_distribution(&keep(&a), trials, &keep(&b), trials, 10);
    Ok((p > 0.001, format!("chi2 {chi2:.2}, p {p:.4}")))
}

fn alternating_stops(seed: u64) -> anyhow::Result<(bool, String)> {
    let marks: Vec<bool> = (0..200).map(|i| i % 2 == 0).collect();
    let trials = 100_000u64;
    let mut stops = 0u64;
    for t in 0..trials {
        let mut r: Reservoir<bool> = Reservoir::new(5, derive_seed(seed, t));
        r.feed(&mut SliceStream::new(&marks), |&x| x);
        stops += r.stats().skip_stops;
    }
    let measured = stops as f64 / trials as f64;
    let f = DensityProfile::from_marks(marks.iter().copied()).expected_stops(5);
    let rel = (measured - f.expected_skip_stops).abs() / f.expected_skip_stops;
    Ok((rel < 0.05, format!("measured {measured:.3}, forecast {:.3}", f.expected_skip_stops)))
}

fn density_rdrd(_: u64) -> anyhow::Result<(bool, String)> {
    let marks = [true, false, true, false];
    let mut brute = 1.0f64;
    for i in 1..=marks.len() {
        let reals = marks[..i].iter().filter(|&&m| m).count() as f64;
        brute = brute.min(reals / i as f64);
    }
    let d = DensityProfile::from_marks(marks).density();
    Ok((d == 0.5 && brute == 0.5, format!("density {d}, exhaustive {brute}")))
}

const LINE3: &str = r#"
[[relation]]
name = "R1"
attrs = ["X", "Y"]
[[relation]]
name = "R2"
attrs = ["Y", "Z"]
[[relation]]
name = "R3"
attrs = ["Z", "W"]
[tree]
edges = [["R1", "R2"], ["R2", "R3"]]
"#;

fn line3_index() -> anyhow::Result<JoinIndex> {
    Ok(JoinIndex::new(load_query(LINE3)?.index))
}

fn reserve_trace(_: u64) -> anyhow::Result<(bool, String)> {
    let mut idx = line3_index()?;
    idx.insert(1, &iv(&[1, 1]))?;
    let cnt0 = idx.cnt(0, 1, &iv(&[1]));
    let prof0 = idx.bucket_profile(0, 1, &iv(&[1]));
    idx.insert(2, &iv(&[1, 5]))?;
    let prof1 = idx.bucket_profile(0, 1, &iv(&[1]));
    let ok = cnt0 == 0 && prof0.is_empty() && prof1 == vec![(0, 1)];
    Ok((ok, format!("cnt before {cnt0}, buckets before {prof0:?}, after {prof1:?}")))
}

fn propagation_bound(seed: u64) -> anyhow::Result<(bool, String)> {
    let (q, events) = line3_stream(2000, seed)?;
    let mut engine = Engine::new(q, EngineOptions::new(10, seed));
    for e in &events {
        engine.feed(e)?;
    }
    let n = events.len() as f64;
    let loops = engine.metrics().index.propagation_loops;
    let bound = 4.0 * n * n.log2();
    Ok(((loops as f64) <= bound, format!("N={n}, loops {loops}, bound {bound:.0}")))
}

fn bucket_size(_: u64) -> anyhow::Result<(bool, String)> {
    let mut idx = line3_index()?;
    for (z, n) in [(10, 2), (11, 2), (12, 8)] {
        idx.insert(1, &iv(&[1, z]))?;
        for w in 0..n {
            idx.insert(2, &iv(&[z, w]))?;
        }
    }
    let prof = idx.bucket_profile(0, 1, &iv(&[1]));
    let row = idx.insert(0, &iv(&[7, 1]))?.expect("new tuple");
    let size = idx.batch(0, row).size;
    Ok((size == 12 && prof == vec![(1, 2), (3, 1)], format!("buckets {prof:?}, size {size}")))
}

fn sweep_oracle(seed: u64) -> anyhow::Result<(bool, String)> {
    let q = Arc::new(queries::load("line3")?);
    let events = random_instance(&q, 50, 8, &mut rng(seed));
    let nattrs = q.attributes.len();
    let bound = 1.0 - 0.5f64.powi(2 * q.index.relations.len() as i32 - 1);
    let mut opts = EngineOptions::new(3, seed);
    opts.grouping = Some(false);
    let mut engine = Engine::new(q.clone(), opts);
    let mut oracle = Oracle::for_query(&q);
    let (mut bad, mut worst) = (0u64, 0.0f64);
    for e in &events {
        let want = oracle.delta(e.relation.index(), &e.values, u64::MAX)?;
        oracle.insert(e.relation.index(), &e.values);
        let mut got = Vec::new();
        engine.feed_with(e, |index, batch| {
            let (reals, dummies) = sweep(index, batch, nattrs);
            if batch.size > 0 {
                worst = worst.max(dummies as f64 / batch.size as f64);
            }
            got.extend(reals);
        })?;
        got.sort();
        bad += u64::from(got != want);
    }
    Ok((bad == 0 && worst <= bound, format!("{bad} mismatching events, worst dummy share {worst:.4} (bound {bound:.4})")))
}

fn count_bound(seed: u64) -> anyhow::Result<(bool, String)> {
    let q = Arc::new(queries::load("line3")?);
    let (mut upper, mut lower, mut entries) = (0, 0, 0);
    for i in 0..100 {
        let events = random_instance(&q, 30, 6, &mut rng(derive_seed(seed, i)));
        let mut engine = Engine::new(q.clone(), EngineOptions::new(2, i));
        let mut oracle = Oracle::for_query(&q);
        for e in &events {
            engine.feed(e)?;
            oracle.insert(e.relation.index(), &e.values);
        }
        let (u, l, n) = count_bound_violations(&engine, &oracle)?;
        upper += u;
        lower += l;
        entries += n;
    }
    Ok((upper == 0 && lower == 0, format!("{entries} entries, {upper} above bound, {lower} below truth")))
}

fn ghd_state(q: &JoinQuery) -> resjoin::ghd::GhdState {
    let QueryShape::Cyclic(plan) = q.shape.clone() else {
        panic!("{} has no decomposition", q.name)
    };
    resjoin::ghd::GhdState::new(plan, q.relations.len())
}

fn triangle_delta(_: u64) -> anyhow::Result<(bool, String)> {
    let q = queries::load("triangle")?;
    let mut s = ghd_state(&q);
    let mut out = Vec::new();
    // G2(x2,x3) and G3(x3,x1) first, then G1(x1,x2).
    s.ingest(1, &iv(&[2, 3]), &mut out);
    s.ingest(2, &iv(&[3, 1]), &mut out);
    let early = out.len();
    s.ingest(0, &iv(&[1, 2]), &mut out);
    let node = &s.plan().nodes[0];
    let mut tuple = vec![Value::Int(0); 3];
    if let Some((_, v)) = out.first() {
        for (a, &x) in node.attrs.iter().zip(v) {
            tuple[a.index()] = x;
        }
    }
    let ok = early == 0 && out.len() == 1 && tuple == iv(&[1, 2, 3]);
    Ok((ok, format!("{} node tuples, (x1,x2,x3) = {tuple:?}", out.len())))
}

fn dumbbell_disjoint(seed: u64) -> anyhow::Result<(bool, String)> {
    let q = queries::load("dumbbell")?;
    let edges = erdos_renyi(25, 200, &mut rng(seed));
    let events = graph_stream(&q, &edges, &mut rng(derive_seed(seed, 1)))?;
    let mut s = ghd_state(&q);
    let nodes = s.plan().nodes.clone();
    let mut oracles: Vec<Oracle> = nodes
        .iter()
        .map(|n| Oracle::new(n.attrs.len(), n.parts.iter().map(|p| p.node_pos.clone()).collect()))
        .collect();
    let mut seen: Vec<FxHashSet<Vec<Value>>> = vec![FxHashSet::default(); nodes.len()];
    let (mut repeats, mut simulated) = (0u64, 0u64);
    let mut out = Vec::new();
    for e in &events {
        let r = e.relation.index();
        for (u, n) in nodes.iter().enumerate() {
            for (pi, p) in n.parts.iter().enumerate() {
                if p.relation == r {
                    let proj: Vec<Value> = p.cols.iter().map(|&c| e.values[c]).collect();
                    oracles[u].insert(pi, &proj);
                }
            }
        }
        out.clear();
        s.ingest(r, &e.values, &mut out);
        for (u, v) in out.drain(..) {
            simulated += 1;
            // Node tuples are laid out in node attribute order, oracle tuples by node position.
            if !seen[u].insert(v) {
                repeats += 1;
            }
        }
    }
    let mut mismatched = 0;
    let mut expected = 0u64;
    for (u, o) in oracles.iter().enumerate() {
        let truth: FxHashSet<Vec<Value>> = o.join(u64::MAX)?.into_iter().collect();
        expected += truth.len() as u64;
        if truth != seen[u] {
            mismatched += 1;
        }
    }
    let ok = repeats == 0 && mismatched == 0 && simulated == expected && s.simulated() == simulated;
    Ok((ok, format!("{simulated} simulated insertions, oracle {expected}, {repeats} repeats, {mismatched} nodes differ")))
}

fn uniform_check(q: Arc<JoinQuery>, events: &[resjoin::StreamEvent], cfg: &UniformityConfig) -> anyhow::Result<(bool, String)> {
    let r = validate_uniformity(q, events, cfg)?;
    let ps: Vec<String> = r
        .checkpoints
        .iter()
        .map(|c| format!("|Q|={} p={:.4}", c.results, c.test.p_value))
        .collect();
    Ok((r.passes(0.001), ps.join(", ")))
}

fn engine_line3_uniform(seed: u64) -> anyhow::Result<(bool, String)> {
    let q = Arc::new(queries::load("line3")?);
    let events = crate::criteria::small_graph_instance(&q, 8, 16, seed, 0.25, 2, 6, 2000);
    let cfg = UniformityConfig::new(5, 200_000, seed, checkpoints_at(events.len(), &[0.25, 0.5, 1.0]));
    uniform_check(q, &events, &cfg)
}

fn er_roundtrip(seed: u64) -> anyhow::Result<(bool, String)> {
    let q = queries::load("line3")?;
    let edges = erdos_renyi(50, 300, &mut rng(seed));
    let events = graph_stream(&q, &edges, &mut rng(derive_seed(seed, 1)))?;
    let interner = Interner::new();
    let mut buf = Vec::new();
    write_stream(&mut buf, &events, &q, &interner)?;
    let mut back_interner = Interner::new();
    let back = parse_stream(buf.as_slice(), &q, &mut back_interner)?;
    Ok((back == events, format!("{} events", events.len())))
}

fn oracle_consistency(seed: u64) -> anyhow::Result<(bool, String)> {
    let q = queries::load("line3")?;
    let edges = erdos_renyi(15, 60, &mut rng(seed));
    let events = graph_stream(&q, &edges, &mut rng(derive_seed(seed, 1)))?;
    let mut oracle = Oracle::for_query(&q);
    let mut deltas = 0u64;
    for e in &events {
        deltas += oracle.delta(e.relation.index(), &e.values, u64::MAX)?.len() as u64;
        oracle.insert(e.relation.index(), &e.values);
    }
    let total = oracle.count(u64::MAX)?;
    let dp = oracle.tree_count();
    Ok((total == deltas && dp == Some(total as u128), format!("|Q| {total}, summed deltas {deltas}, tree count {dp:?}")))
}

fn tiny_line3(seed: u64) -> (Arc<JoinQuery>, Vec<resjoin::StreamEvent>) {
    let q = Arc::new(queries::load("line3").unwrap());
    let events = crate::criteria::small_graph_instance(&q, 6, 10, seed, 0.5, 1, 6, 60);
    (q, events)
}

fn mutation(seed: u64) -> anyhow::Result<(bool, String)> {
    let (q, events) = tiny_line3(seed);
    let mut cfg = UniformityConfig::new(2, 20_000, seed, vec![events.len()]);
    cfg.mutation = Some(Mutation::FreezeWeight);
    let r = validate_uniformity(q, &events, &cfg)?;
    let p = r.checkpoints[0].test.p_value;
    Ok((p < 1e-6, format!("p {p:.3e}")))
}

fn tiny_uniform(seed: u64) -> anyhow::Result<(bool, String)> {
    let (q, events) = tiny_line3(seed);
    let cfg = UniformityConfig::new(2, 20_000, seed, vec![events.len()]);
    uniform_check(q, &events, &cfg)
}

fn k_covers_all(seed: u64) -> anyhow::Result<(bool, String)> {
    let (q, events) = tiny_line3(seed);
    let n = oracle_results(&q, &events, &[events.len()], u64::MAX)?[0].len();
    let cfg = UniformityConfig::new(n + 3, 100, seed, vec![events.len()]);
    let r = validate_uniformity(q, &events, &cfg)?;
    let c = &r.checkpoints[0];
    Ok((c.counts.iter().all(|&x| x == 100) && r.passes(0.001), format!("|Q| {n}, 100 trials")))
}

fn visit_ratio(seed: u64) -> anyhow::Result<(bool, String)> {
    let (q, events) = line3_stream(1 << 16, seed)?;
    let mut cfg = BenchConfig::new(1000, seed, events.len());
    cfg.oracle = false;
    cfg.methods = vec![Method::Engine, Method::Materialized];
    cfg.budget = u64::MAX;
    let r = bench(q, &events, &cfg)?;
    let e = r.final_row(Method::Engine).unwrap().visited;
    let b = r.final_row(Method::Materialized).unwrap();
    let ratio = e as f64 / b.visited as f64;
    Ok((
        ratio <= 0.05 && !b.timed_out,
        format!("engine {e}, materialized {} (|Q| {:?}), ratio {ratio:.5}", b.visited, b.join_size),
    ))
}

fn update_time(seed: u64) -> anyhow::Result<(bool, String)> {
    let q = Arc::new(queries::load("line4")?);
    let edges = erdos_renyi(2000, 15_000, &mut rng(seed));
    let events = graph_stream(&q, &edges, &mut rng(derive_seed(seed, 1)))?;
    let mut cfg = BenchConfig::new(1000, seed, events.len());
    cfg.oracle = false;
    cfg.methods = vec![Method::Engine];
    let r = bench(q, &events, &cfg)?;
    let t = r.engine_event_times.expect("non-empty stream");
    Ok((
        t.within_100x_median >= 0.99,
        format!(
            "{} events, median {:.2}us, p99 {:.2}us, within 100x median {:.4}",
            events.len(),
            t.median.as_secs_f64() * 1e6,
            t.p99.as_secs_f64() * 1e6,
            t.within_100x_median
        ),
    ))
}

fn density_gain(seed: u64) -> anyhow::Result<(bool, String)> {
    let rows = rswp::run(&RswpConfig::new(100_000, 1000, vec![0.0, 1.0], 3, seed));
    let ratio = rows[1].mean_visited / rows[0].mean_visited;
    Ok((ratio <= 0.1, format!("visited {:.0} vs {:.0}, ratio {ratio:.4}", rows[1].mean_visited, rows[0].mean_visited)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let names: FxHashSet<&str> = CHECKS.iter().map(|c| c.name).collect();
        assert_eq!(names.len(), CHECKS.len());
        assert!(find("index.bucket-size").is_some());
    }

    #[test]
    fn quick_checks_pass() {
        for name in ["reservoir.density-rdrd", "index.reserve-trace", "index.bucket-size", "ghd.triangle-delta", "harness.er-roundtrip", "harness.oracle-consistency"] {
            let (ok, msg) = (find(name).unwrap().run)(1).unwrap();
            assert!(ok, "{name}: {msg}");
        }
    }
}
