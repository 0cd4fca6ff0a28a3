//! End-to-end acceptance checks. Each returns a verdict plus the numbers it
//! was based on.

use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rustc_hash::FxHashSet;

use resjoin::index::{wcnt, DeltaBatch, JoinIndex};
use resjoin::reservoir::{derive_seed, DensityProfile, Reservoir, SliceStream};
use resjoin::storage::RowId;
use resjoin::{Engine, EngineOptions, JoinQuery, StreamEvent, Value};

use crate::gen::{chung_lu, erdos_renyi, graph_stream, instance_stream, qz_spec, rng, InstanceSpec};
use crate::oracle::Oracle;
use crate::queries;
use crate::rswp::{self, RswpConfig};
use crate::stats::{inclusion_test, mean_se, same_distribution};
use crate::validate::{checkpoints_at, default_threads, oracle_results, validate_uniformity, UniformityConfig};

#[derive(Clone, Debug)]
pub struct Outcome {
    pub pass: bool,
    pub summary: String,
    pub details: Vec<String>,
}

impl Outcome {
    fn new(pass: bool, summary: impl Into<String>, details: Vec<String>) -> Self {
        Self {
            pass,
            summary: summary.into(),
            details,
        }
    }
}

/// Values over the query attributes of a result given as index row ids.
pub fn row_values(index: &JoinIndex, rows: &[RowId], nattrs: usize) -> Vec<Value> {
    let mut out = vec![Value::Int(0); nattrs];
    for (e, schema) in index.schema().relations.iter().enumerate() {
        let row = index.relation(e).row(rows[e]);
        for (c, a) in schema.attrs.iter().enumerate() {
            out[a.index()] = row[c];
        }
    }
    out
}

/// Every real result of a batch, by positional retrieval over `0..size`.
pub fn sweep(index: &JoinIndex, batch: &DeltaBatch, nattrs: usize) -> (Vec<Vec<Value>>, u128) {
    let mut out = vec![0 as RowId; index.relations().len()];
    let mut reals = Vec::new();
    let mut dummies = 0u128;
    for z in 0..batch.size {
        if index.retrieve(batch, z, &mut out).expect("position within batch") {
            reals.push(row_values(index, &out, nattrs));
        } else {
            dummies += 1;
        }
    }
    (reals, dummies)
}

/// A graph stream over `nodes` and `edges`, redrawn with derived seeds until
/// the join has at least `min_first` results at the first checkpoint and
/// between `min_last` and `max_results` at the end.
pub fn small_graph_instance(
    query: &JoinQuery,
    nodes: u64,
    edges: usize,
    seed: u64,
    first_fraction: f64,
    min_first: usize,
    min_last: usize,
    max_results: usize,
) -> Vec<StreamEvent> {
    for attempt in 0..10_000 {
        let s = derive_seed(seed, attempt);
        let e = erdos_renyi(nodes, edges, &mut rng(s));
        let events = graph_stream(query, &e, &mut rng(derive_seed(s, 1))).unwrap();
        let cps = checkpoints_at(events.len(), &[first_fraction, 1.0]);
        let sizes = oracle_results(query, &events, &cps, u64::MAX).unwrap();
        let last = sizes[1].len();
        if sizes[0].len() >= min_first && last >= min_last && last <= max_results && last > sizes[0].len() {
            return events;
        }
    }
    panic!("no suitable instance for {}", query.name)
}

/// Graph sizes for the small uniformity instances.
fn uniformity_shape(name: &str) -> (u64, usize) {
    match name {
        "two_table" => (8, 20),
        "line3" => (8, 16),
        "star3" => (6, 10),
        "line4" => (8, 16),
        "triangle" => (6, 26),
        "dumbbell" => (5, 18),
        _ => (8, 12),
    }
}

pub const UNIFORMITY_QUERIES: [&str; 6] = ["two_table", "line3", "star3", "line4", "triangle", "dumbbell"];

/// Per-result inclusion frequencies at 25%, 50% and 100% of the stream.
pub fn c1_uniformity(trials: u64, seed: u64) -> anyhow::Result<Outcome> {
    let mut pass = true;
    let mut details = Vec::new();
    let mut worst_p = 1.0f64;
    for (qi, name) in UNIFORMITY_QUERIES.iter().enumerate() {
        let q = Arc::new(queries::load(name)?);
        let (nodes, edges) = uniformity_shape(name);
        let events = small_graph_instance(&q, nodes, edges, derive_seed(seed, qi as u64), 0.25, 2, 41, 2000);
        let cps = checkpoints_at(events.len(), &[0.25, 0.5, 1.0]);
        for k in [1usize, 5, 20] {
            let mut cfg = UniformityConfig::new(k, trials, derive_seed(seed, 100 + qi as u64 * 10 + k as u64), cps.clone());
            cfg.threads = default_threads();
            let r = validate_uniformity(q.clone(), &events, &cfg)?;
            for c in &r.checkpoints {
                let ok = c.passes(0.001);
                pass &= ok;
                if c.test.df > 0 {
                    worst_p = worst_p.min(c.test.p_value);
                }
                details.push(format!(
                    "{name} k={k} events={} |Q|={} chi2={:.2} df={} p={:.4} max|z|={:.2} beyond3σ={} (p={:.3}) foreign={} repeated={} {}",
                    c.events,
                    c.results,
                    c.test.chi2,
                    c.test.df,
                    c.test.p_value,
                    c.test.max_abs_z,
                    c.test.beyond_3sigma,
                    c.test.beyond_3sigma_p,
                    c.foreign,
                    c.repeated,
                    if ok { "ok" } else { "FAIL" }
                ));
            }
        }
    }
    Ok(Outcome::new(
        pass,
        format!("6 queries x k in {{1,5,20}} x 3 checkpoints, {trials} trials each, smallest chi-square p = {worst_p:.4}"),
        details,
    ))
}

/// Streams for the delta and density checks.
pub fn small_streams(name: &str, count: u64, seed: u64) -> anyhow::Result<(Arc<JoinQuery>, Vec<Vec<StreamEvent>>)> {
    let q = Arc::new(queries::load(name)?);
    let streams = (0..count)
        .map(|i| {
            let s = derive_seed(seed, i);
            if q.fusion.is_identity() && q.base.iter().all(|r| r.arity() == 2) {
                let e = erdos_renyi(7, 14, &mut rng(s));
                graph_stream(&q, &e, &mut rng(derive_seed(s, 1))).unwrap()
            } else {
                let spec = InstanceSpec::uniform(&q, 6, 3);
                instance_stream(&q, &spec, &mut rng(s))
            }
        })
        .collect();
    Ok((q, streams))
}

pub const DELTA_QUERIES: [&str; 8] = ["two_table", "line3", "star3", "line4", "triangle", "dumbbell", "qy", "qz"];

/// Full positional sweeps of every batch against the oracle delta.
pub fn c2_delta_equivalence(streams_per_query: u64, seed: u64) -> anyhow::Result<Outcome> {
    let mut pass = true;
    let mut details = Vec::new();
    let mut events_checked = 0u64;
    for (qi, name) in DELTA_QUERIES.iter().enumerate() {
        let (q, streams) = small_streams(name, streams_per_query, derive_seed(seed, qi as u64))?;
        let nattrs = q.attributes.len();
        let (mut mismatches, mut repeats, mut results) = (0u64, 0u64, 0u64);
        for events in &streams {
            let mut engine = Engine::new(q.clone(), EngineOptions::new(3, 1));
            let mut oracle = Oracle::for_query(&q);
            let mut all: FxHashSet<Vec<Value>> = FxHashSet::default();
            for e in events {
                let want = oracle.delta(e.relation.index(), &e.values, u64::MAX)?;
                oracle.insert(e.relation.index(), &e.values);
                let mut got = Vec::new();
                engine.feed_with(e, |index, batch| got.extend(sweep(index, batch, nattrs).0))?;
                got.sort();
                if got != want {
                    mismatches += 1;
                }
                for r in got {
                    if !all.insert(r) {
                        repeats += 1;
                    }
                }
                results += want.len() as u64;
                events_checked += 1;
            }
        }
        let ok = mismatches == 0 && repeats == 0;
        pass &= ok;
        details.push(format!(
            "{name}: {} streams, {results} delta results, {mismatches} mismatching events, {repeats} repeats {}",
            streams.len(),
            if ok { "ok" } else { "FAIL" }
        ));
    }
    Ok(Outcome::new(
        pass,
        format!("{events_checked} events over {} query shapes", DELTA_QUERIES.len()),
        details,
    ))
}

pub const DENSITY_QUERIES: [&str; 7] = ["two_table", "line3", "star3", "line4", "dumbbell", "qy", "qz"];

/// Metadata sizes against explicit recursion, and real density per batch.
pub fn c3_size_and_density(streams_per_query: u64, seed: u64) -> anyhow::Result<Outcome> {
    let mut pass = true;
    let mut details = Vec::new();
    for (qi, name) in DENSITY_QUERIES.iter().enumerate() {
        let (q, streams) = small_streams(name, streams_per_query, derive_seed(seed, 50 + qi as u64))?;
        let tree_size = q.index.relations.len() as i32;
        let bound = 0.5f64.powi(2 * tree_size - 1);
        let (mut batches, mut size_errors, mut density_errors) = (0u64, 0u64, 0u64);
        let mut min_density = 1.0f64;
        for events in &streams {
            let mut opts = EngineOptions::new(3, 1);
            opts.grouping = Some(false);
            let mut engine = Engine::new(q.clone(), opts);
            for e in events {
                engine.feed_with(e, |index, batch| {
                    let m = index.materialize(batch);
                    if m.len() as u128 != batch.size {
                        size_errors += 1;
                    }
                    if batch.size > 0 {
                        batches += 1;
                        let reals = m.iter().filter(|x| x.is_some()).count();
                        let d = reals as f64 / batch.size as f64;
                        min_density = min_density.min(d);
                        if d < bound {
                            density_errors += 1;
                        }
                    }
                })?;
            }
        }
        let ok = size_errors == 0 && density_errors == 0;
        pass &= ok;
        details.push(format!(
            "{name}: {batches} non-empty batches, size mismatches {size_errors}, min density {min_density:.4} vs bound {bound:.6}, below bound {density_errors} {}",
            if ok { "ok" } else { "FAIL" }
        ));
    }
    Ok(Outcome::new(pass, "metadata size = materialized size; density above (1/2)^(2|T|-1)", details))
}

/// Relations of the subtree under `e`.
fn subtree(children: &[Vec<usize>], e: usize) -> Vec<usize> {
    let mut out = vec![e];
    let mut i = 0;
    while i < out.len() {
        out.extend(children[out[i]].iter().copied());
        i += 1;
    }
    out
}

/// Counts `(upper, lower)` bound violations of every key entry of every
/// rooted tree against the oracle subtree count.
pub fn count_bound_violations(engine: &Engine, oracle: &Oracle) -> anyhow::Result<(u64, u64, u64)> {
    let q = engine.query();
    let index = engine.index();
    let (mut upper, mut lower, mut entries) = (0u64, 0u64, 0u64);
    for (root, rooted) in q.index.rooted.iter().enumerate() {
        for e in 0..q.index.relations.len() {
            if e == root {
                continue;
            }
            let rels = subtree(&rooted.children, e);
            let size = rooted.subtree_size[e] as u32;
            for (key, cnt) in index.keys(root, e) {
                let fixed: Vec<(usize, Value)> = rooted.key[e].iter().map(|a| a.index()).zip(key.iter().copied()).collect();
                let truth = oracle.partial_count(&rels, &fixed, u64::MAX)? as u128;
                entries += 1;
                if wcnt(cnt) > (1u128 << size) * truth {
                    upper += 1;
                }
                if cnt < truth {
                    lower += 1;
                }
            }
        }
    }
    Ok((upper, lower, entries))
}

/// `wcnt ≤ 2^{|T_e|} · |subtree join ⋉ key|` at 25/50/100% of random streams.
pub fn c4_lemma(instances: u64, seed: u64) -> anyhow::Result<Outcome> {
    let mut pass = true;
    let mut details = Vec::new();
    for (qi, name) in ["line3", "line4"].iter().enumerate() {
        let q = Arc::new(queries::load(name)?);
        let (mut upper, mut lower, mut entries) = (0u64, 0u64, 0u64);
        for i in 0..instances {
            let s = derive_seed(seed, qi as u64 * 1_000_000 + i);
            let e = erdos_renyi(10, 25, &mut rng(s));
            let events = graph_stream(&q, &e, &mut rng(derive_seed(s, 1)))?;
            let cps = checkpoints_at(events.len(), &[0.25, 0.5, 1.0]);
            let mut engine = Engine::new(q.clone(), EngineOptions::new(2, 1));
            let mut oracle = Oracle::for_query(&q);
            for (j, ev) in events.iter().enumerate() {
                engine.feed(ev)?;
                oracle.insert(ev.relation.index(), &ev.values);
                if cps.contains(&(j + 1)) {
                    let (u, l, n) = count_bound_violations(&engine, &oracle)?;
                    upper += u;
                    lower += l;
                    entries += n;
                }
            }
        }
        let ok = upper == 0 && lower == 0;
        pass &= ok;
        details.push(format!(
            "{name}: {instances} instances, {entries} key entries checked, {upper} above 2^|T_e| x truth, {lower} below truth {}",
            if ok { "ok" } else { "FAIL" }
        ));
    }
    Ok(Outcome::new(pass, "zero violations of the subtree count bound", details))
}

/// Measured skip-phase stops against `Σ_{i=p}^{N} k/(r_i+1)`.
pub fn c5_stop_law(n: usize, k: usize, trials: u64, seed: u64) -> anyhow::Result<Outcome> {
    let layouts: [(&str, Box<dyn Fn(usize) -> bool>); 3] = [
        ("dense", Box::new(|_| true)),
        ("alternating", Box::new(|i| i % 2 == 0)),
        ("sparse", Box::new(|i| i % 100 == 0)),
    ];
    let mut pass = true;
    let mut details = Vec::new();
    for (li, (name, f)) in layouts.iter().enumerate() {
        let marks: Vec<bool> = (0..n).map(f).collect();
        let profile = DensityProfile::from_marks(marks.iter().copied());
        let forecast = profile.expected_stops(k as u64);
        let threads = default_threads().min(trials as usize).max(1);
        let per = trials.div_ceil(threads as u64);
        let results: Vec<(Vec<f64>, u64)> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads as u64)
                .map(|t| {
                    let marks = &marks;
                    s.spawn(move || {
                        let mut stops = Vec::new();
                        let mut bad_next = 0u64;
                        for trial in (t * per).min(trials)..((t + 1) * per).min(trials) {
                            let mut res: Reservoir<bool> =
                                Reservoir::new(k, derive_seed(derive_seed(seed, li as u64), trial));
                            for chunk in marks.chunks(1000) {
                                res.batch_update(&mut SliceStream::new(chunk), |&x| x);
                            }
                            let st = res.stats();
                            stops.push(st.skip_stops as f64);
                            if st.next_calls != forecast.next_count {
                                bad_next += 1;
                            }
                        }
                        (stops, bad_next)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let stops: Vec<f64> = results.iter().flat_map(|(s, _)| s.iter().copied()).collect();
        let bad_next: u64 = results.iter().map(|(_, b)| b).sum();
        let (mean, se) = mean_se(&stops);
        let rel = (mean - forecast.expected_skip_stops).abs() / forecast.expected_skip_stops.max(1e-12);
        let ok = rel <= 0.05 && bad_next == 0;
        pass &= ok;
        details.push(format!(
            "{name}: density {:.3}, fill length {}, mean stops {mean:.2} ± {se:.2}, forecast {:.2}, rel err {:.4} {}",
            profile.density(),
            forecast.next_count,
            forecast.expected_skip_stops,
            rel,
            if ok { "ok" } else { "FAIL" }
        ));
    }
    Ok(Outcome::new(pass, format!("N={n}, k={k}, {trials} trials, within 5%"), details))
}

/// An Erdős–Rényi line-3 stream of about `n` events.
pub fn line3_stream(n: usize, seed: u64) -> anyhow::Result<(Arc<JoinQuery>, Vec<StreamEvent>)> {
    let q = Arc::new(queries::load("line3")?);
    let m = (n / 3).max(1);
    let nodes = ((m / 8).max(10)) as u64;
    let e = erdos_renyi(nodes, m, &mut rng(seed));
    let events = graph_stream(&q, &e, &mut rng(derive_seed(seed, 1)))?;
    Ok((q, events))
}

/// Propagation loops against `4·N·log2 N`, with the per-event maximum.
pub fn c6_amortized(seed: u64) -> anyhow::Result<Outcome> {
    let mut pass = true;
    let mut details = Vec::new();
    for (i, n) in [1_000usize, 10_000, 100_000].into_iter().enumerate() {
        let (q, events) = line3_stream(n, derive_seed(seed, i as u64))?;
        let mut engine = Engine::new(q, EngineOptions::new(100, seed));
        for e in &events {
            engine.feed(e)?;
        }
        let m = engine.metrics();
        let n = events.len() as f64;
        let bound = 4.0 * n * n.log2();
        let loops = m.index.propagation_loops;
        let ok = (loops as f64) <= bound;
        pass &= ok;
        details.push(format!(
            "N={}: loops {loops}, bound {bound:.0}, ratio {:.4}, per-event max {} at event {}, mean {:.3} {}",
            events.len(),
            loops as f64 / bound,
            m.max_event_propagation,
            m.max_event_propagation_at,
            loops as f64 / n,
            if ok { "ok" } else { "FAIL" }
        ));
    }
    Ok(Outcome::new(pass, "propagation loops within 4 N log2 N", details))
}

/// Wall clock and join size on prefixes of one power-law line-3 stream.
pub fn c7_scaling(seed: u64, repeats: usize) -> anyhow::Result<Outcome> {
    let q = Arc::new(queries::load("line3")?);
    let max = 1usize << 18;
    let edges = chung_lu(1 << 14, max / 3 + 1, 2.5, &mut rng(seed));
    let events = graph_stream(&q, &edges, &mut rng(derive_seed(seed, 1)))?;
    let sizes: Vec<usize> = (14..=18).map(|p| (1usize << p).min(events.len())).collect();
    let mut times = Vec::new();
    let mut joins = Vec::new();
    for &n in &sizes {
        let mut best = Duration::MAX;
        for r in 0..repeats.max(1) {
            let mut engine = Engine::new(q.clone(), EngineOptions::new(1000, derive_seed(seed, r as u64)));
            let t0 = Instant::now();
            for e in &events[..n] {
                engine.feed(e)?;
            }
            best = best.min(t0.elapsed());
        }
        let mut oracle = Oracle::for_query(&q);
        for e in &events[..n] {
            oracle.insert(e.relation.index(), &e.values);
        }
        times.push(best);
        joins.push(oracle.tree_count().expect("acyclic"));
    }
    let mut pass = true;
    let mut details = Vec::new();
    for i in 0..sizes.len() {
        let line = format!("N={}: {:.1} ms, |Q|={}", sizes[i], times[i].as_secs_f64() * 1e3, joins[i]);
        if i == 0 {
            details.push(line);
            continue;
        }
        let raw = times[i].as_secs_f64() / times[i - 1].as_secs_f64();
        let per_input = raw * sizes[i - 1] as f64 / sizes[i] as f64;
        let growth = joins[i] as f64 / joins[i - 1] as f64;
        let ok = per_input <= 1.35 && growth >= 2.5;
        pass &= ok;
        details.push(format!(
            "{line}, time x{raw:.3} (per input x{per_input:.3}), join x{growth:.2} {}",
            if ok { "ok" } else { "FAIL" }
        ));
    }
    Ok(Outcome::new(
        pass,
        "per-input time growth <= 1.35 per doubling while the join grows >= 2.5x",
        details,
    ))
}

/// Propagation loops with and without grouping on the retail-shaped query,
/// and the sample distributions of both on a small instance.
pub fn c8_grouping(sales: usize, trials: u64, seed: u64) -> anyhow::Result<Outcome> {
    let q = Arc::new(queries::load("qz")?);
    let events = instance_stream(&q, &qz_spec(&q, sales), &mut rng(seed));
    let loops = |grouping: bool| -> anyhow::Result<(u64, u128)> {
        let mut opts = EngineOptions::new(1000, seed);
        opts.grouping = Some(grouping);
        let mut engine = Engine::new(q.clone(), opts);
        for e in &events {
            engine.feed(e)?;
        }
        let m = engine.metrics();
        Ok((m.index.propagation_loops, m.join_total))
    };
    let (grouped, padded_g) = loops(true)?;
    let (plain, padded_p) = loops(false)?;
    let ratio = plain as f64 / grouped.max(1) as f64;
    let mut details = vec![format!(
        "{} events: propagation loops ungrouped {plain}, grouped {grouped}, ratio {ratio:.2}; padded totals {padded_p} / {padded_g}",
        events.len()
    )];

    let spec = InstanceSpec::uniform(&q, 3, 1 << 30)
        .rows(&q, "store_sales", 12)
        .rows(&q, "d1", 2)
        .rows(&q, "d2", 2)
        .domain(&q, "band", 2)
        .domain(&q, "category", 2);
    let mut small = Vec::new();
    for attempt in 0..1000 {
        let ev = instance_stream(&q, &spec, &mut rng(derive_seed(seed, 7 + attempt)));
        let n = oracle_results(&q, &ev, &[ev.len()], u64::MAX)?[0].len();
        if (10..=200).contains(&n) {
            small = ev;
            break;
        }
    }
    anyhow::ensure!(!small.is_empty(), "no small instance found");
    let cps = vec![small.len()];
    let k = 5;
    let mut reports = Vec::new();
    for (i, grouping) in [true, false].into_iter().enumerate() {
        let mut cfg = UniformityConfig::new(k, trials, derive_seed(seed, 40 + i as u64), cps.clone());
        cfg.grouping = Some(grouping);
        reports.push(validate_uniformity(q.clone(), &small, &cfg)?);
    }
    let (a, b) = (&reports[0].checkpoints[0], &reports[1].checkpoints[0]);
    let (chi2, p_same) = same_distribution(&a.counts, trials, &b.counts, trials, k);
    let dist_ok = a.passes(0.001) && b.passes(0.001) && p_same > 0.001;
    details.push(format!(
        "small instance |Q|={}: grouped p={:.4}, ungrouped p={:.4}, difference chi2={chi2:.2} p={p_same:.4}",
        a.results, a.test.p_value, b.test.p_value
    ));
    Ok(Outcome::new(
        ratio >= 5.0 && dist_ok,
        format!("loop reduction x{ratio:.1} (need >= 5), distributions agree: {dist_ok}"),
        details,
    ))
}

/// Items visited across densities 0, 0.1, ..., 1.0.
pub fn c9_rswp(n: usize, k: usize, trials: u64, seed: u64) -> anyhow::Result<Outcome> {
    let densities: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let rows = rswp::run(&RswpConfig::new(n, k, densities, trials, seed));
    let first = &rows[0];
    let last = rows.last().unwrap();
    let ratio = last.mean_visited / first.mean_visited;
    let mut monotone = true;
    let mut details = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let mut note = "";
        if i > 0 {
            let prev = &rows[i - 1];
            let noise = 3.0 * (prev.se_visited.powi(2) + r.se_visited.powi(2)).sqrt();
            if r.mean_visited > prev.mean_visited + noise {
                monotone = false;
                note = " RISES";
            }
        }
        details.push(format!(
            "density {:.1}: visited {:.1} ± {:.1} (forecast {:.1}){note}",
            r.density, r.mean_visited, r.se_visited, r.forecast_visited
        ));
    }
    Ok(Outcome::new(
        ratio <= 0.1 && monotone,
        format!("visited at 1.0 / at 0 = {ratio:.4} (need <= 0.1), monotone: {monotone}"),
        details,
    ))
}

fn run_bin(bin: &Path, args: &[String]) -> anyhow::Result<()> {
    let out = Command::new(bin).args(args).output()?;
    anyhow::ensure!(
        out.status.success(),
        "{} {:?} failed: {}",
        bin.display(),
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

fn dir_bytes(dir: &Path, skip: &[&str]) -> anyhow::Result<Vec<(String, Vec<u8>)>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if skip.contains(&name.as_str()) {
            continue;
        }
        files.push((name, std::fs::read(entry.path())?));
    }
    files.sort();
    Ok(files)
}

/// Runs every sub-command twice with the same seed and compares outputs.
pub fn c10_determinism(bin: &Path, work: &Path) -> anyhow::Result<Outcome> {
    let stream = work.join("stream.csv");
    let s = |p: &Path| p.to_string_lossy().into_owned();
    let args = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let mut details = Vec::new();
    let mut pass = true;
    run_bin(bin, &[args(&["gen", "--query", "line3", "--graph", "er", "--nodes", "12", "--edges", "30", "--seed", "5", "--out"]), vec![s(&stream)]].concat())?;
    let commands: Vec<(&str, Vec<String>)> = vec![
        ("gen", args(&["gen", "--query", "qz", "--n", "200", "--seed", "9"])),
        ("run", [args(&["run", "--query", "line3", "--k", "7", "--seed", "3", "--checkpoint-every", "10", "--stream"]), vec![s(&stream)]].concat()),
        ("validate", [args(&["validate", "--query", "line3", "--k", "3", "--trials", "2000", "--seed", "3", "--stream"]), vec![s(&stream)]].concat()),
        ("bench", [args(&["bench", "--query", "line3", "--k", "7", "--seed", "3", "--checkpoint-every", "20", "--stream"]), vec![s(&stream)]].concat()),
        ("rswp", args(&["rswp", "--n", "20000", "--k", "100", "--trials", "3", "--seed", "3"])),
    ];
    for (name, cmd) in commands {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let dir = work.join(format!("{name}-{rep}"));
            std::fs::create_dir_all(&dir)?;
            let target = if name == "gen" { dir.join("stream.csv") } else { dir.clone() };
            run_bin(bin, &[cmd.clone(), vec!["--out".into(), s(&target)]].concat())?;
            outputs.push(dir_bytes(&dir, &["timing.csv"])?);
        }
        let same = outputs[0] == outputs[1] && !outputs[0].is_empty();
        pass &= same;
        details.push(format!(
            "{name}: {} file(s), {}",
            outputs[0].len(),
            if same { "identical" } else { "DIFFER" }
        ));
    }
    Ok(Outcome::new(pass, "byte-identical outputs for identical seeds", details))
}

/// Inclusion test over a plain reservoir stream, for the reservoir checks.
pub fn reservoir_inclusion(n: usize, k: usize, trials: u64, seed: u64, real: impl Fn(usize) -> bool) -> crate::stats::InclusionTest {
    let items: Vec<(usize, bool)> = (0..n).map(|i| (i, real(i))).collect();
    let reals: Vec<usize> = items.iter().filter(|x| x.1).map(|x| x.0).collect();
    let mut counts = vec![0u64; reals.len()];
    for t in 0..trials {
        let mut res = Reservoir::new(k, derive_seed(seed, t));
        res.feed(&mut SliceStream::new(&items), |x: &(usize, bool)| x.1);
        for &(i, _) in res.samples() {
            counts[reals.binary_search(&i).unwrap()] += 1;
        }
    }
    inclusion_test(&counts, trials, k)
}
