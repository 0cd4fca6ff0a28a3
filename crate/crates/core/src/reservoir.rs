//! Reservoir sampling over streams with a predicate, where non-matching items
//! are jumped over with geometric skips instead of being inspected.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Skip count reported when the geometric draw exceeds the integer range.
pub const MAX_SKIP: u128 = u128::MAX;

/// A stream that can jump over items.
pub trait SkippableStream {
    type Item;

    /// Discards `i` items and returns the next one, or `None` once exhausted.
    fn skip(&mut self, i: u128) -> Option<Self::Item>;

    fn next_item(&mut self) -> Option<Self::Item> {
        self.skip(0)
    }
}

/// A finite stream that knows how many items it has left.
pub trait BatchStream: SkippableStream {
    fn remain(&self) -> u128;
}

/// Source of uniforms strictly inside (0, 1).
#[derive(Clone, Debug)]
pub struct UniformSource {
    rng: ChaCha8Rng,
}

impl UniformSource {
    pub fn seeded(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// A 52-bit uniform shifted by half a step. Both the numerator and the
    /// quotient stay exact in f64, so 0 and 1 never occur.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
    }

    /// Uniform integer in `[0, n)`.
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        // Lemire's multiply-and-reject.
        let mut m = (self.rng.next_u64() as u128) * (n as u128);
        if (m as u64) < n {
            let threshold = n.wrapping_neg() % n;
            while (m as u64) < threshold {
                m = (self.rng.next_u64() as u128) * (n as u128);
            }
        }
        (m >> 64) as u64
    }
}

/// Seed of the `i`-th independent trial under `master` (SplitMix64 finalizer).
pub fn derive_seed(master: u64, i: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `⌊ln u / ln(1−w)⌋`: the number of failures before the first success of
/// probability `w`. Saturates at [`MAX_SKIP`].
pub fn geo_skip(w: f64, u: f64) -> u128 {
    if w >= 1.0 {
        return 0;
    }
    if w <= 0.0 {
        return MAX_SKIP;
    }
    let q = (u.ln() / (-w).ln_1p()).floor();
    if q >= MAX_SKIP as f64 {
        MAX_SKIP
    } else {
        q as u128
    }
}

pub fn geo_sample(w: f64, src: &mut UniformSource) -> u128 {
    geo_skip(w, src.uniform())
}

/// Operation counts of a reservoir.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReservoirStats {
    /// Items pulled one by one while filling.
    pub next_calls: u64,
    /// Items landed on by a skip.
    pub skip_stops: u64,
    /// Skip landings that passed the predicate and replaced a sample.
    pub replacements: u64,
    pub remain_calls: u64,
    pub batches: u64,
}

impl ReservoirStats {
    pub fn visited(&self) -> u64 {
        self.next_calls + self.skip_stops
    }
}

/// Deliberate defects used to check that the statistical harness catches bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mutation {
    /// Never shrink `w` after a replacement.
    FreezeWeight,
}

/// `k` samples without replacement plus the skip state `(w, q)`.
#[derive(Clone, Debug)]
pub struct Reservoir<T> {
    capacity: usize,
    samples: Vec<T>,
    /// `INFINITY` until the skip machinery starts.
    w: f64,
    /// Skip carried into the next batch.
    carry: u128,
    src: UniformSource,
    stats: ReservoirStats,
    mutation: Option<Mutation>,
}

impl<T> Reservoir<T> {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0, "reservoir capacity must be positive");
        Self {
            capacity,
            samples: Vec::with_capacity(capacity.min(1 << 20)),
            w: f64::INFINITY,
            carry: 0,
            src: UniformSource::seeded(seed),
            stats: ReservoirStats::default(),
            mutation: None,
        }
    }

    pub fn with_mutation(mut self, mutation: Mutation) -> Self {
        self.mutation = Some(mutation);
        self
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn is_full(&self) -> bool {
        self.samples.len() == self.capacity
    }

    /// `None` while uninitialized.
    pub fn weight(&self) -> Option<f64> {
        self.w.is_finite().then_some(self.w)
    }

    pub fn pending_skip(&self) -> u128 {
        self.carry
    }

    pub fn stats(&self) -> ReservoirStats {
        self.stats
    }

    #[inline]
    fn shrink_factor(&mut self) -> f64 {
        self.src.uniform().powf(1.0 / self.capacity as f64)
    }

    fn start_skipping(&mut self) -> u128 {
        self.w = self.shrink_factor();
        geo_sample(self.w, &mut self.src)
    }

    fn accept(&mut self, item: T) {
        let slot = self.src.below(self.capacity as u64) as usize;
        self.samples[slot] = item;
        self.stats.replacements += 1;
        if self.mutation != Some(Mutation::FreezeWeight) {
            self.w *= self.shrink_factor();
        }
    }

    /// Consumes a whole stream.
    pub fn feed<S, F>(&mut self, stream: &mut S, mut theta: F)
    where
        S: SkippableStream<Item = T>,
        F: FnMut(&T) -> bool,
    {
        while self.samples.len() < self.capacity {
            let Some(x) = stream.next_item() else {
                return;
            };
            self.stats.next_calls += 1;
            if theta(&x) {
                self.samples.push(x);
            }
        }
        let mut q = if self.w.is_finite() {
            geo_sample(self.w, &mut self.src)
        } else {
            self.start_skipping()
        };
        while let Some(x) = stream.skip(q) {
            self.stats.skip_stops += 1;
            if theta(&x) {
                self.accept(x);
            }
            q = geo_sample(self.w, &mut self.src);
        }
        self.carry = 0;
    }

    /// Consumes one batch of a longer logical stream, carrying the pending
    /// skip across batch boundaries.
    pub fn batch_update<B, F>(&mut self, batch: &mut B, mut theta: F)
    where
        B: BatchStream<Item = T>,
        F: FnMut(&T) -> bool,
    {
        self.stats.batches += 1;
        while self.samples.len() < self.capacity && self.remain(batch) > 0 {
            let x = batch.next_item().expect("remain() > 0");
            self.stats.next_calls += 1;
            if theta(&x) {
                self.samples.push(x);
            }
        }
        if self.samples.len() < self.capacity {
            return;
        }
        let mut q = if self.w > 1.0 {
            self.start_skipping()
        } else {
            self.carry
        };
        while self.remain(batch) > q {
            let x = batch.skip(q).expect("remain() > q");
            self.stats.skip_stops += 1;
            if theta(&x) {
                self.accept(x);
            }
            q = geo_sample(self.w, &mut self.src);
        }
        self.carry = q - self.remain(batch);
    }

    #[inline]
    fn remain<B: BatchStream>(&mut self, batch: &B) -> u128 {
        self.stats.remain_calls += 1;
        batch.remain()
    }
}

/// Classic reservoir sampling over every offered item.
#[derive(Clone, Debug)]
pub struct ClassicReservoir<T> {
    capacity: usize,
    samples: Vec<T>,
    seen: u64,
    src: UniformSource,
}

impl<T> ClassicReservoir<T> {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0, "reservoir capacity must be positive");
        Self {
            capacity,
            samples: Vec::with_capacity(capacity.min(1 << 20)),
            seen: 0,
            src: UniformSource::seeded(seed),
        }
    }

    pub fn offer(&mut self, item: T) {
        self.offer_with(|| item);
    }

    /// Like [`ClassicReservoir::offer`], building the item only if kept.
    pub fn offer_with(&mut self, make: impl FnOnce() -> T) {
        self.seen += 1;
        if self.samples.len() < self.capacity {
            self.samples.push(make());
            return;
        }
        let j = self.src.below(self.seen);
        if (j as usize) < self.capacity {
            self.samples[j as usize] = make();
        }
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }
}

/// A slice viewed as a skippable batch.
#[derive(Clone, Debug)]
pub struct SliceStream<'a, T> {
    items: &'a [T],
    next: usize,
}

impl<'a, T> SliceStream<'a, T> {
    pub fn new(items: &'a [T]) -> Self {
        Self { items, next: 0 }
    }
}

impl<T: Clone> SkippableStream for SliceStream<'_, T> {
    type Item = T;

    fn skip(&mut self, i: u128) -> Option<T> {
        let pos = (self.next as u128).saturating_add(i);
        if pos >= self.items.len() as u128 {
            self.next = self.items.len();
            return None;
        }
        self.next = pos as usize + 1;
        Some(self.items[pos as usize].clone())
    }
}

impl<T: Clone> BatchStream for SliceStream<'_, T> {
    fn remain(&self) -> u128 {
        (self.items.len() - self.next) as u128
    }
}

/// Real/dummy layout of a stream: `r_i` real items among the first `i − 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DensityProfile {
    /// `r_1 ..= r_{N+1}`.
    real_before: Vec<u64>,
}

/// Work predicted for a stream and capacity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopForecast {
    pub next_count: u64,
    pub expected_skip_stops: f64,
}

impl DensityProfile {
    pub fn from_marks(marks: impl IntoIterator<Item = bool>) -> Self {
        let mut real_before = vec![0u64];
        let mut r = 0u64;
        for m in marks {
            r += m as u64;
            real_before.push(r);
        }
        Self { real_before }
    }

    pub fn len(&self) -> usize {
        self.real_before.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn real_count(&self) -> u64 {
        *self.real_before.last().unwrap()
    }

    /// `r_i`, 1-based, for `i` in `1..=N+1`.
    pub fn r(&self, i: usize) -> u64 {
        self.real_before[i - 1]
    }

    /// Smallest `i` with `r_i = k`, or `N + 1`.
    pub fn fill_index(&self, k: u64) -> usize {
        let n = self.len();
        (1..=n).find(|&i| self.r(i) == k).unwrap_or(n + 1)
    }

    /// Largest `φ` with `r_{i+1} ≥ φ·i` for every prefix length `i`.
    pub fn density(&self) -> f64 {
        (1..=self.len())
            .map(|i| self.real_before[i] as f64 / i as f64)
            .fold(1.0, f64::min)
    }

    pub fn expected_stops(&self, k: u64) -> StopForecast {
        let p = self.fill_index(k);
        let expected_skip_stops = (p..=self.len())
            .map(|i| k as f64 / (self.r(i) + 1) as f64)
            .sum();
        StopForecast {
            next_count: p as u64 - 1,
            expected_skip_stops,
        }
    }
}

pub fn concat_density(phi1: f64, phi2: f64) -> f64 {
    phi1.min(phi2)
}

pub fn product_density(phi1: f64, phi2: f64) -> f64 {
    phi1 * phi2 / 2.0
}

/// Density after appending `n` dummies to a `φ`-dense stream of `m` items.
pub fn pad_density(phi: f64, m: u64, n: u64) -> f64 {
    phi * m as f64 / (m + n) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[derive(Clone, Copy, Debug, PartialEq, Eq)]
    struct Item {
        id: u32,
        real: bool,
    }

    fn stream(marks: &[bool]) -> Vec<Item> {
        marks
            .iter()
            .enumerate()
            .map(|(i, &real)| Item { id: i as u32, real })
            .collect()
    }

    fn is_real(x: &Item) -> bool {
        x.real
    }

    #[test]
    fn geo_formula_examples() {
        assert_eq!(geo_skip(0.5, 0.5), 1);
        assert_eq!(geo_skip(0.9, 0.99), 0);
        assert_eq!(geo_skip(1e-300, 0.5), MAX_SKIP);
        assert_eq!(geo_skip(0.0, 0.5), MAX_SKIP);
        assert_eq!(geo_skip(1.0, 0.5), 0);
    }

    #[test]
    fn geometric_mean() {
        let mut src = UniformSource::seeded(7);
        let n = 1_000_000;
        let total: u128 = (0..n).map(|_| geo_sample(0.25, &mut src)).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 3.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn uniforms_stay_open() {
        let mut src = UniformSource::seeded(1);
        for _ in 0..100_000 {
            let u = src.uniform();
            assert!(u > 0.0 && u < 1.0);
        }
        let scale = 1.0 / (1u64 << 52) as f64;
        assert!(0.5 * scale > 0.0);
        assert!((((1u64 << 52) - 1) as f64 + 0.5) * scale < 1.0);
    }

    #[test]
    fn classic_fill_and_replacement() {
        let mut r = ClassicReservoir::new(2, 3);
        r.offer('a');
        r.offer('b');
        assert_eq!(r.samples(), &['a', 'b']);

        let trials = 200_000;
        let mut hit_b = 0;
        for t in 0..trials {
            let mut r = ClassicReservoir::new(1, derive_seed(11, t));
            r.offer('a');
            r.offer('b');
            hit_b += (r.samples()[0] == 'b') as u32;
        }
        let p = hit_b as f64 / trials as f64;
        assert!((p - 0.5).abs() < 0.005, "{p}");
    }

    #[test]
    fn classic_inclusion_is_k_over_n() {
        let trials = 1_000_000u64;
        let mut hits = [0u64; 5];
        for t in 0..trials {
            let mut r = ClassicReservoir::new(2, derive_seed(5, t));
            for i in 0..5 {
                r.offer(i);
            }
            for &i in r.samples() {
                hits[i] += 1;
            }
        }
        for h in hits {
            let p = h as f64 / trials as f64;
            assert!((p - 0.4).abs() < 0.01, "{p}");
        }
    }

    #[test]
    fn all_dummy_stream_is_fully_visited() {
        let items = stream(&[false; 50]);
        let mut r = Reservoir::new(3, 1);
        r.feed(&mut SliceStream::new(&items), is_real);
        assert!(r.samples().is_empty());
        assert_eq!(r.stats().next_calls, 50);
        assert_eq!(r.weight(), None);
    }

    fn inclusion(marks: &[bool], k: usize, trials: u64, seed: u64) -> Vec<f64> {
        let items = stream(marks);
        let mut hits = vec![0u64; marks.len()];
        for t in 0..trials {
            let mut r = Reservoir::new(k, derive_seed(seed, t));
            r.feed(&mut SliceStream::new(&items), is_real);
            for x in r.samples() {
                assert!(x.real);
                hits[x.id as usize] += 1;
            }
        }
        hits.iter().map(|&h| h as f64 / trials as f64).collect()
    }

    #[test]
    fn all_real_inclusion() {
        let p = inclusion(&[true; 100], 10, 1_000_000, 21);
        for x in p {
            assert!((x - 0.1).abs() < 0.005, "{x}");
        }
    }

    #[test]
    fn alternating_inclusion() {
        let marks: Vec<bool> = (0..200).map(|i| i % 2 == 0).collect();
        let p = inclusion(&marks, 5, 1_000_000, 22);
        for (i, x) in p.into_iter().enumerate() {
            if i % 2 == 0 {
                assert!((x - 0.05).abs() < 0.005, "{i}: {x}");
            } else {
                assert_eq!(x, 0.0);
            }
        }
    }

    #[test]
    fn carry_overshoot() {
        struct Unit(u128);
        impl SkippableStream for Unit {
            type Item = bool;
            fn skip(&mut self, i: u128) -> Option<bool> {
                if self.0 <= i {
                    self.0 = 0;
                    None
                } else {
                    self.0 -= i + 1;
                    Some(true)
                }
            }
        }
        impl BatchStream for Unit {
            fn remain(&self) -> u128 {
                self.0
            }
        }
        let mut r = Reservoir::new(1, 9);
        r.batch_update(&mut Unit(1), |&x| x);
        assert!(r.is_full());
        r.w = 0.5;
        r.carry = 7;
        let stops = r.stats().skip_stops;
        r.batch_update(&mut Unit(3), |&x| x);
        assert_eq!(r.stats().skip_stops, stops);
        assert_eq!(r.pending_skip(), 4);
    }

    #[test]
    fn two_batches_k1() {
        let trials = 1_000_000u64;
        let mut hits = [0u64; 4];
        let items = stream(&[true; 4]);
        for t in 0..trials {
            let mut r = Reservoir::new(1, derive_seed(31, t));
            r.batch_update(&mut SliceStream::new(&items[..2]), is_real);
            r.batch_update(&mut SliceStream::new(&items[2..]), is_real);
            hits[r.samples()[0].id as usize] += 1;
        }
        for h in hits {
            let p = h as f64 / trials as f64;
            assert!((p - 0.25).abs() < 0.003, "{p}");
        }
    }

    #[test]
    fn forecast_examples() {
        let f = DensityProfile::from_marks([true; 4]).expected_stops(2);
        assert_eq!(f.next_count, 2);
        assert!((f.expected_skip_stops - 7.0 / 6.0).abs() < 1e-12);

        let f = DensityProfile::from_marks([false; 9]).expected_stops(2);
        assert_eq!(f.next_count, 9);
        assert_eq!(f.expected_skip_stops, 0.0);
    }

    #[test]
    fn density_examples() {
        assert_eq!(concat_density(0.5, 1.0 / 3.0), 1.0 / 3.0);
        assert_eq!(pad_density(1.0, 4, 4), 0.5);
        assert_eq!(product_density(1.0, 0.5), 0.25);
        let p = DensityProfile::from_marks([true, false, true, false]);
        assert_eq!(p.density(), 0.5);
        assert_eq!(p.r(3), 1);
    }

    /// Tightest φ by checking the definition at every prefix directly.
    fn brute_density(marks: &[bool]) -> f64 {
        let mut best = 1.0f64;
        for i in 1..=marks.len() {
            let reals = marks[..i].iter().filter(|&&m| m).count() as f64;
            best = best.min(reals / i as f64);
        }
        best
    }

    #[test]
    fn alternating_stop_law() {
        let marks: Vec<bool> = (0..200).map(|i| i % 2 == 0).collect();
        let items = stream(&marks);
        let trials = 100_000u64;
        let mut stops = 0u64;
        for t in 0..trials {
            let mut r = Reservoir::new(5, derive_seed(41, t));
            r.feed(&mut SliceStream::new(&items), is_real);
            stops += r.stats().skip_stops;
        }
        let measured = stops as f64 / trials as f64;
        let f = DensityProfile::from_marks(marks.iter().copied()).expected_stops(5);
        assert!(
            (measured - f.expected_skip_stops).abs() / f.expected_skip_stops < 0.05,
            "{measured} vs {}",
            f.expected_skip_stops
        );
    }

    #[test]
    fn dense_stream_cost() {
        let k = 16u64;
        for n in [1_000usize, 10_000, 100_000] {
            let items = stream(&vec![true; n]);
            let trials = 200u64;
            let mut stops = 0u64;
            for t in 0..trials {
                let mut r = Reservoir::new(k as usize, derive_seed(51, t));
                r.feed(&mut SliceStream::new(&items), is_real);
                stops += r.stats().skip_stops;
            }
            let mean = stops as f64 / trials as f64;
            let bound = 3.0 * k as f64 * (n as f64 / k as f64).ln();
            assert!(mean <= bound, "n={n}: {mean} > {bound}");
        }
    }

    proptest! {
        #[test]
        fn density_matches_definition(marks in prop::collection::vec(any::<bool>(), 1..60)) {
            let p = DensityProfile::from_marks(marks.iter().copied());
            prop_assert!((p.density() - brute_density(&marks)).abs() < 1e-12);
            for i in 1..=marks.len() {
                prop_assert!(p.r(i + 1) - p.r(i) <= 1);
            }
        }

        #[test]
        fn weight_never_increases(seed in any::<u64>(), n in 1usize..300, k in 1usize..8) {
            let marks: Vec<bool> = (0..n).map(|i| (i * 7 + seed as usize) % 3 != 0).collect();
            let items = stream(&marks);
            let mut r = Reservoir::new(k, seed);
            let mut last = f64::INFINITY;
            for chunk in items.chunks(7) {
                r.batch_update(&mut SliceStream::new(chunk), is_real);
                if let Some(w) = r.weight() {
                    prop_assert!(w > 0.0 && w < 1.0);
                    prop_assert!(w <= last);
                    last = w;
                }
                prop_assert!(r.samples().len() <= k);
                prop_assert!(r.samples().iter().all(|x| x.real));
            }
        }

        #[test]
        fn few_reals_are_all_kept(marks in prop::collection::vec(any::<bool>(), 0..40), seed in any::<u64>()) {
            let reals = marks.iter().filter(|&&m| m).count();
            let k = reals.max(1);
            let items = stream(&marks);
            let mut r = Reservoir::new(k, seed);
            for chunk in items.chunks(3) {
                r.batch_update(&mut SliceStream::new(chunk), is_real);
            }
            let mut got: Vec<u32> = r.samples().iter().map(|x| x.id).collect();
            got.sort();
            let want: Vec<u32> = items.iter().filter(|x| x.real).map(|x| x.id).collect();
            prop_assert_eq!(got, want);
        }
    }
}
