//! Streaming statistics for simulation runs and the simulated-vs-analytic
//! comparison report.
//!
//! Response times stream through a collapsing batch-means accumulator
//! (fixed target of 30 batches; batch size doubles as the run grows), so a
//! billion departures need no per-job storage. Occupancies are tracked as
//! exact time-weighted integrals updated at event boundaries, so they carry
//! no sampling error; the observation window is split into 30 time batches
//! for standard-error estimates.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Target number of batches for confidence intervals.
pub const TARGET_BATCHES: usize = 30;

/// Collapsing batch-means accumulator. Batch size starts at one and doubles
/// (merging adjacent pairs) whenever `2 * target` batches have filled, so
/// the batch count stays in `[target, 2*target)` for long runs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchMeans {
    batch_size: u64,
    completed: Vec<f64>,
    cur_sum: f64,
    cur_count: u64,
    total_sum: f64,
    total_count: u64,
}

impl BatchMeans {
    pub fn new() -> Self {
        BatchMeans {
            batch_size: 1,
            ..Default::default()
        }
    }

    pub fn record(&mut self, value: f64) {
        self.total_sum += value;
        self.total_count += 1;
        self.cur_sum += value;
        self.cur_count += 1;
        if self.cur_count == self.batch_size {
            self.completed.push(self.cur_sum / self.batch_size as f64);
            self.cur_sum = 0.0;
            self.cur_count = 0;
            if self.completed.len() == 2 * TARGET_BATCHES {
                for i in 0..TARGET_BATCHES {
                    self.completed[i] = 0.5 * (self.completed[2 * i] + self.completed[2 * i + 1]);
                }
                self.completed.truncate(TARGET_BATCHES);
                self.batch_size *= 2;
            }
        }
    }

    pub fn count(&self) -> u64 {
        self.total_count
    }

    pub fn mean(&self) -> f64 {
        self.total_sum / self.total_count as f64
    }

    pub fn batch_count(&self) -> usize {
        self.completed.len()
    }

    /// Standard error of the mean, from the completed batch means.
    pub fn std_err(&self) -> f64 {
        let k = self.completed.len();
        if k < 2 {
            return f64::NAN;
        }
        let mean = self.completed.iter().sum::<f64>() / k as f64;
        let var = self
            .completed
            .iter()
            .map(|b| (b - mean) * (b - mean))
            .sum::<f64>()
            / (k - 1) as f64;
        (var / k as f64).sqrt()
    }

    /// 95% confidence half-width (Student t over the batch means).
    pub fn ci_half_width(&self) -> f64 {
        let k = self.completed.len();
        if k < 2 {
            return f64::NAN;
        }
        let t = StudentsT::new(0.0, 1.0, (k - 1) as f64)
            .expect("valid dof")
            .inverse_cdf(0.975);
        t * self.std_err()
    }

    pub fn summary(&self) -> SummaryStats {
        SummaryStats {
            mean: self.mean(),
            std_err: self.std_err(),
            ci_half_width: self.ci_half_width(),
            count: self.count(),
            batch_count: self.batch_count(),
        }
    }
}

/// Response-time accumulator; negative inputs are a simulator bug and abort.
#[derive(Debug, Clone, Default)]
pub struct ResponseAccumulator {
    batches: BatchMeans,
}

impl ResponseAccumulator {
    pub fn new() -> Self {
        ResponseAccumulator {
            batches: BatchMeans::new(),
        }
    }

    pub fn record_departure(&mut self, response_time: f64) {
        assert!(
            response_time >= 0.0,
            "negative response time {response_time}: simulator bug"
        );
        self.batches.record(response_time);
    }

    pub fn stats(&self) -> &BatchMeans {
        &self.batches
    }
}

/// Point estimate with error information.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub std_err: f64,
    pub ci_half_width: f64,
    pub count: u64,
    pub batch_count: usize,
}

/// Time average with a batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeAvgStats {
    pub mean: f64,
    pub std_err: f64,
}

/// Exact time-weighted average of a piecewise-constant scalar (busy servers,
/// total waiting jobs, ...), with optional batch splits for error bars.
#[derive(Debug, Clone, Default)]
pub struct TimeAverage {
    value: f64,
    last_t: f64,
    cur_integral: f64,
    cur_start: f64,
    batches: Vec<(f64, f64)>, // (integral, span)
    open: bool,
}

impl TimeAverage {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens the observation window at `now` with the current value.
    pub fn open(&mut self, now: f64, value: f64) {
        *self = TimeAverage {
            value,
            last_t: now,
            cur_start: now,
            open: true,
            ..Default::default()
        };
    }

    #[inline]
    fn accrue(&mut self, now: f64) {
        self.cur_integral += self.value * (now - self.last_t);
        self.last_t = now;
    }

    /// Records a change of the tracked quantity to `value` at time `now`.
    #[inline]
    pub fn set(&mut self, now: f64, value: f64) {
        if self.open {
            self.accrue(now);
        }
        self.value = value;
    }

    /// Closes the current batch at `now`.
    pub fn close_batch(&mut self, now: f64) {
        if !self.open {
            return;
        }
        self.accrue(now);
        self.batches.push((self.cur_integral, now - self.cur_start));
        self.cur_integral = 0.0;
        self.cur_start = now;
    }

    /// Ends the observation window.
    pub fn finish(&mut self, now: f64) {
        if !self.open {
            return;
        }
        self.accrue(now);
        if now > self.cur_start {
            self.batches.push((self.cur_integral, now - self.cur_start));
        }
        self.open = false;
    }

    pub fn mean(&self) -> f64 {
        let (int, span) = self
            .batches
            .iter()
            .fold((0.0, 0.0), |(i, s), (bi, bs)| (i + bi, s + bs));
        int / span
    }

    pub fn std_err(&self) -> f64 {
        let k = self.batches.len();
        if k < 2 {
            return f64::NAN;
        }
        let means: Vec<f64> = self.batches.iter().map(|(i, s)| i / s).collect();
        let m = means.iter().sum::<f64>() / k as f64;
        let var = means.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (k - 1) as f64;
        (var / k as f64).sqrt()
    }

    pub fn stats(&self) -> TimeAvgStats {
        TimeAvgStats {
            mean: self.mean(),
            std_err: self.std_err(),
        }
    }
}

/// Exact time-weighted queue-length occupancy over a set of entities (flows
/// or servers). Maintains, per level `l`, the total entity-seconds spent at
/// exactly `l` jobs; updated in O(1) per queue-length change.
#[derive(Debug, Clone, Default)]
pub struct OccupancyTracker {
    level_time: Vec<f64>,
    lengths: Vec<u32>,
    last_change: Vec<f64>,
    window_start: f64,
    window_end: f64,
    open: bool,
}

impl OccupancyTracker {
    pub fn new(entities: usize) -> Self {
        OccupancyTracker {
            level_time: vec![0.0; 8],
            lengths: vec![0; entities],
            last_change: vec![0.0; entities],
            ..Default::default()
        }
    }

    /// Opens the window at `now`, snapshotting the current lengths.
    pub fn open(&mut self, now: f64, lengths: &[u32]) {
        assert_eq!(lengths.len(), self.lengths.len());
        self.lengths.copy_from_slice(lengths);
        self.last_change.fill(now);
        self.level_time.fill(0.0);
        self.window_start = now;
        self.open = true;
    }

    #[inline]
    fn credit(&mut self, entity: usize, now: f64) {
        let level = self.lengths[entity] as usize;
        if level >= self.level_time.len() {
            self.level_time.resize(level + 1, 0.0);
        }
        self.level_time[level] += now - self.last_change[entity];
        self.last_change[entity] = now;
    }

    /// Records entity `entity` changing to `new_length` at time `now`.
    #[inline]
    pub fn on_length_change(&mut self, entity: usize, new_length: u32, now: f64) {
        if !self.open {
            self.lengths[entity] = new_length;
            return;
        }
        self.credit(entity, now);
        self.lengths[entity] = new_length;
    }

    /// Ends the window, crediting every entity up to `now`.
    pub fn close(&mut self, now: f64) {
        if !self.open {
            return;
        }
        for e in 0..self.lengths.len() {
            self.credit(e, now);
        }
        self.window_end = now;
        self.open = false;
    }

    pub fn window(&self) -> f64 {
        self.window_end - self.window_start
    }

    /// Time-averaged fraction of entities at exactly each level.
    pub fn density(&self) -> Vec<f64> {
        let norm = self.lengths.len() as f64 * self.window();
        self.level_time.iter().map(|t| t / norm).collect()
    }

    /// Time-averaged tail: fraction of entities with at least `i` jobs,
    /// for `i = 0..=max_level`.
    pub fn tail_average(&self) -> Vec<f64> {
        let dens = self.density();
        let mut tail = vec![0.0; dens.len()];
        let mut acc = 0.0;
        for i in (0..dens.len()).rev() {
            acc += dens[i];
            tail[i] = acc;
        }
        tail
    }

    /// Time-averaged mean level per entity (`sum_{i>=1} tail_i`).
    pub fn mean_level(&self) -> f64 {
        let norm = self.lengths.len() as f64 * self.window();
        self.level_time
            .iter()
            .enumerate()
            .map(|(l, t)| l as f64 * t)
            .sum::<f64>()
            / norm
    }
}

/// The paper's comparison metric: `100 * |1 - (predicted_wait + 1/mu) / simulated|`.
pub fn percentage_error(simulated_response: f64, predicted_wait: f64, mu: f64) -> f64 {
    100.0 * (1.0 - (predicted_wait + 1.0 / mu) / simulated_response).abs()
}

/// Analytic reference values attached to a report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub response_time: f64,
    pub busy_fraction: f64,
    pub mean_queue: f64,
}

/// Side-by-side simulated and predicted performance numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub policy: String,
    pub seed: u64,
    pub n_arrivals: u64,
    pub warmup_fraction: f64,
    pub response_time: SummaryStats,
    pub busy_fraction: TimeAvgStats,
    pub mean_queue_per_entity: TimeAvgStats,
    pub jobs_in_system_avg: f64,
    pub tail_occupancy: Vec<f64>,
    pub predicted_response_time: Option<f64>,
    pub predicted_busy_fraction: Option<f64>,
    pub predicted_mean_queue: Option<f64>,
    pub percentage_error: Option<f64>,
    pub arrivals: u64,
    pub departures: u64,
    pub failed_samplings: u64,
    pub successful_samplings: u64,
    pub simulated_duration: f64,
    pub wall_clock_seconds: f64,
}

impl MetricsReport {
    pub fn human_line(&self) -> String {
        let pred = match (self.predicted_response_time, self.percentage_error) {
            (Some(p), Some(e)) => format!(" pred={:.4} s err={:.2}%", p, e),
            _ => String::new(),
        };
        format!(
            "{}: w_sim={:.4} ± {:.4} s busy={:.4}{}",
            self.policy, self.response_time.mean, self.response_time.ci_half_width,
            self.busy_fraction.mean, pred
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_departure_mean() {
        let mut acc = ResponseAccumulator::new();
        acc.record_departure(2.0);
        assert_eq!(acc.stats().mean(), 2.0);
        assert_eq!(acc.stats().count(), 1);
    }

    #[test]
    fn three_departures_mean_and_batches() {
        let mut acc = ResponseAccumulator::new();
        for v in [1.0, 2.0, 3.0] {
            acc.record_departure(v);
        }
        assert_eq!(acc.stats().mean(), 2.0);
        assert_eq!(acc.stats().batch_count(), 3);
        assert!(acc.stats().ci_half_width() > 0.0);
    }

    #[test]
    #[should_panic(expected = "negative response time")]
    fn negative_response_time_is_a_hard_failure() {
        ResponseAccumulator::new().record_departure(-1.0);
    }

    #[test]
    fn streaming_mean_equals_batch_recomputation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let sample: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>() * 5.0).collect();
        let mut bm = BatchMeans::new();
        for &v in &sample {
            bm.record(v);
        }
        let direct = sample.iter().sum::<f64>() / sample.len() as f64;
        assert!((bm.mean() - direct).abs() < 1e-12);
        assert!(bm.batch_count() >= TARGET_BATCHES && bm.batch_count() < 2 * TARGET_BATCHES);
    }

    #[test]
    fn exponential_sample_mean_within_three_se() {
        use rand::SeedableRng;
        use rand_distr::Distribution;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let exp = rand_distr::Exp::new(1.0).unwrap();
        let mut bm = BatchMeans::new();
        for _ in 0..1_000_000 {
            bm.record(exp.sample(&mut rng));
        }
        let se = bm.std_err();
        assert!(se > 0.0 && se < 0.01);
        assert!((bm.mean() - 1.0).abs() < 3.0 * se, "mean {} se {}", bm.mean(), se);
    }

    #[test]
    fn time_average_of_two_half_windows_is_the_midpoint() {
        let mut ta = TimeAverage::new();
        ta.open(0.0, 2.0);
        ta.set(5.0, 4.0);
        ta.finish(10.0);
        assert!((ta.mean() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn time_average_batches_give_errors() {
        let mut ta = TimeAverage::new();
        ta.open(0.0, 1.0);
        for k in 1..=10 {
            let t = k as f64;
            ta.set(t, if k % 2 == 0 { 1.0 } else { 3.0 });
            ta.close_batch(t);
        }
        ta.finish(10.0);
        assert!(ta.std_err() > 0.0);
        assert!((ta.mean() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn static_occupancy_equals_instantaneous_tail() {
        let mut occ = OccupancyTracker::new(4);
        occ.open(0.0, &[0, 1, 3, 3]);
        occ.close(2.0);
        let tail = occ.tail_average();
        assert!((tail[0] - 1.0).abs() < 1e-15);
        assert!((tail[1] - 0.75).abs() < 1e-15);
        assert!((tail[2] - 0.5).abs() < 1e-15);
        assert!((tail[3] - 0.5).abs() < 1e-15);
        assert!((occ.mean_level() - 1.75).abs() < 1e-15);
    }

    #[test]
    fn occupancy_reconstruction_matches_manual_integral() {
        // Scripted event log over 2 entities; compare against a hand
        // integral of the exact-level times.
        let mut occ = OccupancyTracker::new(2);
        occ.open(0.0, &[0, 0]);
        occ.on_length_change(0, 1, 1.0); // e0: level 0 over [0,1)
        occ.on_length_change(0, 2, 2.5); // e0: level 1 over [1,2.5)
        occ.on_length_change(1, 1, 3.0); // e1: level 0 over [0,3)
        occ.on_length_change(0, 1, 4.0); // e0: level 2 over [2.5,4)
        occ.close(5.0); // e0: level 1 over [4,5); e1: level 1 over [3,5)
        let dens = occ.density();
        let total_time = 2.0 * 5.0;
        let expect0 = (1.0 + 3.0) / total_time;
        let expect1 = (1.5 + 1.0 + 2.0) / total_time;
        let expect2 = 1.5 / total_time;
        assert!((dens[0] - expect0).abs() < 1e-12);
        assert!((dens[1] - expect1).abs() < 1e-12);
        assert!((dens[2] - expect2).abs() < 1e-12);
        let sum: f64 = dens.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn percentage_error_examples() {
        assert_eq!(percentage_error(201.0, 200.0, 1.0), 0.0);
        assert!((percentage_error(200.0, 200.0, 1.0) - 0.5).abs() < 1e-12);
    }
}
