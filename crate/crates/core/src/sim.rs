//! Event-driven stochastic simulation of the switch.
//!
//! The serve-the-longest engine keeps one FIFO queue per flow and `m`
//! servers. Servers discover work only by sampling: on completing a job a
//! server immediately samples `d` queues and serves the longest; if all
//! sampled queues are empty it backs off for an exponential(`gamma`) period
//! before re-sampling. Arrivals never signal servers. The baseline engine
//! instead queues jobs at servers: each arrival joins the shortest of `d`
//! sampled server queues and servers drain their own queue work-conservingly.
//!
//! Determinism: the event calendar breaks time ties by (kind, sequence
//! number) with completions before back-off expiries before arrivals, and
//! the generator is split into one named stream per purpose (arrivals,
//! service, back-off, sampling, tie-break), all derived from the master
//! seed. Identical `(config, seed, n_arrivals)` triples produce
//! bit-identical outputs.

use crate::config::{Policy, SamplingMode, ValidatedConfig};
use crate::metrics::{
    OccupancyTracker, ResponseAccumulator, SummaryStats, TimeAverage, TimeAvgStats,
    TARGET_BATCHES,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use std::collections::{BinaryHeap, VecDeque};
use std::time::Instant;

/// Everything a run reports. Arrival/departure counts satisfy exact
/// conservation: `arrivals == departures + final_jobs_in_system`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutput {
    pub policy: Policy,
    pub seed: u64,
    pub n_arrivals: u64,
    pub warmup_fraction: f64,
    pub arrivals: u64,
    pub departures: u64,
    pub final_jobs_in_system: u64,
    pub failed_samplings: u64,
    pub successful_samplings: u64,
    /// Time of the last processed event.
    pub simulated_duration: f64,
    /// Length of the post-warmup observation window.
    pub observation_window: f64,
    pub wall_clock_seconds: f64,
    /// Post-warmup response times (departure - arrival, includes service).
    pub response: SummaryStats,
    /// Time-averaged busy-server fraction.
    pub busy_fraction: TimeAvgStats,
    /// Time-averaged queue length per entity (per flow for the longest-queue
    /// policy, waiting jobs only; per server for the baseline, including the
    /// job in service).
    pub mean_queue_per_entity: TimeAvgStats,
    /// Time-averaged total jobs in the system.
    pub jobs_in_system_avg: f64,
    /// Time-averaged fraction of entities with at least `i` jobs.
    pub tail_occupancy: Vec<f64>,
    /// Time-averaged fraction of entities with exactly `i` jobs.
    pub level_density: Vec<f64>,
}

/// One named generator per purpose, all split from the master seed.
struct Streams {
    arrival: ChaCha8Rng,
    service: ChaCha8Rng,
    backoff: ChaCha8Rng,
    sampling: ChaCha8Rng,
    tiebreak: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let mk = |stream: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            rng
        };
        Streams {
            arrival: mk(1),
            service: mk(2),
            backoff: mk(3),
            sampling: mk(4),
            tiebreak: mk(5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    Completion { server: u32 },
    BackoffExpiry { server: u32 },
    Arrival { flow: u32 },
}

impl EventKind {
    /// Tie rank: completions first, then back-off expiries, then arrivals.
    fn rank(&self) -> u8 {
        match self {
            EventKind::Completion { .. } => 0,
            EventKind::BackoffExpiry { .. } => 1,
            EventKind::Arrival { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // BinaryHeap is a max-heap; reverse for earliest-first.
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.kind.rank().cmp(&self.kind.rank()))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Calendar {
    heap: BinaryHeap<Event>,
    seq: u64,
}

impl Calendar {
    fn new(capacity: usize) -> Self {
        Calendar {
            heap: BinaryHeap::with_capacity(capacity),
            seq: 0,
        }
    }

    #[inline]
    fn schedule(&mut self, time: f64, kind: EventKind) {
        self.heap.push(Event {
            time,
            seq: self.seq,
            kind,
        });
        self.seq += 1;
    }

    #[inline]
    fn next(&mut self) -> Option<Event> {
        self.heap.pop()
    }
}

/// Draws `d` queue indices (with or without replacement) and picks an
/// extreme one, breaking ties uniformly at random among the distinct tied
/// indices. Reusable scratch keeps sampling allocation-free.
pub struct QueueSampler {
    mode: SamplingMode,
    d: usize,
    perm: Vec<u32>,
    tied: Vec<u32>,
}

impl QueueSampler {
    pub fn new(n_queues: usize, d: usize, mode: SamplingMode) -> Self {
        assert!(d >= 1, "d must be at least 1");
        if mode == SamplingMode::WithoutReplacement {
            assert!(d <= n_queues, "d exceeds the population without replacement");
        }
        QueueSampler {
            mode,
            d,
            perm: (0..n_queues as u32).collect(),
            tied: Vec::with_capacity(d.min(16)),
        }
    }

    /// The longest non-empty queue among `d` sampled, or `None` when every
    /// sampled queue is empty (a failed sampling).
    pub fn sample_longest<R: Rng, T: Rng>(
        &mut self,
        lengths: &[u32],
        sampling: &mut R,
        tiebreak: &mut T,
    ) -> Option<u32> {
        let n = lengths.len();
        self.tied.clear();
        let mut best: u32 = 0;
        match self.mode {
            SamplingMode::WithoutReplacement => {
                // Partial Fisher-Yates over a persistent permutation; the
                // array stays a permutation between calls, so each call is
                // still a uniform draw of d distinct indices.
                for k in 0..self.d {
                    let j = sampling.random_range(k..n);
                    self.perm.swap(k, j);
                    let idx = self.perm[k];
                    let len = lengths[idx as usize];
                    if len > best {
                        best = len;
                        self.tied.clear();
                        self.tied.push(idx);
                    } else if len == best && best > 0 {
                        self.tied.push(idx);
                    }
                }
            }
            SamplingMode::WithReplacement => {
                for _ in 0..self.d {
                    let idx = sampling.random_range(0..n) as u32;
                    let len = lengths[idx as usize];
                    if len > best {
                        best = len;
                        self.tied.clear();
                        self.tied.push(idx);
                    } else if len == best && best > 0 && !self.tied.contains(&idx) {
                        self.tied.push(idx);
                    }
                }
            }
        }
        if best == 0 {
            None
        } else if self.tied.len() == 1 {
            Some(self.tied[0])
        } else {
            Some(self.tied[tiebreak.random_range(0..self.tied.len())])
        }
    }

    /// The shortest queue among `d` sampled (empty queues are candidates);
    /// ties uniform among distinct tied indices.
    pub fn sample_shortest<R: Rng, T: Rng>(
        &mut self,
        lengths: &[u32],
        sampling: &mut R,
        tiebreak: &mut T,
    ) -> u32 {
        let n = lengths.len();
        self.tied.clear();
        let mut best = u32::MAX;
        match self.mode {
            SamplingMode::WithoutReplacement => {
                for k in 0..self.d {
                    let j = sampling.random_range(k..n);
                    self.perm.swap(k, j);
                    let idx = self.perm[k];
                    let len = lengths[idx as usize];
                    if len < best {
                        best = len;
                        self.tied.clear();
                        self.tied.push(idx);
                    } else if len == best {
                        self.tied.push(idx);
                    }
                }
            }
            SamplingMode::WithReplacement => {
                for _ in 0..self.d {
                    let idx = sampling.random_range(0..n) as u32;
                    let len = lengths[idx as usize];
                    if len < best {
                        best = len;
                        self.tied.clear();
                        self.tied.push(idx);
                    } else if len == best && !self.tied.contains(&idx) {
                        self.tied.push(idx);
                    }
                }
            }
        }
        if self.tied.len() == 1 {
            self.tied[0]
        } else {
            self.tied[tiebreak.random_range(0..self.tied.len())]
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Job {
    arrived: f64,
    index: u64,
}

#[derive(Debug, Clone, Copy)]
enum Server {
    Idle,
    Busy { job: Job },
}

/// Dispatches on the configured policy.
pub fn run_simulation(
    cfg: &ValidatedConfig,
    seed: u64,
    n_arrivals: u64,
    warmup_fraction: f64,
) -> SimOutput {
    match cfg.policy {
        Policy::Slq => run_slq_simulation(cfg, seed, n_arrivals, warmup_fraction),
        Policy::Jsq => run_jsq_simulation(cfg, seed, n_arrivals, warmup_fraction),
    }
}

/// Shared bookkeeping for both engines.
struct RunStats {
    response: ResponseAccumulator,
    occupancy: OccupancyTracker,
    busy_avg: TimeAverage,
    queue_avg: TimeAverage,
    warmup_count: u64,
    window_open: bool,
    window_start: f64,
    post_arrivals: u64,
    batch_step: u64,
    next_batch_at: u64,
    batches_closed: usize,
}

impl RunStats {
    fn new(entities: usize, n_arrivals: u64, warmup_fraction: f64) -> Self {
        assert!(n_arrivals >= 1, "n_arrivals must be at least 1");
        assert!(
            (0.0..1.0).contains(&warmup_fraction),
            "warmup_fraction must be in [0, 1)"
        );
        let warmup_count = (warmup_fraction * n_arrivals as f64).floor() as u64;
        let post_total = n_arrivals - warmup_count;
        let batch_step = (post_total / TARGET_BATCHES as u64).max(1);
        RunStats {
            response: ResponseAccumulator::new(),
            occupancy: OccupancyTracker::new(entities),
            busy_avg: TimeAverage::new(),
            queue_avg: TimeAverage::new(),
            warmup_count,
            window_open: false,
            window_start: 0.0,
            post_arrivals: 0,
            batch_step,
            next_batch_at: batch_step,
            batches_closed: 0,
        }
    }

    fn open_window(&mut self, now: f64, lengths: &[u32], busy: u32, waiting_total: u64) {
        self.occupancy.open(now, lengths);
        self.busy_avg.open(now, busy as f64);
        self.queue_avg.open(now, waiting_total as f64);
        self.window_open = true;
        self.window_start = now;
    }

    /// Call on each post-warmup arrival; closes time batches at fixed
    /// arrival-count boundaries.
    #[inline]
    fn on_post_arrival(&mut self, now: f64) {
        self.post_arrivals += 1;
        if self.batches_closed < TARGET_BATCHES - 1 && self.post_arrivals == self.next_batch_at {
            self.busy_avg.close_batch(now);
            self.queue_avg.close_batch(now);
            self.batches_closed += 1;
            self.next_batch_at += self.batch_step;
        }
    }

    fn finish(&mut self, now: f64) {
        self.occupancy.close(now);
        self.busy_avg.finish(now);
        self.queue_avg.finish(now);
    }
}

/// Serve-the-longest-of-d simulation. Runs until `n_arrivals` jobs have
/// arrived, then drains the system so every admitted job departs;
/// statistics exclude jobs that arrived during the warm-up fraction.
pub fn run_slq_simulation(
    cfg: &ValidatedConfig,
    seed: u64,
    n_arrivals: u64,
    warmup_fraction: f64,
) -> SimOutput {
    let wall_start = Instant::now();
    let n = cfg.n as usize;
    let m = cfg.m as usize;
    let total_rate = cfg.n as f64 * cfg.lambda;
    let interarrival = Exp::new(total_rate).expect("positive rate");
    let service = Exp::new(cfg.mu).expect("positive rate");
    let backoff = Exp::new(cfg.gamma).expect("positive rate");

    let mut rngs = Streams::new(seed);
    let mut cal = Calendar::new(m + 2);
    let mut queues: Vec<VecDeque<Job>> = vec![VecDeque::new(); n];
    let mut lengths: Vec<u32> = vec![0; n];
    let mut servers: Vec<Server> = vec![Server::Idle; m];
    let mut sampler = QueueSampler::new(n, cfg.d as usize, cfg.sampling_mode);
    let mut stats = RunStats::new(n, n_arrivals, warmup_fraction);

    let mut arrivals: u64 = 0;
    let mut departures: u64 = 0;
    let mut failed: u64 = 0;
    let mut successful: u64 = 0;
    let mut jobs_in_system: u64 = 0;
    let mut waiting_total: u64 = 0;
    let mut busy_count: u32 = 0;

    // Idle servers carry a back-off timer from t = 0; the first arrival is
    // drawn from the superposed Poisson(n*lambda) stream.
    for s in 0..m {
        let t = backoff.sample(&mut rngs.backoff);
        cal.schedule(t, EventKind::BackoffExpiry { server: s as u32 });
    }
    {
        let t = interarrival.sample(&mut rngs.arrival);
        let flow = rngs.arrival.random_range(0..n) as u32;
        cal.schedule(t, EventKind::Arrival { flow });
    }
    if stats.warmup_count == 0 {
        stats.open_window(0.0, &lengths, 0, 0);
    }

    let mut end_time = 0.0;
    while let Some(ev) = cal.next() {
        let now = ev.time;
        match ev.kind {
            EventKind::Arrival { flow } => {
                let idx = arrivals;
                arrivals += 1;
                if !stats.window_open && idx >= stats.warmup_count {
                    stats.open_window(now, &lengths, busy_count, waiting_total);
                }
                if arrivals < n_arrivals {
                    let t = now + interarrival.sample(&mut rngs.arrival);
                    let next_flow = rngs.arrival.random_range(0..n) as u32;
                    cal.schedule(t, EventKind::Arrival { flow: next_flow });
                }
                let f = flow as usize;
                queues[f].push_back(Job {
                    arrived: now,
                    index: idx,
                });
                lengths[f] += 1;
                jobs_in_system += 1;
                waiting_total += 1;
                stats.occupancy.on_length_change(f, lengths[f], now);
                stats.queue_avg.set(now, waiting_total as f64);
                if stats.window_open && idx >= stats.warmup_count {
                    stats.on_post_arrival(now);
                }
            }
            EventKind::Completion { server } => {
                let s = server as usize;
                let job = match servers[s] {
                    Server::Busy { job } => job,
                    Server::Idle => unreachable!("completion on idle server"),
                };
                departures += 1;
                jobs_in_system -= 1;
                if job.index >= stats.warmup_count {
                    stats.response.record_departure(now - job.arrived);
                }
                // A newly idle server immediately samples d queues.
                match sampler.sample_longest(&lengths, &mut rngs.sampling, &mut rngs.tiebreak) {
                    Some(g) => {
                        successful += 1;
                        let g = g as usize;
                        let next = queues[g].pop_front().expect("sampled non-empty queue");
                        lengths[g] -= 1;
                        waiting_total -= 1;
                        stats.occupancy.on_length_change(g, lengths[g], now);
                        servers[s] = Server::Busy { job: next };
                        let t = now + service.sample(&mut rngs.service);
                        cal.schedule(t, EventKind::Completion { server });
                    }
                    None => {
                        failed += 1;
                        busy_count -= 1;
                        servers[s] = Server::Idle;
                        let t = now + backoff.sample(&mut rngs.backoff);
                        cal.schedule(t, EventKind::BackoffExpiry { server });
                    }
                }
                stats.busy_avg.set(now, busy_count as f64);
                stats.queue_avg.set(now, waiting_total as f64);
            }
            EventKind::BackoffExpiry { server } => {
                let s = server as usize;
                debug_assert!(matches!(servers[s], Server::Idle));
                match sampler.sample_longest(&lengths, &mut rngs.sampling, &mut rngs.tiebreak) {
                    Some(g) => {
                        successful += 1;
                        let g = g as usize;
                        let next = queues[g].pop_front().expect("sampled non-empty queue");
                        lengths[g] -= 1;
                        waiting_total -= 1;
                        stats.occupancy.on_length_change(g, lengths[g], now);
                        servers[s] = Server::Busy { job: next };
                        busy_count += 1;
                        let t = now + service.sample(&mut rngs.service);
                        cal.schedule(t, EventKind::Completion { server });
                        stats.busy_avg.set(now, busy_count as f64);
                        stats.queue_avg.set(now, waiting_total as f64);
                    }
                    None => {
                        failed += 1;
                        let t = now + backoff.sample(&mut rngs.backoff);
                        cal.schedule(t, EventKind::BackoffExpiry { server });
                    }
                }
            }
        }
        debug_assert_eq!(arrivals, departures + jobs_in_system);
        if arrivals == n_arrivals && jobs_in_system == 0 {
            end_time = now;
            break;
        }
    }

    stats.finish(end_time);
    assert_eq!(arrivals, departures + jobs_in_system, "conservation violated");
    build_output(
        cfg,
        seed,
        n_arrivals,
        warmup_fraction,
        arrivals,
        departures,
        jobs_in_system,
        failed,
        successful,
        end_time,
        &stats,
        m as f64,
        n as f64,
        false,
        wall_start,
    )
}

/// Baseline: each arriving job joins the shortest of `d` sampled server
/// queues; servers work-conservingly serve their own queue. Queue length
/// counts the job in service.
pub fn run_jsq_simulation(
    cfg: &ValidatedConfig,
    seed: u64,
    n_arrivals: u64,
    warmup_fraction: f64,
) -> SimOutput {
    let wall_start = Instant::now();
    let m = cfg.m as usize;
    let total_rate = cfg.n as f64 * cfg.lambda;
    let interarrival = Exp::new(total_rate).expect("positive rate");
    let service = Exp::new(cfg.mu).expect("positive rate");

    let mut rngs = Streams::new(seed);
    let mut cal = Calendar::new(m + 2);
    let mut queues: Vec<VecDeque<Job>> = vec![VecDeque::new(); m];
    let mut lengths: Vec<u32> = vec![0; m];
    let mut sampler = QueueSampler::new(m, cfg.d as usize, cfg.sampling_mode);
    let mut stats = RunStats::new(m, n_arrivals, warmup_fraction);

    let mut arrivals: u64 = 0;
    let mut departures: u64 = 0;
    let mut jobs_in_system: u64 = 0;
    let mut busy_count: u32 = 0;

    {
        let t = interarrival.sample(&mut rngs.arrival);
        cal.schedule(t, EventKind::Arrival { flow: 0 });
    }
    if stats.warmup_count == 0 {
        stats.open_window(0.0, &lengths, 0, 0);
    }

    let mut end_time = 0.0;
    while let Some(ev) = cal.next() {
        let now = ev.time;
        match ev.kind {
            EventKind::Arrival { .. } => {
                let idx = arrivals;
                arrivals += 1;
                if !stats.window_open && idx >= stats.warmup_count {
                    stats.open_window(now, &lengths, busy_count, jobs_in_system);
                }
                if arrivals < n_arrivals {
                    let t = now + interarrival.sample(&mut rngs.arrival);
                    cal.schedule(t, EventKind::Arrival { flow: 0 });
                }
                let g = sampler.sample_shortest(&lengths, &mut rngs.sampling, &mut rngs.tiebreak)
                    as usize;
                queues[g].push_back(Job {
                    arrived: now,
                    index: idx,
                });
                lengths[g] += 1;
                jobs_in_system += 1;
                if lengths[g] == 1 {
                    busy_count += 1;
                    let t = now + service.sample(&mut rngs.service);
                    cal.schedule(t, EventKind::Completion { server: g as u32 });
                }
                stats.occupancy.on_length_change(g, lengths[g], now);
                stats.busy_avg.set(now, busy_count as f64);
                stats.queue_avg.set(now, jobs_in_system as f64);
                if stats.window_open && idx >= stats.warmup_count {
                    stats.on_post_arrival(now);
                }
            }
            EventKind::Completion { server } => {
                let s = server as usize;
                let job = queues[s].pop_front().expect("completion on empty queue");
                lengths[s] -= 1;
                departures += 1;
                jobs_in_system -= 1;
                if job.index >= stats.warmup_count {
                    stats.response.record_departure(now - job.arrived);
                }
                if lengths[s] > 0 {
                    let t = now + service.sample(&mut rngs.service);
                    cal.schedule(t, EventKind::Completion { server });
                } else {
                    busy_count -= 1;
                }
                stats.occupancy.on_length_change(s, lengths[s], now);
                stats.busy_avg.set(now, busy_count as f64);
                stats.queue_avg.set(now, jobs_in_system as f64);
            }
            EventKind::BackoffExpiry { .. } => unreachable!("no back-off in the baseline"),
        }
        debug_assert_eq!(arrivals, departures + jobs_in_system);
        if arrivals == n_arrivals && jobs_in_system == 0 {
            end_time = now;
            break;
        }
    }

    stats.finish(end_time);
    assert_eq!(arrivals, departures + jobs_in_system, "conservation violated");
    build_output(
        cfg,
        seed,
        n_arrivals,
        warmup_fraction,
        arrivals,
        departures,
        jobs_in_system,
        0,
        0,
        end_time,
        &stats,
        m as f64,
        m as f64,
        true,
        wall_start,
    )
}

#[allow(clippy::too_many_arguments)]
fn build_output(
    cfg: &ValidatedConfig,
    seed: u64,
    n_arrivals: u64,
    warmup_fraction: f64,
    arrivals: u64,
    departures: u64,
    final_jobs: u64,
    failed: u64,
    successful: u64,
    end_time: f64,
    stats: &RunStats,
    m: f64,
    entities: f64,
    queue_includes_service: bool,
    wall_start: Instant,
) -> SimOutput {
    let busy_stats = stats.busy_avg.stats();
    let queue_stats = stats.queue_avg.stats();
    let jobs_avg = if queue_includes_service {
        queue_stats.mean
    } else {
        queue_stats.mean + busy_stats.mean
    };
    SimOutput {
        policy: cfg.policy,
        seed,
        n_arrivals,
        warmup_fraction,
        arrivals,
        departures,
        final_jobs_in_system: final_jobs,
        failed_samplings: failed,
        successful_samplings: successful,
        simulated_duration: end_time,
        observation_window: end_time - stats.window_start,
        wall_clock_seconds: wall_start.elapsed().as_secs_f64(),
        response: stats.response.stats().summary(),
        busy_fraction: TimeAvgStats {
            mean: busy_stats.mean / m,
            std_err: busy_stats.std_err / m,
        },
        mean_queue_per_entity: TimeAvgStats {
            mean: queue_stats.mean / entities,
            std_err: queue_stats.std_err / entities,
        },
        jobs_in_system_avg: jobs_avg,
        tail_occupancy: stats.occupancy.tail_average(),
        level_density: stats.occupancy.density(),
    }
}
