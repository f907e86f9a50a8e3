//! Exact stationary analysis of small truncated instances.
//!
//! For a handful of flows and servers the full continuous-time Markov chain
//! is tractable: states are the waiting-job counts per flow (capped at a
//! buffer `B`, the only place the model is truncated) together with each
//! server's status (idle, or busy on a named flow). The stationary
//! distribution then gives brute-force ground truth for the simulator and
//! the analytical formulas.
//!
//! Conventions match the simulator exactly: a job leaves its queue when
//! service starts, sampling compares waiting-job counts only, and ties are
//! uniform among the distinct tied sampled queues.

use crate::config::SamplingMode;
use thiserror::Error;

/// Hard cap on the state space (memory/runtime guard).
const MAX_STATES: usize = 400_000;
/// Above this dimension the dense solver refuses and the iterative path is
/// the only option.
const DENSE_LIMIT: usize = 1_200;
/// Contractual residual for a stationary solve.
pub const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("exact analysis supports at most 3 flows (got {0})")]
    TooManyFlows(usize),
    #[error("exact analysis supports at most 2 servers (got {0})")]
    TooManyServers(usize),
    #[error("state space of {0} states exceeds the {MAX_STATES} cap")]
    StateSpaceOverflow(usize),
    #[error("d = {d} invalid for {n} queues under the chosen sampling mode")]
    BadChoices { d: usize, n: usize },
    #[error("rates must be positive")]
    NonPositiveRate,
    #[error("buffer must be at least 1")]
    ZeroBuffer,
    #[error("{dim} states exceed the dense solver limit of {DENSE_LIMIT}")]
    DenseTooLarge { dim: usize },
    #[error("stationary iteration stalled at residual {residual:e} after {iterations} iterations")]
    NotConverged { residual: f64, iterations: u64 },
    #[error("direct solve left residual {residual:e} above the {RESIDUAL_TOL:e} contract")]
    ResidualTooLarge { residual: f64 },
    #[error("singular balance system; generator looks reducible")]
    Reducible,
}

/// A small exact instance. Jobs beyond `buffer` waiting in a queue are
/// dropped (in this model only); pick `buffer` large enough that blocking is
/// negligible for comparisons against the infinite-buffer simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtmcSpec {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub buffer: usize,
    pub lambda: f64,
    pub mu: f64,
    pub gamma: f64,
    pub sampling_mode: SamplingMode,
}

/// Embedded distribution of one sampling round at a fixed queue vector.
#[derive(Debug, Clone, Default)]
struct SelectionDist {
    /// `(flow, probability)` of dequeuing from `flow`; only non-empty flows
    /// appear.
    success: Vec<(u32, f64)>,
    /// Probability that every sampled queue is empty.
    fail: f64,
}

fn selection_dist(q: &[u32], d: usize, mode: SamplingMode) -> SelectionDist {
    let n = q.len();
    let mut per_flow = vec![0.0f64; n];
    let mut fail = 0.0;
    match mode {
        SamplingMode::WithoutReplacement => {
            let combos: Vec<u32> = (1u32..(1 << n))
                .filter(|m| m.count_ones() as usize == d)
                .collect();
            let p_each = 1.0 / combos.len() as f64;
            for mask in combos {
                let mut best = 0u32;
                for f in 0..n {
                    if mask & (1 << f) != 0 {
                        best = best.max(q[f]);
                    }
                }
                if best == 0 {
                    fail += p_each;
                    continue;
                }
                let tied: Vec<usize> = (0..n)
                    .filter(|&f| mask & (1 << f) != 0 && q[f] == best)
                    .collect();
                for &f in &tied {
                    per_flow[f] += p_each / tied.len() as f64;
                }
            }
        }
        SamplingMode::WithReplacement => {
            let total = (n as u64).pow(d as u32);
            let p_each = 1.0 / total as f64;
            let mut tuple = vec![0usize; d];
            loop {
                let mut support = 0u32;
                for &f in &tuple {
                    support |= 1 << f;
                }
                let mut best = 0u32;
                for f in 0..n {
                    if support & (1 << f) != 0 {
                        best = best.max(q[f]);
                    }
                }
                if best == 0 {
                    fail += p_each;
                } else {
                    let tied: Vec<usize> = (0..n)
                        .filter(|&f| support & (1 << f) != 0 && q[f] == best)
                        .collect();
                    for &f in &tied {
                        per_flow[f] += p_each / tied.len() as f64;
                    }
                }
                // next tuple in base-n counting order
                let mut pos = 0;
                loop {
                    if pos == d {
                        break;
                    }
                    tuple[pos] += 1;
                    if tuple[pos] < n {
                        break;
                    }
                    tuple[pos] = 0;
                    pos += 1;
                }
                if pos == d {
                    break;
                }
            }
        }
    }
    SelectionDist {
        success: per_flow
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(f, &p)| (f as u32, p))
            .collect(),
        fail,
    }
}

/// Sparse rate matrix of the chain plus the state codec.
pub struct Generator {
    spec: CtmcSpec,
    dim: usize,
    n_q_states: usize,
    /// Off-diagonal transitions per row.
    rows: Vec<Vec<(u32, f64)>>,
    /// Diagonal entries (negative row sums of the off-diagonals).
    diag: Vec<f64>,
}

/// Builds the generator matrix. Rows sum to zero by construction; see
/// [`Generator::max_row_sum_error`] for the numerical check.
pub fn build_generator(spec: &CtmcSpec) -> Result<Generator, OracleError> {
    if spec.n == 0 || spec.n > 3 {
        return Err(OracleError::TooManyFlows(spec.n));
    }
    if spec.m == 0 || spec.m > 2 {
        return Err(OracleError::TooManyServers(spec.m));
    }
    if spec.buffer == 0 {
        return Err(OracleError::ZeroBuffer);
    }
    if !(spec.lambda > 0.0 && spec.mu > 0.0 && spec.gamma > 0.0) {
        return Err(OracleError::NonPositiveRate);
    }
    let bad_d = spec.d == 0
        || (spec.sampling_mode == SamplingMode::WithoutReplacement && spec.d > spec.n)
        || (spec.sampling_mode == SamplingMode::WithReplacement
            && (spec.n as u64).pow(spec.d as u32) > 100_000);
    if bad_d {
        return Err(OracleError::BadChoices {
            d: spec.d,
            n: spec.n,
        });
    }

    let b1 = spec.buffer + 1;
    let n_q_states = b1.pow(spec.n as u32);
    let n_s_states = (spec.n + 1).pow(spec.m as u32);
    let dim = n_q_states * n_s_states;
    if dim > MAX_STATES {
        return Err(OracleError::StateSpaceOverflow(dim));
    }

    let q_stride: Vec<usize> = (0..spec.n).map(|f| b1.pow(f as u32)).collect();
    let s_stride: Vec<usize> = (0..spec.m).map(|j| (spec.n + 1).pow(j as u32)).collect();

    // Embedded sampling distribution per queue vector.
    let mut sel_cache = Vec::with_capacity(n_q_states);
    let mut q = vec![0u32; spec.n];
    for q_idx in 0..n_q_states {
        let mut rest = q_idx;
        for f in 0..spec.n {
            q[f] = (rest % b1) as u32;
            rest /= b1;
        }
        sel_cache.push(selection_dist(&q, spec.d, spec.sampling_mode));
    }

    let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); dim];
    let mut diag = vec![0.0f64; dim];
    for s_idx in 0..n_s_states {
        for q_idx in 0..n_q_states {
            let idx = q_idx + n_q_states * s_idx;
            let row = &mut rows[idx];
            // arrivals
            let mut rest = q_idx;
            for f in 0..spec.n {
                let qf = rest % b1;
                rest /= b1;
                if qf < spec.buffer {
                    row.push(((idx + q_stride[f] /* q_f += 1 */) as u32, spec.lambda));
                }
            }
            // server sampling rounds
            let sel = &sel_cache[q_idx];
            let mut s_rest = s_idx;
            for j in 0..spec.m {
                let status = s_rest % (spec.n + 1); // 0 = idle, f+1 = busy(f)
                s_rest /= spec.n + 1;
                let rate = if status == 0 { spec.gamma } else { spec.mu };
                for &(g, p) in &sel.success {
                    let new_q = q_idx - q_stride[g as usize]; // dequeue one from g
                    let new_s = (s_idx as i64
                        + (g as i64 + 1 - status as i64) * s_stride[j] as i64)
                        as usize;
                    row.push(((new_q + n_q_states * new_s) as u32, rate * p));
                }
                if status != 0 && sel.fail > 0.0 {
                    // busy server completes, fails to find work, goes idle
                    let new_idx = q_idx
                        + n_q_states
                            * ((s_idx as i64 - status as i64 * s_stride[j] as i64) as usize);
                    row.push((new_idx as u32, spec.mu * sel.fail));
                }
                // idle server failing a sampling changes nothing (fresh
                // exponential back-off = no transition)
            }
            diag[idx] = -row.iter().map(|(_, r)| r).sum::<f64>();
        }
    }
    Ok(Generator {
        spec: *spec,
        dim,
        n_q_states,
        rows,
        diag,
    })
}

impl Generator {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spec(&self) -> &CtmcSpec {
        &self.spec
    }

    /// Test constructor for hand-built chains.
    #[doc(hidden)]
    pub fn from_raw(dim: usize, entries: &[(usize, usize, f64)]) -> Generator {
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); dim];
        let mut diag = vec![0.0; dim];
        for &(i, j, rate) in entries {
            assert_ne!(i, j);
            rows[i].push((j as u32, rate));
            diag[i] -= rate;
        }
        Generator {
            spec: CtmcSpec {
                n: 1,
                m: 1,
                d: 1,
                buffer: 1,
                lambda: 1.0,
                mu: 1.0,
                gamma: 1.0,
                sampling_mode: SamplingMode::WithoutReplacement,
            },
            dim,
            n_q_states: dim,
            rows,
            diag,
        }
    }

    /// Largest |row sum| including the diagonal; zero up to roundoff.
    pub fn max_row_sum_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for (row, &d) in self.rows.iter().zip(&self.diag) {
            let s: f64 = row.iter().map(|(_, r)| r).sum::<f64>() + d;
            worst = worst.max(s.abs());
        }
        worst
    }

    fn decode_queues(&self, idx: usize, q: &mut [u32]) {
        let b1 = self.spec.buffer + 1;
        let mut rest = idx % self.n_q_states;
        for f in 0..self.spec.n {
            q[f] = (rest % b1) as u32;
            rest /= b1;
        }
    }

    fn busy_servers(&self, idx: usize) -> u32 {
        let mut s_rest = idx / self.n_q_states;
        let mut busy = 0;
        for _ in 0..self.spec.m {
            if s_rest % (self.spec.n + 1) != 0 {
                busy += 1;
            }
            s_rest /= self.spec.n + 1;
        }
        busy
    }

    /// `||pi Q||_inf` for a probability row vector `pi`.
    pub fn residual_inf(&self, pi: &[f64]) -> f64 {
        let mut r = vec![0.0f64; self.dim];
        for i in 0..self.dim {
            let p = pi[i];
            r[i] += p * self.diag[i];
            for &(j, rate) in &self.rows[i] {
                r[j as usize] += p * rate;
            }
        }
        r.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// Stationary distribution via the uniformized chain
    /// `P = I + Q / Lambda`; iterates until `||pi Q||_inf < 1e-10`.
    ///
    /// This is the scalable path; [`Self::stationary_dense`] cross-checks it
    /// on instances small enough for direct elimination.
    pub fn stationary_distribution(&self) -> Result<Vec<f64>, OracleError> {
        let max_rate = self.diag.iter().fold(0.0f64, |a, d| a.max(-d));
        if max_rate <= 0.0 {
            return Err(OracleError::Reducible);
        }
        let lam = max_rate * 1.000_001;
        let mut p = vec![1.0 / self.dim as f64; self.dim];
        let mut next = vec![0.0f64; self.dim];
        let max_iters: u64 = 4_000_000;
        let mut iterations = 0u64;
        // Polish well past the contract; stop early once progress stalls at
        // floating-point level.
        let polish_tol = 1e-13;
        let mut prev_residual = f64::INFINITY;
        loop {
            for _ in 0..64 {
                next.fill(0.0);
                for i in 0..self.dim {
                    let pi_val = p[i];
                    if pi_val == 0.0 {
                        continue;
                    }
                    next[i] += pi_val * (1.0 + self.diag[i] / lam);
                    for &(j, rate) in &self.rows[i] {
                        next[j as usize] += pi_val * rate / lam;
                    }
                }
                std::mem::swap(&mut p, &mut next);
                iterations += 1;
            }
            let total: f64 = p.iter().sum();
            for v in &mut p {
                *v /= total;
            }
            let residual = self.residual_inf(&p);
            let stalled = residual > 0.5 * prev_residual;
            if residual < polish_tol || (residual < RESIDUAL_TOL && stalled) {
                return Ok(p);
            }
            if iterations >= max_iters {
                return Err(OracleError::NotConverged {
                    residual,
                    iterations,
                });
            }
            prev_residual = residual;
        }
    }

    /// Dense direct solve of `pi Q = 0, sum(pi) = 1` by Gaussian elimination
    /// with partial pivoting (one balance equation replaced by the
    /// normalization). Limited to small chains.
    pub fn stationary_dense(&self) -> Result<Vec<f64>, OracleError> {
        let dim = self.dim;
        if dim > DENSE_LIMIT {
            return Err(OracleError::DenseTooLarge { dim });
        }
        // A = Q^T with row 0 replaced by ones; b = e_0. Distinct transitions
        // may share a target state (two servers picking the same flow), so
        // rates accumulate.
        let mut a = vec![0.0f64; dim * dim];
        for i in 0..dim {
            a[i * dim + i] = self.diag[i];
        }
        for i in 0..dim {
            for &(j, rate) in &self.rows[i] {
                a[(j as usize) * dim + i] += rate;
            }
        }
        for j in 0..dim {
            a[j] = 1.0;
        }
        let mut b = vec![0.0f64; dim];
        b[0] = 1.0;
        // forward elimination
        for col in 0..dim {
            let mut piv = col;
            let mut best = a[col * dim + col].abs();
            for r in col + 1..dim {
                let v = a[r * dim + col].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best < 1e-300 {
                return Err(OracleError::Reducible);
            }
            if piv != col {
                for c in 0..dim {
                    a.swap(col * dim + c, piv * dim + c);
                }
                b.swap(col, piv);
            }
            let inv = 1.0 / a[col * dim + col];
            for r in col + 1..dim {
                let factor = a[r * dim + col] * inv;
                if factor == 0.0 {
                    continue;
                }
                a[r * dim + col] = 0.0;
                for c in col + 1..dim {
                    a[r * dim + c] -= factor * a[col * dim + c];
                }
                b[r] -= factor * b[col];
            }
        }
        // back substitution
        let mut x = vec![0.0f64; dim];
        for row in (0..dim).rev() {
            let mut acc = b[row];
            for c in row + 1..dim {
                acc -= a[row * dim + c] * x[c];
            }
            x[row] = acc / a[row * dim + row];
        }
        let total: f64 = x.iter().sum();
        for v in &mut x {
            *v /= total;
        }
        let residual = self.residual_inf(&x);
        if residual > RESIDUAL_TOL {
            return Err(OracleError::ResidualTooLarge { residual });
        }
        Ok(x)
    }

    /// True when the all-empty/all-idle state can be reached from every
    /// state (a structural sanity check on the transition graph).
    pub fn all_states_reach_empty(&self) -> bool {
        let mut rev: Vec<Vec<u32>> = vec![Vec::new(); self.dim];
        for i in 0..self.dim {
            for &(j, _) in &self.rows[i] {
                rev[j as usize].push(i as u32);
            }
        }
        let mut seen = vec![false; self.dim];
        let mut stack = vec![0u32];
        seen[0] = true;
        let mut count = 1usize;
        while let Some(v) = stack.pop() {
            for &u in &rev[v as usize] {
                if !seen[u as usize] {
                    seen[u as usize] = true;
                    count += 1;
                    stack.push(u);
                }
            }
        }
        count == self.dim
    }
}

/// Stationary performance numbers of a solved chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactMetrics {
    /// Expected waiting jobs per flow.
    pub mean_queue_per_flow: f64,
    /// Probability a given server is busy.
    pub busy_fraction: f64,
    /// Probability an arriving job finds its queue full.
    pub blocking_probability: f64,
    /// Rate of admitted jobs (per second, all flows).
    pub accepted_rate: f64,
    /// Expected jobs in the system (waiting + in service).
    pub mean_jobs_in_system: f64,
    /// Response time of accepted jobs via Little's law.
    pub response_time: f64,
}

/// Expectations under the stationary distribution.
pub fn exact_metrics(gen: &Generator, pi: &[f64]) -> ExactMetrics {
    assert_eq!(pi.len(), gen.dim);
    let spec = gen.spec;
    let mut q = vec![0u32; spec.n];
    let mut mean_wait_total = 0.0;
    let mut busy = 0.0;
    let mut blocked = 0.0;
    let mut accepted = 0.0;
    for (idx, &p) in pi.iter().enumerate() {
        gen.decode_queues(idx, &mut q);
        let wait: u32 = q.iter().sum();
        mean_wait_total += p * wait as f64;
        busy += p * gen.busy_servers(idx) as f64;
        let full = q.iter().filter(|&&v| v as usize == spec.buffer).count();
        blocked += p * full as f64;
        accepted += p * spec.lambda * (spec.n - full) as f64;
    }
    let jobs = mean_wait_total + busy;
    ExactMetrics {
        mean_queue_per_flow: mean_wait_total / spec.n as f64,
        busy_fraction: busy / spec.m as f64,
        blocking_probability: blocked / spec.n as f64,
        accepted_rate: accepted,
        mean_jobs_in_system: jobs,
        response_time: jobs / accepted,
    }
}
