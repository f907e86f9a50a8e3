//! Acceptance suite: every release criterion as one test, each printing a
//! single PASS line with the measured numbers (visible with
//! `cargo test --test acceptance -- --nocapture`).
//!
//! Tolerances are pinned here, in code. Statistical criteria use fixed
//! seeds so the suite is deterministic.

use slqsim::config::{ModelParams, Policy, SamplingMode, SystemConfig, ValidatedConfig};
use slqsim::equilibrium::{slq_equilibrium, DEFAULT_TAIL_TOL};
use slqsim::meanfield::{drift_residual, relax_until, MeanFieldState};
use slqsim::metrics::percentage_error;
use slqsim::oracle::{build_generator, exact_metrics, CtmcSpec};
use slqsim::sim::{run_jsq_simulation, run_simulation, QueueSampler};

/// The paper-style grid used by criteria 1-3: loads and back-off ratios at
/// r = 1, mu = 1.
const LOADS: [f64; 3] = [0.5, 0.9, 0.99];
const GAMMA_RATIOS: [f64; 3] = [0.5, 1.0, 10.0];

fn grid_params(d: u32, load: f64, gamma_ratio: f64) -> ModelParams {
    ModelParams {
        lambda: load,
        mu: 1.0,
        gamma: gamma_ratio,
        r: 1.0,
        d,
    }
}

fn base_config(n: u32, m: u32, d: u32, load: f64, gamma: f64, policy: Policy) -> ValidatedConfig {
    let r = m as f64 / n as f64;
    SystemConfig {
        n,
        m,
        d,
        lambda: load * r,
        mu: 1.0,
        gamma,
        policy,
        sampling_mode: SamplingMode::WithoutReplacement,
    }
    .validate()
    .unwrap()
}

fn paper_config(d: u32) -> ValidatedConfig {
    base_config(200, 10, d, 0.9, 1.0, Policy::Slq)
}

#[test]
fn criterion_1_d1_exactness() {
    let mut worst_component = 0.0f64;
    let mut worst_queue = 0.0f64;
    for &load in &LOADS {
        for &gm in &GAMMA_RATIOS {
            let p = grid_params(1, load, gm);
            let prof = slq_equilibrium(&p, DEFAULT_TAIL_TOL).unwrap();
            let rho = p.selection_load();
            let mut expect = 1.0;
            for &v in prof.pi() {
                worst_component = worst_component.max((v - expect).abs());
                expect *= rho;
            }
            worst_queue = worst_queue.max((prof.mean_queue_size() - rho / (1.0 - rho)).abs());
        }
    }
    assert!(
        worst_component < 1e-12,
        "componentwise deviation {worst_component:e}"
    );
    assert!(worst_queue < 1e-9, "mean queue deviation {worst_queue:e}");
    println!(
        "CRITERION 1 PASS: d=1 geometric exact (components {worst_component:.1e}, mean queue {worst_queue:.1e})"
    );
}

#[test]
fn criterion_2_fixed_point_residual() {
    let mut worst = 0.0f64;
    for &d in &[1u32, 2, 3, 5] {
        for &load in &LOADS {
            for &gm in &GAMMA_RATIOS {
                let p = grid_params(d, load, gm);
                let prof = slq_equilibrium(&p, DEFAULT_TAIL_TOL).unwrap();
                let state = MeanFieldState::from_profile(&prof, None);
                let residual = drift_residual(&state, &p, Policy::Slq);
                assert!(
                    residual < 1e-10,
                    "d={d} load={load} gamma={gm}: residual {residual:e}"
                );
                worst = worst.max(residual);
            }
        }
    }
    println!("CRITERION 2 PASS: drift at equilibrium < 1e-10 on the grid (worst {worst:.1e})");
}

#[test]
fn criterion_3_relaxation_agreement() {
    let mut worst_t = 0.0f64;
    for &d in &[1u32, 2, 3, 5] {
        for &load in &LOADS {
            for &gm in &GAMMA_RATIOS {
                let p = grid_params(d, load, gm);
                let prof = slq_equilibrium(&p, DEFAULT_TAIL_TOL).unwrap();
                let target = MeanFieldState::from_profile(&prof, None);
                let state = relax_until(
                    &p,
                    Policy::Slq,
                    |s| s.sup_distance(&target) < 1e-6,
                    1e8,
                )
                .unwrap_or_else(|e| panic!("d={d} load={load} gamma={gm}: {e}"));
                worst_t = worst_t.max(state.t);
            }
        }
    }
    println!(
        "CRITERION 3 PASS: relaxation from empty reaches the equilibrium profile within 1e-6 (slowest at t={worst_t:.0})"
    );
}

struct OracleCase {
    spec: CtmcSpec,
    seed: u64,
}

#[test]
fn criterion_4_oracle_equivalence() {
    let cases = [
        OracleCase {
            spec: CtmcSpec {
                n: 2,
                m: 1,
                d: 1,
                buffer: 40,
                lambda: 0.2,
                mu: 1.0,
                gamma: 1.0,
                sampling_mode: SamplingMode::WithoutReplacement,
            },
            seed: 101,
        },
        OracleCase {
            spec: CtmcSpec {
                n: 2,
                m: 1,
                d: 2,
                buffer: 40,
                lambda: 0.2,
                mu: 1.0,
                gamma: 1.0,
                sampling_mode: SamplingMode::WithoutReplacement,
            },
            seed: 102,
        },
        OracleCase {
            spec: CtmcSpec {
                n: 3,
                m: 2,
                d: 2,
                buffer: 20,
                lambda: 0.15,
                mu: 1.0,
                gamma: 1.0,
                sampling_mode: SamplingMode::WithoutReplacement,
            },
            seed: 103,
        },
    ];
    // 1e6 post-warmup arrivals at 10% warm-up.
    let n_arrivals = 1_111_112u64;
    for case in &cases {
        let spec = &case.spec;
        let gen = build_generator(spec).unwrap();
        let exact = exact_metrics(&gen, &gen.stationary_distribution().unwrap());
        assert!(
            exact.blocking_probability < 1e-8,
            "buffer too small for an unbounded comparison"
        );
        let cfg = SystemConfig {
            n: spec.n as u32,
            m: spec.m as u32,
            d: spec.d as u32,
            lambda: spec.lambda,
            mu: spec.mu,
            gamma: spec.gamma,
            policy: Policy::Slq,
            sampling_mode: spec.sampling_mode,
        }
        .validate()
        .unwrap();
        let sim = run_simulation(&cfg, case.seed, n_arrivals, 0.1);
        let checks = [
            (
                "mean queue",
                sim.mean_queue_per_entity.mean,
                exact.mean_queue_per_flow,
                sim.mean_queue_per_entity.std_err,
            ),
            (
                "busy fraction",
                sim.busy_fraction.mean,
                exact.busy_fraction,
                sim.busy_fraction.std_err,
            ),
            (
                "response time",
                sim.response.mean,
                exact.response_time,
                sim.response.std_err,
            ),
        ];
        for (name, got, want, se) in checks {
            let dev = (got - want).abs();
            assert!(
                dev <= 3.0 * se,
                "n={} m={} d={}: {name} {got} vs exact {want} (|dev| {dev:.3e} > 3se {:.3e})",
                spec.n,
                spec.m,
                spec.d,
                3.0 * se
            );
        }
    }
    println!("CRITERION 4 PASS: simulated metrics within 3 standard errors of the exact chain on all {} specs", cases.len());
}

#[test]
fn criterion_5_headline_error_below_5_percent() {
    let cfg = paper_config(2);
    let prof = slq_equilibrium(&cfg.params(), DEFAULT_TAIL_TOL).unwrap();
    let predicted_wait = prof.mean_queue_size() / cfg.lambda;
    let sim = run_simulation(&cfg, 20_240_101, 10_000_000, 0.1);
    let err = percentage_error(sim.response.mean, predicted_wait, cfg.mu);
    assert!(err < 5.0, "percentage error {err:.3}%");
    println!(
        "CRITERION 5 PASS: paper baseline error {err:.3}% < 5% (sim {:.4} s vs prediction {:.4} s)",
        sim.response.mean,
        predicted_wait + 1.0
    );
}

fn mean_response_over_seeds(cfg: &ValidatedConfig, seeds: &[u64], arrivals: u64) -> f64 {
    let total: f64 = seeds
        .iter()
        .map(|&s| run_simulation(cfg, s, arrivals, 0.1).response.mean)
        .sum();
    total / seeds.len() as f64
}

const SEEDS: [u64; 3] = [11, 12, 13];
const QUALITATIVE_ARRIVALS: u64 = 10_000_000;

#[test]
fn criterion_6a_choice_count_dominated_by_first_step() {
    let w: Vec<f64> = (1..=8)
        .map(|d| mean_response_over_seeds(&paper_config(d), &SEEDS, QUALITATIVE_ARRIVALS))
        .collect();
    assert!(w[1] < w[0], "w(d=2) = {} !< w(d=1) = {}", w[1], w[0]);
    let first_drop = w[0] - w[1];
    for k in 1..7 {
        let drop = w[k] - w[k + 1];
        assert!(
            first_drop > drop,
            "drop d=1->2 ({first_drop:.3}) must exceed d={}->{} ({drop:.3})",
            k + 1,
            k + 2
        );
    }
    println!(
        "CRITERION 6a PASS: response times over d=1..8: {:?} (first drop {:.2} s dominates)",
        w.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>(),
        first_drop
    );
}

#[test]
fn criterion_6b_backoff_rate_monotonicity() {
    let gammas = [0.5, 1.0, 2.0, 4.0, 8.0];
    let w: Vec<f64> = gammas
        .iter()
        .map(|&g| {
            mean_response_over_seeds(
                &base_config(200, 10, 2, 0.9, g, Policy::Slq),
                &SEEDS,
                QUALITATIVE_ARRIVALS,
            )
        })
        .collect();
    for k in 0..w.len() - 1 {
        assert!(
            w[k + 1] < w[k],
            "response must decrease in gamma: {:?} at {:?}",
            w,
            gammas
        );
    }
    println!("CRITERION 6b PASS: response decreases along gamma {gammas:?}: {w:?}");
}

#[test]
fn criterion_6c_server_ratio_monotonicity() {
    let ms = [5u32, 10, 20, 40];
    let w: Vec<f64> = ms
        .iter()
        .map(|&m| {
            mean_response_over_seeds(
                &base_config(200, m, 2, 0.9, 1.0, Policy::Slq),
                &SEEDS,
                QUALITATIVE_ARRIVALS,
            )
        })
        .collect();
    for k in 0..w.len() - 1 {
        assert!(
            w[k + 1] < w[k],
            "response must decrease in m at matched load: {w:?} at {ms:?}"
        );
    }
    println!("CRITERION 6c PASS: response decreases along m {ms:?} at matched load: {w:?}");
}

#[test]
fn criterion_6d_jsq_beats_slq_at_matched_load() {
    let slq = mean_response_over_seeds(&paper_config(2), &SEEDS, QUALITATIVE_ARRIVALS);
    let jsq_cfg = base_config(200, 10, 2, 0.9, 1.0, Policy::Jsq);
    let jsq: f64 = SEEDS
        .iter()
        .map(|&s| {
            run_jsq_simulation(&jsq_cfg, s, QUALITATIVE_ARRIVALS, 0.1)
                .response
                .mean
        })
        .sum::<f64>()
        / SEEDS.len() as f64;
    assert!(jsq < slq, "jsq {jsq:.3} s must beat slq {slq:.3} s");
    println!("CRITERION 6d PASS: jsq(2) {jsq:.3} s < slq(2) {slq:.3} s at matched load 0.9");
}

#[test]
fn criterion_7_density_total_variation() {
    for (load, tol) in [(0.5, 0.02), (0.9, 0.02), (0.99, 0.08)] {
        let cfg = base_config(200, 10, 2, load, 1.0, Policy::Slq);
        let prof = slq_equilibrium(&cfg.params(), DEFAULT_TAIL_TOL).unwrap();
        let analytic = prof.density();
        let sim = run_simulation(&cfg, 777, 10_000_000, 0.1);
        let levels = analytic.len().max(sim.level_density.len());
        let mut tv = 0.0;
        for i in 0..levels {
            let a = analytic.get(i).copied().unwrap_or(0.0);
            let s = sim.level_density.get(i).copied().unwrap_or(0.0);
            tv += (a - s).abs();
        }
        tv *= 0.5;
        assert!(
            tv < tol,
            "load {load}: total variation {tv:.4} exceeds {tol}"
        );
        println!("CRITERION 7 PASS: load {load} density TV distance {tv:.4} < {tol}");
    }
}

#[test]
fn criterion_8_sampler_selected_maximum_law() {
    use rand::SeedableRng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    // Fixed synthetic tail: X = (1, 0.6, 0.3, 0.1, 0) over 100 queues.
    let mut lengths = Vec::new();
    lengths.extend(std::iter::repeat_n(0u32, 40));
    lengths.extend(std::iter::repeat_n(1u32, 30));
    lengths.extend(std::iter::repeat_n(2u32, 20));
    lengths.extend(std::iter::repeat_n(3u32, 10));
    let tail = [1.0f64, 0.6, 0.3, 0.1, 0.0];
    for d in [2usize, 3, 5] {
        let probs: Vec<f64> = (0..4)
            .map(|i| (1.0 - tail[i + 1]).powi(d as i32) - (1.0 - tail[i]).powi(d as i32))
            .collect();
        let mut sampler = QueueSampler::new(lengths.len(), d, SamplingMode::WithReplacement);
        let mut s_rng = rand_chacha::ChaCha8Rng::seed_from_u64(880 + d as u64);
        let mut t_rng = rand_chacha::ChaCha8Rng::seed_from_u64(990 + d as u64);
        let trials = 1_000_000u32;
        let mut counts = [0u32; 4];
        for _ in 0..trials {
            match sampler.sample_longest(&lengths, &mut s_rng, &mut t_rng) {
                None => counts[0] += 1,
                Some(idx) => counts[lengths[idx as usize] as usize] += 1,
            }
        }
        let chi2: f64 = counts
            .iter()
            .zip(&probs)
            .map(|(&c, &p)| {
                let e = p * trials as f64;
                (c as f64 - e) * (c as f64 - e) / e
            })
            .sum();
        let crit = ChiSquared::new(3.0).unwrap().inverse_cdf(0.999);
        assert!(chi2 < crit, "d={d}: chi2 {chi2:.2} >= {crit:.2}");
        println!("CRITERION 8 PASS: d={d} selected-maximum chi2 {chi2:.2} < {crit:.2} at 1e6 draws");
    }
}

#[test]
fn criterion_9_littles_law_on_headline_run() {
    let cfg = paper_config(2);
    let sim = run_simulation(&cfg, 20_240_101, 10_000_000, 0.1);
    let lhs = sim.jobs_in_system_avg;
    let rhs = cfg.n as f64 * cfg.lambda * sim.response.mean;
    let rel = (lhs - rhs).abs() / rhs;
    assert!(rel < 0.01, "jobs {lhs:.3} vs lambda*W {rhs:.3} (rel {rel:.4})");
    println!(
        "CRITERION 9 PASS: internal Little's law, jobs {lhs:.3} vs n*lambda*W {rhs:.3} (rel dev {:.3}%)",
        rel * 100.0
    );
}
