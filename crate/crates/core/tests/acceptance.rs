//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use mfmarl_core::harness::{run_error_vs_n, summarize, ExperimentConfig, SummaryRow};
use mfmarl_core::interaction::SinkhornOptions;
use mfmarl_core::meanfield::{mf_step, mf_value, theorem1_bound, BoundInputs};
use mfmarl_core::model::{
    build_firm_env, firm_reward, firm_transition_distribution, AffineRewardSpec, ClosureEnv,
    FirmModelConfig, SAFETY_FACTOR,
};
use mfmarl_core::nagent::{estimate_v_marl, rollout, AgentSystemState};
use mfmarl_core::npg::{AdvantageEstimator, OccupancySampler};
use mfmarl_core::policy::{estimate_lipschitz_lq, PolicyParams};
use mfmarl_core::rng::{seeded, substream};
use mfmarl_core::{EnvModel, InteractionMatrix, Policy, PolicyConfig, Simplex, SoftmaxPolicy, TabularPolicy};
use rand::Rng;

type Outcome = Result<String, String>;

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_policy(q: usize, hidden: usize, scale: f64, seed: u64) -> SoftmaxPolicy {
    let cfg = PolicyConfig::new(q, 2, hidden).unwrap();
    let mut rng = seeded(seed);
    let params: Vec<f64> = (0..cfg.dim()).map(|_| rng.gen_range(-scale..=scale)).collect();
    SoftmaxPolicy::new(cfg, PolicyParams::new(params).unwrap()).unwrap()
}

fn gradient_vs_finite_differences() -> Outcome {
    let q = 10;
    let cfg = PolicyConfig::new(q, 2, 32).unwrap();
    let mut rng = seeded(1);
    let h = 1e-5;
    let mut worst = 0.0_f64;
    for k in 0..100 {
        let pol = random_policy(q, 32, 0.5, 100 + k);
        let x = rng.gen_range(0..q);
        let u = rng.gen_range(0..2);
        let mu = Simplex::random(q, &mut rng);
        let analytic = pol.log_prob_gradient(x, &mu, u).unwrap();
        let base = pol.params().as_slice().to_vec();
        let logp = |p: &[f64]| {
            let pol = SoftmaxPolicy::new(cfg, PolicyParams::new(p.to_vec()).unwrap()).unwrap();
            pol.probabilities(x, &mu).unwrap().get(u).ln()
        };
        let mut numeric = vec![0.0; base.len()];
        let mut p = base.clone();
        for i in 0..base.len() {
            p[i] = base[i] + h;
            let up = logp(&p);
            p[i] = base[i] - h;
            let down = logp(&p);
            p[i] = base[i];
            numeric[i] = (up - down) / (2.0 * h);
        }
        let diff = l2(&analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect::<Vec<_>>());
        let scale = l2(&analytic).max(l2(&numeric)).max(1e-8);
        worst = worst.max(diff / scale);
    }
    check(worst <= 1e-4, format!("max relative error {worst:.3e} over 100 inputs (tol 1e-4)"))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Independent double sum over every (x, u) for the firm model.
fn firm_double_sum(cfg: &FirmModelConfig, pol: &dyn Policy, mu: &Simplex) -> (Vec<f64>, f64) {
    let q = cfg.q;
    let mu_bar: f64 = (0..q).map(|s| (s + 1) as f64 * mu.get(s)).sum();
    let mut next = vec![0.0; q];
    let mut reward = 0.0;
    for x in 0..q {
        let pi = pol.action_distribution(x, mu);
        for u in 0..2 {
            let wgt = pi.get(u) * mu.get(x);
            let law = firm_transition_distribution(cfg, x + 1, u, mu_bar).unwrap();
            for (n, p) in next.iter_mut().zip(law.as_slice()) {
                *n += p * wgt;
            }
            reward += firm_reward(cfg, x + 1, u, mu).unwrap() * wgt;
        }
    }
    (next, reward)
}

fn brute_force_dynamics() -> Outcome {
    let cfg = FirmModelConfig { q: 3, ..Default::default() };
    let env = build_firm_env(&cfg, 0.9).unwrap();
    let mut worst = 0.0_f64;
    let invest = TabularPolicy::constant(3, Simplex::point_mass(2, 1).unwrap()).unwrap();
    let pm = Simplex::point_mass(3, 0).unwrap();
    let (next, r) = firm_double_sum(&cfg, &invest, &pm);
    let s = mf_step(&env, &invest, &pm).unwrap();
    worst = worst.max(l1(s.next_mu.as_slice(), &next)).max((s.reward - r).abs());
    let pol = random_policy(3, 16, 1.0, 7);
    let mut rng = seeded(2);
    for _ in 0..50 {
        let mu = Simplex::random(3, &mut rng);
        let (next, r) = firm_double_sum(&cfg, &pol, &mu);
        let s = mf_step(&env, &pol, &mu).unwrap();
        worst = worst.max(l1(s.next_mu.as_slice(), &next)).max((s.reward - r).abs());
    }
    check(worst <= 1e-12, format!("max deviation {worst:.3e} over 50 random mu (tol 1e-12)"))
}

/// Exact expected return of a two-agent system by branch enumeration.
fn enumerate_two_agents(env: &dyn EnvModel, w: &InteractionMatrix, pol: &dyn Policy, xs: [usize; 2], left: usize) -> f64 {
    let (nx, nu) = (env.n_states(), env.n_actions());
    let view = |items: [usize; 2], size: usize, i: usize| {
        let mut v = vec![0.0; size];
        v[items[0]] += w.weight(i, 0);
        v[items[1]] += w.weight(i, 1);
        Simplex::new(v).unwrap()
    };
    let mus = [view(xs, nx, 0), view(xs, nx, 1)];
    let pis = [pol.action_distribution(xs[0], &mus[0]), pol.action_distribution(xs[1], &mus[1])];
    let mut total = 0.0;
    for u0 in 0..nu {
        for u1 in 0..nu {
            let pu = pis[0].get(u0) * pis[1].get(u1);
            if pu == 0.0 {
                continue;
            }
            let us = [u0, u1];
            let nus = [view(us, nu, 0), view(us, nu, 1)];
            let r = 0.5 * (env.reward(xs[0], u0, &mus[0], &nus[0]) + env.reward(xs[1], u1, &mus[1], &nus[1]));
            let mut cont = 0.0;
            if left > 0 {
                let p0 = env.transition(xs[0], u0, &mus[0], &nus[0]);
                let p1 = env.transition(xs[1], u1, &mus[1], &nus[1]);
                for y0 in 0..nx {
                    for y1 in 0..nx {
                        let p = p0.get(y0) * p1.get(y1);
                        if p > 0.0 {
                            cont += p * enumerate_two_agents(env, w, pol, [y0, y1], left - 1);
                        }
                    }
                }
            }
            total += pu * (r + env.gamma() * cont);
        }
    }
    total
}

fn two_agent_enumeration() -> Outcome {
    let env = build_firm_env(&FirmModelConfig { q: 2, ..Default::default() }, 0.9).unwrap();
    let w = InteractionMatrix::from_rows(&[vec![0.7, 0.3], vec![0.3, 0.7]], 1e-12).unwrap();
    let pol = random_policy(2, 8, 1.0, 3);
    let init = [0, 1];
    let exact = enumerate_two_agents(&env, &w, &pol, init, 2);
    let (mean, se) = estimate_v_marl(&env, &w, &pol, &init, 2, 100_000, &mut seeded(4)).unwrap();
    let z = (mean - exact).abs() / se;
    check(z <= 3.0, format!("exact {exact:.6}, Monte Carlo {mean:.6} +- {se:.2e} ({z:.2} sigma, tol 3)"))
}

fn concentration() -> Outcome {
    let env = build_firm_env(&FirmModelConfig::default(), 0.9).unwrap();
    let pol = SoftmaxPolicy::initialize(PolicyConfig::new(10, 2, 32).unwrap(), 11).unwrap();
    let spec = env.affine_spec().unwrap();
    let c_r = spec.b_l1() + spec.constants().m_f;
    let c_p = 2.0 + env.lipschitz_p();
    let (sx, su) = (10f64.sqrt(), 2f64.sqrt());
    let runs = 200;
    let mut worst = [0.0_f64; 3];
    let mut ok = true;
    for n in [10usize, 100] {
        let w = InteractionMatrix::ring_k_neighbor(n, 5).unwrap();
        let mut acc = [[0.0; 3]; 10];
        for run in 0..runs {
            let mut rng = substream(5, run);
            let init = AgentSystemState::sample(n, &Simplex::uniform(10).unwrap(), &mut rng).unwrap();
            let rec = rollout(&env, &w, &pol, &init.states, 10, &mut rng).unwrap();
            for t in 0..10 {
                let s = mf_step(&env, &pol, &rec.mu_n[t]).unwrap();
                let mean_r = rec.rewards[t].iter().sum::<f64>() / n as f64;
                acc[t][0] += l1(rec.nu_n[t].as_slice(), s.nu.as_slice());
                acc[t][1] += l1(rec.mu_n[t + 1].as_slice(), s.next_mu.as_slice());
                acc[t][2] += (mean_r - s.reward).abs();
            }
        }
        let rn = (n as f64).sqrt();
        let bounds = [su / rn, c_p * (sx + su) / rn, c_r * su / rn];
        for step in &acc {
            for k in 0..3 {
                let ratio = step[k] / runs as f64 / bounds[k];
                worst[k] = worst[k].max(ratio);
                ok &= ratio <= 1.0;
            }
        }
    }
    check(
        ok,
        format!(
            "max E/bound: actions {:.3}, states {:.3}, rewards {:.3} (must be <= 1)",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn cancellation_identity() -> Outcome {
    let cfg = FirmModelConfig::default();
    let env = build_firm_env(&cfg, 0.9).unwrap();
    let a = env.affine_spec().unwrap().a.clone();
    let pol = SoftmaxPolicy::initialize(PolicyConfig::new(10, 2, 32).unwrap(), 2).unwrap();
    let mut rng = seeded(6);
    let n = 40;
    let kinds = [
        ("ring", InteractionMatrix::ring_k_neighbor(n, 5).unwrap()),
        ("uniform", InteractionMatrix::uniform(n).unwrap()),
        (
            "sinkhorn",
            InteractionMatrix::sinkhorn_random(n, &mut rng, SinkhornOptions { tol: 1e-14, max_iter: 10_000 }).unwrap(),
        ),
    ];
    let mut worst = 0.0_f64;
    let mut steps = 0;
    for (_, w) in &kinds {
        for episode in 0..5 {
            let mut r = substream(7, episode);
            let init = AgentSystemState::sample(n, &Simplex::uniform(10).unwrap(), &mut r).unwrap();
            let rec = rollout(&env, w, &pol, &init.states, 30, &mut r).unwrap();
            for (t, xs) in rec.states.iter().enumerate() {
                let avg = (0..n)
                    .map(|i| w.weighted_view(i, xs, 10).unwrap().expectation(&a).unwrap())
                    .sum::<f64>()
                    / n as f64;
                worst = worst.max((avg - rec.mu_n[t].expectation(&a).unwrap()).abs());
                steps += 1;
            }
        }
    }
    check(worst <= 1e-12, format!("max deviation {worst:.3e} over {steps} steps, ring/uniform/sinkhorn (tol 1e-12)"))
}

fn random_close_pair<R: Rng>(n: usize, k: usize, rng: &mut R) -> (Simplex, Simplex) {
    let p = Simplex::random(n, rng);
    let q = if k % 2 == 0 {
        Simplex::random(n, rng)
    } else {
        let t = 10f64.powf(-3.0 * rng.gen::<f64>());
        p.mix(&Simplex::random(n, rng), t).unwrap()
    };
    (p, q)
}

fn lipschitz_suite() -> Outcome {
    let env = build_firm_env(&FirmModelConfig::default(), 0.9).unwrap();
    let pol = random_policy(10, 32, 1.0, 8);
    let l_q = estimate_lipschitz_lq(&pol, 10_000, &mut seeded(9)) * SAFETY_FACTOR;
    let consts = env.affine_spec().unwrap().constants();
    let inp = BoundInputs {
        l_p: env.lipschitz_p(),
        l_q,
        l_r: consts.l_r,
        m_r: consts.m_r,
        m_f: consts.m_f,
        b_l1: 0.0,
        gamma: 0.9,
        n_agents: 1,
        n_states: 10,
        n_actions: 2,
    };
    let mut worst = [0.0_f64; 3];
    let mut rng = seeded(10);
    for k in 0..10_000 {
        let (m1, m2) = random_close_pair(10, k, &mut rng);
        let d = l1(m1.as_slice(), m2.as_slice());
        if d == 0.0 {
            continue;
        }
        let s1 = mf_step(&env, &pol, &m1).unwrap();
        let s2 = mf_step(&env, &pol, &m2).unwrap();
        worst[0] = worst[0].max(l1(s1.nu.as_slice(), s2.nu.as_slice()) / d / (1.0 + l_q));
        worst[1] = worst[1].max(l1(s1.next_mu.as_slice(), s2.next_mu.as_slice()) / d / inp.s_p());
        worst[2] = worst[2].max((s1.reward - s2.reward).abs() / d / inp.s_r());
    }
    check(
        worst.iter().all(|w| *w <= 1.0),
        format!(
            "max ratio/constant: nu {:.3}, P_mf {:.3}, r_mf {:.3} (L_Q = {l_q:.4}, must be <= 1)",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn advantage_unbiasedness() -> Outcome {
    const G: f64 = 0.8;
    const R: [[f64; 2]; 2] = [[1.0, -0.3], [0.2, 1.5]];
    const P: [[[f64; 2]; 2]; 2] = [[[0.8, 0.2], [0.1, 0.9]], [[0.6, 0.4], [0.35, 0.65]]];
    const PI: [[f64; 2]; 2] = [[0.3, 0.7], [0.55, 0.45]];
    let env = ClosureEnv::new(2, 2, G, |x, u, _, _| R[x][u], |x, u, _, _| Simplex::new(P[x][u].to_vec()).unwrap()).unwrap();
    let pol = TabularPolicy::new(PI.iter().map(|p| Simplex::new(p.to_vec()).unwrap()).collect()).unwrap();
    // exact V by value iteration, then Q
    let mut v = [0.0; 2];
    for _ in 0..2000 {
        let mut nv = [0.0; 2];
        for x in 0..2 {
            for u in 0..2 {
                nv[x] += PI[x][u] * (R[x][u] + G * (P[x][u][0] * v[0] + P[x][u][1] * v[1]));
            }
        }
        v = nv;
    }
    let q = |x: usize, u: usize| R[x][u] + G * (P[x][u][0] * v[0] + P[x][u][1] * v[1]);
    let mu0 = Simplex::new(vec![0.4, 0.6]).unwrap();
    let mut sampler = OccupancySampler::new(&env, &pol, &mu0, AdvantageEstimator::Reconstructed).unwrap();
    let mut rng = seeded(1);
    let mut acc = [[(0.0, 0.0, 0.0); 2]; 2];
    for _ in 0..100_000 {
        let s = sampler.sample(&mut rng);
        let b = &mut acc[s.x][s.u];
        b.0 += s.a_hat;
        b.1 += s.a_hat * s.a_hat;
        b.2 += 1.0;
    }
    let mut worst = 0.0_f64;
    for x in 0..2 {
        for u in 0..2 {
            let (s, s2, n) = acc[x][u];
            let mean = s / n;
            let se = ((s2 / n - mean * mean) / n).sqrt();
            worst = worst.max((mean - (q(x, u) - v[x])).abs() / se);
        }
    }
    check(worst <= 3.0, format!("max |mean - (Q - V)| = {worst:.2} sigma over 4 buckets (tol 3)"))
}

fn bound_on_synthetic_env() -> Outcome {
    let eps = 0.05;
    let kernel = [[[0.9, 0.1], [0.3, 0.7]], [[0.2, 0.8], [0.6, 0.4]]];
    let spec = AffineRewardSpec::new(vec![0.3, -0.2], vec![0.1, -0.1], vec![vec![0.5, 0.0], vec![-0.2, 0.4]]).unwrap();
    let mut lines = Vec::new();
    let mut ok = true;
    for (gamma, label) in [(0.9, "tabular"), (0.8, "network")] {
        let env = ClosureEnv::affine(spec.clone(), gamma, move |x, u, mu, _| {
            Simplex::new(kernel[x][u].to_vec()).unwrap().mix(mu, eps).unwrap()
        })
        .unwrap()
        .with_lipschitz_p(eps);
        let (pol, l_q): (Box<dyn Policy>, f64) = if label == "tabular" {
            (Box::new(TabularPolicy::constant(2, Simplex::new(vec![0.35, 0.65]).unwrap()).unwrap()), 0.0)
        } else {
            let p = SoftmaxPolicy::initialize(PolicyConfig::new(2, 2, 8).unwrap(), 13).unwrap();
            let l_q = estimate_lipschitz_lq(&p, 10_000, &mut seeded(14)) * SAFETY_FACTOR;
            (Box::new(p), l_q)
        };
        for n in [10usize, 100, 1000] {
            let inp = BoundInputs::from_env(&env, l_q, n).unwrap();
            let bound = match theorem1_bound(&inp) {
                Ok(b) => b,
                Err(e) => return Err(format!("{label} gamma={gamma}: {e}")),
            };
            let mut rng = seeded(n as u64 + 1000);
            let w = InteractionMatrix::ring_k_neighbor(n, 5).unwrap();
            let init = AgentSystemState::sample(n, &Simplex::uniform(2).unwrap(), &mut rng).unwrap();
            let emp = init.empirical_states(2).unwrap();
            let (v_mf, traj) = mf_value(&env, pol.as_ref(), &emp, 1e-3).unwrap();
            let (m, se) = estimate_v_marl(&env, &w, pol.as_ref(), &init.states, traj.horizon, 100, &mut rng).unwrap();
            let gap = (m - v_mf).abs();
            ok &= gap <= bound + 3.0 * se;
            lines.push(format!("{label} N={n}: gap {gap:.4} vs bound {bound:.2}"));
        }
    }
    check(ok, lines.join("; "))
}

fn error_trend(summary: &[SummaryRow]) -> (bool, f64, String) {
    let first = summary.first().unwrap();
    let last = summary.last().unwrap();
    let decreasing = last.mean_error < first.mean_error;
    let scaled: Vec<f64> = summary.iter().map(|s| s.mean_error_sqrt_n).collect();
    let spread = scaled.iter().cloned().fold(f64::MIN, f64::max) / scaled.iter().cloned().fold(f64::MAX, f64::min);
    let errors: Vec<String> = summary.iter().map(|s| format!("{}:{:.3}%", s.n, s.mean_error)).collect();
    (decreasing, spread, errors.join(" "))
}

fn error_vs_n_affine(csv_bytes: &mut Vec<u8>) -> Outcome {
    let cfg = ExperimentConfig {
        threads: Some(4),
        ..Default::default()
    };
    let outcome = run_error_vs_n(&cfg).map_err(|e| e.to_string())?;
    if !outcome.result.skipped.is_empty() {
        return Err(format!("{} cells skipped", outcome.result.skipped.len()));
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("error_vs_n.csv");
    outcome.result.write_csv(&path).unwrap();
    *csv_bytes = std::fs::read(&path).unwrap();
    let summary = summarize(&outcome.result.rows).unwrap();
    let (decreasing, spread, errs) = error_trend(&summary);
    check(
        decreasing && spread < 3.0,
        format!("mean error {errs}; error(200) < error(10): {decreasing}; mean*sqrt(N) spread {spread:.2}x (tol < 3x)"),
    )
}

fn figure_two() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for sigma in [1.1, 1.2] {
        let cfg = ExperimentConfig {
            model: FirmModelConfig { sigma, ..Default::default() },
            ..Default::default()
        };
        let outcome = run_error_vs_n(&cfg).map_err(|e| e.to_string())?;
        let expected = cfg.n_list.len() * cfg.seeds;
        let complete = outcome.result.rows.len() == expected;
        let summary = summarize(&outcome.result.rows).unwrap();
        let (decreasing, _, errs) = error_trend(&summary);
        ok &= complete && decreasing;
        parts.push(format!("sigma={sigma}: {errs}, rows {}/{expected}, error(200) < error(10): {decreasing}", outcome.result.rows.len()));
    }
    check(ok, parts.join("; "))
}

fn reproducibility(parallel_csv: &[u8]) -> Outcome {
    let cfg = ExperimentConfig {
        threads: Some(1),
        ..Default::default()
    };
    let outcome = run_error_vs_n(&cfg).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("single.csv");
    outcome.result.write_csv(&path).unwrap();
    let single = std::fs::read(&path).unwrap();
    check(
        !single.is_empty() && single == parallel_csv,
        format!("single-threaded CSV {} bytes, 4-thread CSV {} bytes, identical: {}", single.len(), parallel_csv.len(), single == parallel_csv),
    )
}

fn main() -> ExitCode {
    let mut affine_csv = Vec::new();
    let mut results: Vec<(&str, Outcome, f64)> = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let started = Instant::now();
        let outcome = f();
        let secs = started.elapsed().as_secs_f64();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("[{tag}] {name}: {detail} ({secs:.1}s)");
        results.push((name, outcome, secs));
    };
    run("1 policy gradient vs finite differences", &mut gradient_vs_finite_differences);
    run("2 mean-field dynamics vs brute-force double sum", &mut brute_force_dynamics);
    run("3 two-agent rollout vs branch enumeration", &mut two_agent_enumeration);
    run("4 concentration of population quantities", &mut concentration);
    run("5 doubly stochastic cancellation", &mut cancellation_identity);
    run("6 Lipschitz constants of mean-field maps", &mut lipschitz_suite);
    run("7 advantage estimator unbiasedness", &mut advantage_unbiasedness);
    run("8 approximation bound on synthetic env", &mut bound_on_synthetic_env);
    run("9 error vs N, affine reward", &mut || error_vs_n_affine(&mut affine_csv));
    run("10 error vs N, sigma = 1.1 and 1.2", &mut figure_two);
    let parallel = affine_csv.clone();
    run("11 byte-identical results across thread counts", &mut || reproducibility(&parallel));
    let failed = results.iter().filter(|(_, o, _)| o.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
