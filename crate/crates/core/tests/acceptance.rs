//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when a criterion fails that is not listed in `KNOWN_FAILURES`.
//!
//! Run alone with `cargo test --release --test acceptance`.

use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;

use splitrank::analysis::{analyze, AnalysisConfig};
use splitrank::config::RunConfig;
use splitrank::outcome::{compute_ite, fit_outcome_model, Family, ModelSpec, Params};
use splitrank::ranking::{rank_rmse, rank_values, select_top_percentile};
use splitrank::report::emit_report;
use splitrank::run::run_pipeline;
use splitrank::sensitivity::{
    arm_posterior, confounding_overlap, generate_confounder, overlap_fraction, placebo_test, ConfounderConfig,
    PlaceboOptions,
};
use splitrank::simulate::{ground_truth_rank, simulate_cohort, SimConfig, SimMode};
use splitrank::stats::spearman;
use splitrank::validation::{default_k_grid, simulate_campaign, split_groups, validate_ranking_splits, wald_2sls, DEFAULT_EXPOSURE};
use splitrank::{rng, Analysis, Dataset, SimOutput};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Criteria that do not hold for this implementation; see README.
/// They are still evaluated and printed.
const KNOWN_FAILURES: &[u8] = &[7];

struct Verdict {
    id: u8,
    pass: bool,
    detail: String,
}

fn sim(mode: SimMode, seed: u64) -> SimOutput {
    simulate_cohort(&SimConfig {
        mode,
        seed,
        ..Default::default()
    })
    .expect("simulation")
}

fn iptw(family: Family) -> AnalysisConfig {
    AnalysisConfig::new(ModelSpec::new(family), true)
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn arm_weight_means(a: &Analysis, d: &Dataset) -> [f64; 2] {
    let mut s = [0.0; 2];
    let mut c = [0.0; 2];
    for (&i, &w) in a.retained.iter().zip(&a.weights) {
        let arm = d.treatment()[i] as usize;
        s[arm] += w;
        c[arm] += 1.0;
    }
    [s[0] / c[0], s[1] / c[1]]
}

struct ModeRuns {
    rmse: Vec<f64>,
    spearman: Vec<f64>,
    weight_means: Vec<[f64; 2]>,
    seconds: Vec<f64>,
}

fn run_mode(mode: SimMode) -> ModeRuns {
    let mut out = ModeRuns {
        rmse: Vec::new(),
        spearman: Vec::new(),
        weight_means: Vec::new(),
        seconds: Vec::new(),
    };
    for seed in SEEDS {
        let s = sim(mode, seed);
        let truth = ground_truth_rank(&s).unwrap();
        let t = Instant::now();
        let a = analyze(&s.observed, &iptw(Family::LinearWls)).unwrap();
        out.seconds.push(t.elapsed().as_secs_f64());
        let est = a.levels();
        out.rmse.push(rank_rmse(&est, &truth).unwrap());
        let ef: Vec<f64> = est.iter().map(|&l| l as f64).collect();
        let tf: Vec<f64> = truth.iter().map(|&l| l as f64).collect();
        out.spearman.push(spearman(&ef, &tf));
        out.weight_means.push(arm_weight_means(&a, &s.observed));
    }
    out
}

fn criterion_1(clean: &ModeRuns) -> Verdict {
    let m = mean(&clean.rmse);
    let slowest = clean.seconds.iter().cloned().fold(0.0, f64::max);
    Verdict {
        id: 1,
        pass: m <= 0.3 && slowest < 60.0,
        detail: format!(
            "clean IPTW-LR rank RMSE {} mean {m:.3} (<= 0.3); slowest fit {slowest:.2}s (< 60s)",
            fmt(&clean.rmse)
        ),
    }
}

fn criterion_2(clean: &ModeRuns, conf: &ModeRuns) -> Verdict {
    let above = clean.rmse.iter().zip(&conf.rmse).all(|(c, x)| x > c);
    let m = mean(&conf.rmse);
    Verdict {
        id: 2,
        pass: above && (0.15..=0.6).contains(&m),
        detail: format!(
            "confounded RMSE {} mean {m:.3} (in [0.15, 0.6]); above matched clean on every seed: {above}",
            fmt(&conf.rmse)
        ),
    }
}

fn criterion_3(neg: &ModeRuns) -> Verdict {
    let m = mean(&neg.rmse);
    let reversed = neg.spearman.iter().all(|&r| r < 0.0);
    Verdict {
        id: 3,
        pass: reversed && (1.4..=2.2).contains(&m),
        detail: format!(
            "negative compliance RMSE {} mean {m:.3} (in [1.4, 2.2]); Spearman {} all < 0: {reversed}",
            fmt(&neg.rmse),
            fmt(&neg.spearman)
        ),
    }
}

fn criterion_4() -> Verdict {
    let s = sim(SimMode::Clean, 0);
    let truth = ground_truth_rank(&s).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, family) in [("LR", Family::LinearWls), ("SVR", Family::SvrLinear)] {
        let cfg = iptw(family);
        let base = analyze(&s.observed, &cfg).unwrap();
        let opts = PlaceboOptions {
            bootstrap: 200,
            seed: rng::derive_seed(0, "placebo"),
        };
        let p = placebo_test(&s.observed, &cfg, &base.levels(), &opts).unwrap();
        let vs_truth = rank_rmse(&p.levels, &truth).unwrap();
        let ok = p.ate_estimate.abs() <= 2.0 * p.ate_se && vs_truth >= 1.0;
        pass &= ok;
        parts.push(format!(
            "{name}: ATE {:.3} SE {:.3} (|ATE| <= 2 SE), RMSE vs truth {vs_truth:.3} (>= 1.0)",
            p.ate_estimate, p.ate_se
        ));
    }
    Verdict {
        id: 4,
        pass,
        detail: parts.join("; "),
    }
}

fn criterion_5(modes: &[(&str, &ModeRuns)]) -> Verdict {
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for (_, m) in modes {
        for w in &m.weight_means {
            for v in w {
                worst = worst.max((v - 1.0).abs());
                n += 1;
            }
        }
    }
    Verdict {
        id: 5,
        pass: worst <= 0.05,
        detail: format!("{n} arm means over {} cohorts, max |mean - 1| = {worst:.4} (<= 0.05)", n / 2),
    }
}

fn criterion_6() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let s = sim(SimMode::Confounded, seed);
        let a = analyze(&s.observed, &iptw(Family::LinearWls)).unwrap();
        let train = s.observed.subset(&a.retained);
        let b = splitrank::propensity::balance_report(&train, &a.weights, 0.2).unwrap();
        let ok = b.mean_after() < b.mean_before() && b.fraction_improved() >= 0.9;
        pass &= ok;
        parts.push(format!(
            "seed {seed}: {:.4} -> {:.4}, {:.0}% improved",
            b.mean_before(),
            b.mean_after(),
            100.0 * b.fraction_improved()
        ));
    }
    Verdict {
        id: 6,
        pass,
        detail: parts.join("; "),
    }
}

fn criterion_7() -> Verdict {
    let s = sim(SimMode::Clean, 0);
    let configs = ConfounderConfig::defaults();
    let mut means = Vec::new();
    let mut parts = Vec::new();
    for (name, family) in [("LR", Family::LinearWls), ("SVR", Family::SvrLinear)] {
        let cfg = iptw(family);
        let base = analyze(&s.observed, &cfg).unwrap();
        let recs = confounding_overlap(&s.observed, &cfg, &base, &configs, 5, 0).unwrap();
        let rm: Vec<f64> = recs.iter().map(|r| r.rank_rmse).collect();
        let m = mean(&rm);
        means.push(m);
        parts.push(format!("{name} mean baseline-vs-confounded RMSE {m:.3} over {} runs", rm.len()));
    }
    Verdict {
        id: 7,
        pass: means[0] < means[1],
        detail: format!("{} (need LR < SVR)", parts.join(", ")),
    }
}

fn criterion_8() -> Verdict {
    let mut pass = true;
    let mut worst_z: f64 = 0.0;
    let mut separated_all = true;
    for seed in SEEDS {
        let e = simulate_campaign::<f64>(
            &SimConfig {
                seed,
                ..Default::default()
            },
            DEFAULT_EXPOSURE,
        )
        .unwrap();
        let truth = e.true_cate().unwrap();
        let e = e.with_predictions(truth).unwrap();
        let r = validate_ranking_splits(&e, &default_k_grid()).unwrap();
        let sep = r.all_separated() && r.separation.len() == 9;
        separated_all &= sep;
        for k in default_k_grid() {
            let (high, low) = split_groups(&e, k).unwrap();
            for g in [&high, &low] {
                let w = wald_2sls(&e, g).unwrap();
                let z = (w.cate - e.group_true_cate(g).unwrap()).abs() / w.se;
                worst_z = worst_z.max(z);
            }
        }
    }
    pass &= separated_all && worst_z <= 3.0;
    Verdict {
        id: 8,
        pass,
        detail: format!(
            "oracle ranking separated for k = 10..90 on every seed: {separated_all}; max |Wald - true| / SE = {worst_z:.2} (<= 3)"
        ),
    }
}

/// Least squares by Gaussian elimination on the normal equations, with an
/// intercept column.
fn ols_oracle(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = rows[0].len() + 1;
    let mut a = vec![vec![0.0; p + 1]; p];
    for (r, &yi) in rows.iter().zip(y) {
        let z: Vec<f64> = std::iter::once(1.0).chain(r.iter().cloned()).collect();
        for i in 0..p {
            for j in 0..p {
                a[i][j] += z[i] * z[j];
            }
            a[i][p] += z[i] * yi;
        }
    }
    for c in 0..p {
        let piv = (c..p).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        for r in 0..p {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..=p {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    (0..p).map(|i| a[i][p] / a[i][i]).collect()
}

fn criterion_9() -> Verdict {
    let mut checks: Vec<(&str, bool)> = Vec::new();
    let s = simulate_cohort::<f64>(&SimConfig {
        n: 2000,
        k: 5,
        seed: 9,
        ..Default::default()
    })
    .unwrap();
    let d = &s.observed;

    // Weighted-loss identity.
    let spec = ModelSpec::new(Family::LinearWls);
    let ones = vec![1.0; d.n()];
    let unweighted = fit_outcome_model(d, None, &spec).unwrap();
    let weighted = fit_outcome_model(d, Some(&ones), &spec).unwrap();
    let rows: Vec<Vec<f64>> = (0..d.n())
        .map(|i| {
            let x = d.row(i);
            let a = d.treatment()[i] as f64;
            x.iter().cloned().chain([a]).chain(x.iter().map(|v| a * v)).collect()
        })
        .collect();
    let oracle = ols_oracle(&rows, d.outcome());
    let close = match &unweighted.params {
        Params::Linear {
            intercept,
            coefficients,
        } => {
            std::iter::once(intercept)
                .chain(coefficients)
                .zip(&oracle)
                .all(|(a, b)| (a - b).abs() <= 1e-8 * (1.0 + b.abs()))
        }
        _ => false,
    };
    checks.push(("w = 1 fit is bit-identical to the unweighted fit", unweighted == weighted));
    checks.push(("linear fit matches an independent OLS solve", close));

    // ITE constancy without interactions.
    let additive = fit_outcome_model(d, None, &ModelSpec::new(Family::LinearWls).without_interactions()).unwrap();
    let ite = compute_ite(&additive, d).unwrap().ites();
    checks.push(("additive linear ITE identical for every unit", ite.iter().all(|&v| v == ite[0])));

    // Top-k nestedness.
    let mut r = rng::stream(9, "acceptance/topk");
    let vals: Vec<f64> = (0..997).map(|_| (r.random::<f64>() * 20.0).floor()).collect();
    let ranked = rank_values(&vals, 4).unwrap();
    let grid = [5.0, 10.0, 25.0, 33.3, 50.0, 75.0, 90.0, 100.0];
    let sets: Vec<Vec<usize>> = grid.iter().map(|&k| select_top_percentile(&ranked, k).unwrap()).collect();
    let nested = sets.windows(2).all(|w| w[0].iter().all(|i| w[1].binary_search(i).is_ok()));
    checks.push(("top-k sets nested over k", nested));

    // Overlap fraction.
    let base: Vec<f64> = (0..1000).map(|_| r.random::<f64>()).collect();
    let other: Vec<f64> = (0..1000).map(|_| r.random::<f64>()).collect();
    let reversed: Vec<f64> = base.iter().map(|v| -v).collect();
    let o = overlap_fraction(&base, &other).unwrap();
    checks.push(("overlap in [0, 1]", (0.0..=1.0).contains(&o)));
    checks.push(("overlap with itself is 1", overlap_fraction(&base, &base).unwrap() == 1.0));
    checks.push(("overlap with reversal is 0", overlap_fraction(&base, &reversed).unwrap() == 0.0));

    // Posterior variance.
    let cfg = ConfounderConfig::new(1e5, 4e6);
    let u = generate_confounder(d, &cfg).unwrap();
    let exact = u.posteriors.iter().all(|p| p.variance == cfg.epsilon / (p.count as f64 + 1.0))
        && arm_posterior(&cfg, 1, 4999, 0.0).variance == 4e6 / 5000.0;
    checks.push(("posterior variance is epsilon / (N_a + 1)", exact));

    // Determinism of emitted files.
    let mut rc = RunConfig::default();
    rc.sim.n = 3000;
    rc.sim.k = 5;
    rc.sensitivity.bootstrap = 5;
    rc.sensitivity.runs = 2;
    let hashes = |rc: &RunConfig| {
        let dir = tempfile::tempdir().unwrap();
        let report = run_pipeline(rc).unwrap();
        let m = emit_report(&report, dir.path()).unwrap();
        m.files.into_iter().map(|f| (f.file, f.sha256)).collect::<Vec<_>>()
    };
    let h1 = hashes(&rc);
    checks.push(("same seed gives identical output hashes", h1.len() == 7 && h1 == hashes(&rc)));
    rc.master_seed = 1;
    checks.push(("a different seed changes the outputs", h1 != hashes(&rc)));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    Verdict {
        id: 9,
        pass: failed.is_empty(),
        detail: if failed.is_empty() {
            format!("{} properties hold", checks.len())
        } else {
            format!("failed: {}", failed.join("; "))
        },
    }
}

fn main() -> ExitCode {
    let t = Instant::now();
    let clean = run_mode(SimMode::Clean);
    let conf = run_mode(SimMode::Confounded);
    let neg = run_mode(SimMode::NegativeCompliance);
    let verdicts = vec![
        criterion_1(&clean),
        criterion_2(&clean, &conf),
        criterion_3(&neg),
        criterion_4(),
        criterion_5(&[("clean", &clean), ("confounded", &conf), ("negative", &neg)]),
        criterion_6(),
        criterion_7(),
        criterion_8(),
        criterion_9(),
    ];
    let mut unexpected = 0;
    for v in &verdicts {
        let known = KNOWN_FAILURES.contains(&v.id);
        let tag = match (v.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("criterion {}: {tag}: {}", v.id, v.detail);
        if !v.pass && !known {
            unexpected += 1;
        }
    }
    println!("acceptance finished in {:.1}s", t.elapsed().as_secs_f64());
    if unexpected > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
