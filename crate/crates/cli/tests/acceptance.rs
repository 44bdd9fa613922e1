//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

mod common;

use std::collections::HashMap;
use std::path::Path;
use std::time::{Duration, Instant};

use cobra_core::analysis::{mean_score_by_severity, relevance_table, run_synthetic_pipeline, PipelineRun};
use cobra_core::fid::{frechet_distance, matrix_sqrt_psd};
use cobra_core::refmodel::{RefModel, TrainConfig};
use cobra_core::scoring::{cobra_score, cohort_scores, ScoreConfig};
use cobra_core::stats::{correlate_scores, fisher_ci, join_scores, kde, stratified_correlation, CiSpec};
use cobra_core::synth::{ConfounderConfig, SynthConfig};
use cobra_core::{ClassSet, GaussianSummary, ProbabilityRecord, SubjectDataset};
use common::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tempfile::TempDir;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(start: Instant, budget: Duration) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took <= budget, || format!("took {took:.2?}, budget {budget:?}"))
}

fn close(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || {
        format!("{name}: {got} vs {want} (tol {tol:e})")
    })
}

fn ci_reproduction() -> Check {
    for (rho, low, high) in [(0.814, 0.700, 0.888), (0.736, 0.584, 0.838)] {
        let (l, h) = fisher_ci(rho, 55, 0.95).map_err(|e| e.to_string())?;
        close(&format!("low({rho})"), l, low, 0.002)?;
        close(&format!("high({rho})"), h, high, 0.002)?;
    }
    Ok("fisher intervals match within 0.002".into())
}

/// Direct evaluation: argmax with lowest index on ties, mean max-probability
/// over the records whose argmax is relevant.
fn brute_force(rows: &[Vec<f64>], relevant: &[bool]) -> Option<f64> {
    let mut hits = Vec::new();
    for row in rows {
        let mut best = 0;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        if relevant[best] {
            hits.push(row[best]);
        }
    }
    if hits.is_empty() {
        None
    } else {
        Some(hits.iter().sum::<f64>() / hits.len() as f64)
    }
}

fn random_probs(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    // occasional exact ties exercise the tie rule
    if rng.random_bool(0.05) {
        return vec![1.0 / k as f64; k];
    }
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0f64).powi(3) + 1e-9).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

fn cobra_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut missing = 0;
    for subject in 0..1000 {
        let k = rng.random_range(2..=6);
        let n = rng.random_range(1..=200);
        let relevant: Vec<bool> = loop {
            let r: Vec<bool> = (0..k).map(|_| rng.random_bool(0.5)).collect();
            if r.iter().any(|x| *x) {
                break r;
            }
        };
        let rows: Vec<Vec<f64>> = (0..n).map(|_| random_probs(&mut rng, k)).collect();
        let records = rows
            .iter()
            .enumerate()
            .map(|(i, p)| ProbabilityRecord::new("s", i.to_string(), None, p.clone(), None))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let dataset = SubjectDataset::new("s", records).map_err(|e| e.to_string())?;
        let classes = ClassSet::new(k, (0..k).filter(|&j| relevant[j])).map_err(|e| e.to_string())?;
        let got = cobra_score(&dataset, &ScoreConfig::new(classes)).map_err(|e| e.to_string())?;
        // the library normalises each row, so the oracle sees the stored probabilities
        let stored: Vec<Vec<f64>> = dataset.records().iter().map(|r| r.probs().to_vec()).collect();
        match (got.score, brute_force(&stored, &relevant)) {
            (None, None) => missing += 1,
            (Some(a), Some(b)) => close(&format!("subject {subject}"), a, b, 1e-12)?,
            (a, b) => return Err(format!("subject {subject}: {a:?} vs {b:?}")),
        }
    }
    within_budget(start, Duration::from_secs(5))?;
    Ok(format!(
        "1000 subjects agree within 1e-12 ({missing} missing) in {:.2?}",
        start.elapsed()
    ))
}

fn random_psd(rng: &mut ChaCha8Rng, d: usize, rank: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, rank, |_, _| rng.sample::<f64, _>(StandardNormal));
    &a * a.transpose()
}

fn summary(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<GaussianSummary, String> {
    GaussianSummary::new(DVector::from_vec(mean), cov, 10).map_err(|e| e.to_string())
}

fn fid_closed_forms() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let fd = |a: &GaussianSummary, b: &GaussianSummary| frechet_distance(a, b).map_err(|e| e.to_string());

    for trial in 0..200 {
        let d = rng.random_range(1..=8);
        let mk = |rng: &mut ChaCha8Rng| {
            let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let rank = rng.random_range(1..=d + 2);
            summary(mean, random_psd(rng, d, rank))
        };
        let a = mk(&mut rng)?;
        let b = mk(&mut rng)?;
        close(&format!("symmetry {trial}"), fd(&a, &b)?, fd(&b, &a)?, 1e-8)?;
        close(&format!("self {trial}"), fd(&a, &a)?, 0.0, 1e-8)?;
    }

    let a = summary(vec![0.0], DMatrix::from_element(1, 1, 1.0))?;
    let b = summary(vec![1.0], DMatrix::from_element(1, 1, 4.0))?;
    close("scalar", fd(&a, &b)?, 2.0, 1e-8)?;

    for trial in 0..200 {
        let d = rng.random_range(1..=8);
        let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let nu: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        // eigenvalues stay clear of zero, where the covariance ridge moves the
        // square root by more than the tolerance
        let lam: Vec<f64> = (0..d).map(|_| rng.random_range(0.05..4.0)).collect();
        let eta: Vec<f64> = (0..d).map(|_| rng.random_range(0.05..4.0)).collect();
        let want: f64 = (0..d)
            .map(|i| (mu[i] - nu[i]).powi(2) + (lam[i].sqrt() - eta[i].sqrt()).powi(2))
            .sum();
        let a = summary(mu, DMatrix::from_diagonal(&DVector::from_vec(lam)))?;
        let b = summary(nu, DMatrix::from_diagonal(&DVector::from_vec(eta)))?;
        close(&format!("diagonal {trial}"), fd(&a, &b)?, want, 1e-8)?;
    }

    for trial in 0..1000 {
        let d = rng.random_range(1..=8);
        let rank = rng.random_range(1..=d);
        let m = random_psd(&mut rng, d, rank);
        let s = matrix_sqrt_psd(&m).map_err(|e| e.to_string())?;
        let err = (&s * &s - &m).norm();
        ensure(err <= 1e-8 * (1.0 + m.norm()), || {
            format!("sqrt {trial}: error {err:e}")
        })?;
    }
    within_budget(start, Duration::from_secs(10))?;
    Ok(format!(
        "symmetry, self, scalar, 200 diagonal, 1000 sqrt in {:.2?}",
        start.elapsed()
    ))
}

fn gradient_check() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let configs = 25;
    let mut worst: f64 = 0.0;
    for config in 0..configs {
        let inputs = rng.random_range(1..8);
        let hidden = rng.random_range(1..10);
        let classes = rng.random_range(2..7);
        let model = RefModel::init(inputs, hidden, classes, rng.random_range(0.3..2.0), &mut rng);
        let n = rng.random_range(1..12);
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..inputs).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let batch: Vec<(&[f64], usize)> = xs
            .iter()
            .map(|x| (x.as_slice(), rng.random_range(0..classes)))
            .collect();
        let (_, analytic) = model.loss_and_grad(&batch);
        let mut probe = model.clone();
        let h = 1e-5;
        let numeric: Vec<f64> = (0..analytic.len())
            .map(|i| {
                let orig = probe.params()[i];
                probe.params_mut()[i] = orig + h;
                let up = probe.loss(&batch);
                probe.params_mut()[i] = orig - h;
                let down = probe.loss(&batch);
                probe.params_mut()[i] = orig;
                (up - down) / (2.0 * h)
            })
            .collect();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let scale = norm(&analytic) + norm(&numeric);
        let rel = if scale == 0.0 { 0.0 } else { norm(&diff) / scale };
        ensure(rel < 1e-4, || format!("config {config}: relative error {rel:e}"))?;
        worst = worst.max(rel);
    }
    within_budget(start, Duration::from_secs(10))?;
    Ok(format!("{configs} configurations, worst relative error {worst:.1e}"))
}

/// Seed-42 values recorded from the first verified run.
const FROZEN_MEANS: [f64; 5] = [
    0.9744577734437259,
    0.9425357813468634,
    0.8913017909032522,
    0.8423211083887951,
    0.8162584469200411,
];
const FROZEN_RHO: f64 = 0.9770014474991703;
const FROZEN_NON_RELEVANT: f64 = 0.6426171287967558;
const FROZEN_POOLED: f64 = 0.7676077222225209;
const FROZEN_CLEAN: f64 = 0.9772462215041297;
const FROZEN_CONFOUNDED: f64 = 0.8461722967213692;
const FROZEN_TOL: f64 = 1e-9;

fn monotonicity(run: &PipelineRun, synth: &SynthConfig) -> Check {
    let healthy_subjects = synth.healthy_subjects;
    ensure(healthy_subjects == 20, || {
        format!("{healthy_subjects} healthy subjects")
    })?;
    ensure(synth.subjects_per_level >= 10, || {
        "fewer than 10 subjects per level".into()
    })?;
    let classes = synth.class_set().map_err(|e| e.to_string())?;
    let scores = cohort_scores(&run.datasets(), &ScoreConfig::new(classes)).map_err(|e| e.to_string())?;
    let means = mean_score_by_severity(run, &scores);
    let levels: Vec<f64> = means.iter().map(|m| m.0).collect();
    ensure(levels == [0.0, 0.25, 0.5, 0.75, 1.0], || format!("levels {levels:?}"))?;
    for w in means.windows(2) {
        ensure(w[1].1 < w[0].1, || format!("means not strictly decreasing: {means:?}"))?;
    }
    let c = correlate_scores(&scores, &run.cohort.assessments, CiSpec::FisherZ, 0.95)
        .map_err(|e| e.to_string())?
        .report;
    // lower scores go with lower clinical scores: the expected sign is positive
    ensure(c.rho >= 0.8, || format!("rho {}", c.rho))?;
    for (i, (m, want)) in means.iter().zip(FROZEN_MEANS).enumerate() {
        close(&format!("frozen mean {i}"), m.1, want, FROZEN_TOL)?;
    }
    close("frozen rho", c.rho, FROZEN_RHO, FROZEN_TOL)?;
    let shown: Vec<String> = means.iter().map(|m| format!("{:.4}", m.1)).collect();
    Ok(format!("means [{}], rho {:.4}", shown.join(", "), c.rho))
}

fn relevance_contrast(run: &PipelineRun, synth: &SynthConfig) -> Check {
    let classes = synth.class_set().map_err(|e| e.to_string())?;
    let table = relevance_table(
        &run.datasets(),
        &classes,
        &run.cohort.assessments,
        CiSpec::FisherZ,
        0.95,
    )
    .map_err(|e| e.to_string())?;
    let rho = |o: &cobra_core::analysis::Outcome, what: &str| {
        o.report().map(|r| r.rho).ok_or_else(|| format!("{what}: {o:?}"))
    };
    let relevant = rho(&table.relevant, "relevant")?;
    let other = rho(&table.non_relevant, "non-relevant")?;
    let gap = relevant.abs() - other.abs();
    ensure(gap >= 0.2, || format!("gap {gap}: {relevant} vs {other}"))?;
    close("frozen relevant", relevant, FROZEN_RHO, FROZEN_TOL)?;
    close("frozen non-relevant", other, FROZEN_NON_RELEVANT, FROZEN_TOL)?;
    Ok(format!("relevant {relevant:.4}, non-relevant {other:.4}, gap {gap:.4}"))
}

fn stratification() -> Check {
    let synth = SynthConfig {
        confounder: Some(ConfounderConfig::default()),
        ..SynthConfig::default()
    };
    let run = run_synthetic_pipeline(&synth, &TrainConfig::default()).map_err(|e| e.to_string())?;
    let classes = synth.class_set().map_err(|e| e.to_string())?;
    let scores = cohort_scores(&run.datasets(), &ScoreConfig::new(classes)).map_err(|e| e.to_string())?;
    let (pairs, _, _) = join_scores(&scores, &run.cohort.assessments);
    let strata: HashMap<String, String> = run.cohort.strata.clone().into_iter().collect();
    let confounded = strata.values().filter(|s| s.as_str() == "confounded").count();
    ensure(confounded * 2 == strata.len(), || {
        format!("{confounded} of {} confounded", strata.len())
    })?;
    let report = stratified_correlation(&pairs, &strata, CiSpec::FisherZ, 0.95).map_err(|e| e.to_string())?;
    ensure(report.strata.len() == 2, || {
        format!("strata {:?}", report.strata.keys())
    })?;
    let pooled = report.pooled.rho;
    for (name, r) in &report.strata {
        ensure(pooled.abs() < r.rho.abs(), || {
            format!("pooled {pooled} vs {name} {}", r.rho)
        })?;
        ensure(r.ci_low > 0.0 || r.ci_high < 0.0, || {
            format!("{name} CI ({}, {})", r.ci_low, r.ci_high)
        })?;
    }
    close("frozen pooled", pooled, FROZEN_POOLED, FROZEN_TOL)?;
    close("frozen clean", report.strata["clean"].rho, FROZEN_CLEAN, FROZEN_TOL)?;
    close(
        "frozen confounded",
        report.strata["confounded"].rho,
        FROZEN_CONFOUNDED,
        FROZEN_TOL,
    )?;
    Ok(format!(
        "pooled {pooled:.4}, clean {:.4}, confounded {:.4}",
        report.strata["clean"].rho, report.strata["confounded"].rho
    ))
}

fn run_ok(args: &[&str]) -> Result<(), String> {
    let out = cobra(args);
    ensure(out.status.success(), || {
        format!("cobra {args:?}: {}", String::from_utf8_lossy(&out.stderr))
    })
}

/// Runs one command into two output directories and compares their bytes.
fn twice(root: &Path, name: &str, args: &[&str]) -> Result<(), String> {
    let mut snaps = Vec::new();
    for run in ["a", "b"] {
        let out = root.join(format!("{name}-{run}"));
        let mut full: Vec<&str> = args.to_vec();
        full.extend(["--out", p(&out)]);
        run_ok(&full)?;
        snaps.push(snapshot(&out));
    }
    ensure(!snaps[0].is_empty(), || format!("{name}: no output"))?;
    ensure(snaps[0] == snaps[1], || format!("{name}: outputs differ"))
}

fn determinism() -> Check {
    let tmp = TempDir::new().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let cfg = write(
        root,
        "cfg.json",
        r#"{"subjects_per_level": 6, "points_per_subject": 100, "confounder": {}}"#,
    );
    twice(root, "simulate", &["simulate", "--config", p(&cfg), "--seed", "3"])?;
    let sim = root.join("simulate-a");
    twice(root, "train", &["train", p(&sim.join("healthy.csv")), "--seed", "3"])?;
    let model = root.join("train-a").join("model.json");
    twice(
        root,
        "predict",
        &["predict", "--model", p(&model), p(&sim.join("test.csv"))],
    )?;
    let pred = root.join("predict-a");
    run_ok(&[
        "predict",
        "--model",
        p(&model),
        p(&sim.join("reference.csv")),
        "--out",
        p(&root.join("ref")),
    ])?;
    let preds = pred.join("predictions.csv");
    twice(root, "score", &["score", p(&preds), "--relevant", "0,1,2"])?;
    let scores = root.join("score-a").join("scores.csv");
    let assess = sim.join("assessments.csv");
    let strata = sim.join("strata.csv");
    twice(
        root,
        "correlate",
        &[
            "correlate",
            p(&scores),
            p(&assess),
            "--strata",
            p(&strata),
            "--ci",
            "bootstrap",
            "--seed",
            "3",
        ],
    )?;
    twice(
        root,
        "fid",
        &[
            "fid",
            "--reference",
            p(&root.join("ref").join("features.csv")),
            "--subjects",
            p(&pred.join("features.csv")),
            "--assessments",
            p(&assess),
            "--ci",
            "bootstrap",
            "--seed",
            "3",
        ],
    )?;
    twice(
        root,
        "report",
        &[
            "report",
            "--predictions",
            p(&preds),
            "--assessments",
            p(&assess),
            "--relevant",
            "0,1,2",
            "--strata",
            p(&strata),
            "--labels",
            p(&sim.join("severity.csv")),
            "--ci",
            "bootstrap",
            "--seed",
            "3",
        ],
    )?;
    Ok("simulate, train, predict, score, correlate, fid, report byte-identical".into())
}

fn kde_normalisation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let n = rng.random_range(5..400);
        let spread = rng.random_range(0.01..10.0);
        let centre = rng.random_range(-50.0..50.0);
        let values: Vec<f64> = (0..n)
            .map(|_| centre + spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let curve = kde(&values, None).map_err(|e| e.to_string())?;
        let area = curve.integral();
        ensure((0.98..=1.02).contains(&area), || {
            format!("sample {trial}: integral {area}")
        })?;
        worst = worst.max((area - 1.0).abs());
    }
    Ok(format!("100 samples, worst |integral - 1| = {worst:.1e}"))
}

fn main() {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, start: Instant, result: Check| {
        let took = start.elapsed();
        match result {
            Ok(detail) => println!("PASS {id} {name} ({took:.2?}): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {id} {name} ({took:.2?}): {why}");
            }
        }
    };

    let t = Instant::now();
    report(1, "ci reproduction", t, ci_reproduction());
    let t = Instant::now();
    report(2, "cobra definition oracle", t, cobra_oracle());
    let t = Instant::now();
    report(3, "fid closed forms", t, fid_closed_forms());
    let t = Instant::now();
    report(4, "gradient correctness", t, gradient_check());

    let t = Instant::now();
    let synth = SynthConfig::default();
    let run = run_synthetic_pipeline(&synth, &TrainConfig::default());
    match &run {
        Ok(run) => {
            report(5, "end-to-end monotonicity", t, monotonicity(run, &synth));
            let t = Instant::now();
            report(6, "relevance contrast", t, relevance_contrast(run, &synth));
        }
        Err(e) => {
            report(5, "end-to-end monotonicity", t, Err(e.to_string()));
            report(6, "relevance contrast", t, Err(e.to_string()));
        }
    }
    let t = Instant::now();
    report(7, "stratification correction", t, stratification());
    let t = Instant::now();
    report(8, "determinism", t, determinism());
    let t = Instant::now();
    report(9, "kde normalisation", t, kde_normalisation());

    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all 9 criteria passed");
}
