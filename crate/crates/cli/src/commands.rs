use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use cobra_core::analysis::{group_table, relevance_table, Outcome};
use cobra_core::fid::{correlate_distances, subject_distances, FeatureSet, SubjectDistance, REFERENCE_ID};
use cobra_core::io::{
    feature_sets, read_assessments, read_features, read_predictions, read_scores, read_strata, write_assessments,
    write_feature_rows, write_predictions, write_samples, write_scores, write_strata, Predictions, ScoreRow,
};
use cobra_core::refmodel::{predict_dataset, train, RefModel, TrainConfig};
use cobra_core::scoring::{cobra_by_group, cohort_scores, confidence, predict_class, MissingPolicy, ScoreConfig};
use cobra_core::stats::{
    correlate_scores, kde, performance_metrics, stratified_correlation, CiSpec, CorrelationReport, GroupBy,
    MetricScope, StratifiedReport, DEFAULT_METRIC_BOOTSTRAP_ITERS,
};
use cobra_core::synth::{generate_cohort, SynthConfig};
use cobra_core::{partition_by_subject, ClassSet, Error, Result, SubjectDataset, SubjectScore};
use serde::Serialize;

use crate::output::{ManifestBuilder, OutDir, Report};

pub const DEFAULT_SEED: u64 = 42;
const HISTOGRAM_BINS: usize = 20;

fn num(v: f64) -> String {
    v.to_string()
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn split_list(list: &str) -> Vec<String> {
    list.split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn class_set(predictions: &Predictions, relevant: &str, names: Option<&str>) -> Result<ClassSet> {
    let names = match (names, &predictions.class_names) {
        (Some(list), _) => Some(split_list(list)),
        (None, from_header) => from_header.clone(),
    };
    ClassSet::parse(predictions.num_classes, &split_list(relevant), names.as_deref())
}

fn ci_spec(bootstrap: bool, iters: usize, seed: u64) -> CiSpec {
    if bootstrap {
        CiSpec::Bootstrap { iters, seed }
    } else {
        CiSpec::FisherZ
    }
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("--level must lie in (0, 1), got {level}")))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        context: format!("cannot read {}", path.display()),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Input {
        path: path.to_path_buf(),
        line: e.line() as u64,
        message: e.to_string(),
    })
}

fn score_row(group: Option<&str>, s: SubjectScore) -> ScoreRow {
    ScoreRow {
        group: group.map(str::to_string),
        score: s,
    }
}

fn correlation_row(label: &str, outcome: &Outcome) -> Vec<String> {
    match outcome {
        Outcome::Report { report, .. } => vec![
            label.to_string(),
            report.n.to_string(),
            num(report.rho),
            num(report.ci_low),
            num(report.ci_high),
            String::new(),
        ],
        Outcome::Unavailable { error } => {
            vec![
                label.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                error.clone(),
            ]
        }
    }
}

const CORRELATION_COLUMNS: [&str; 6] = ["name", "n", "rho", "ci_low", "ci_high", "error"];

// ---------------------------------------------------------------- score

pub struct ScoreArgs {
    pub predictions: PathBuf,
    pub relevant: String,
    pub class_names: Option<String>,
    pub by_group: bool,
    pub missing_policy: MissingPolicy,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct ScoreConfigEcho<'a> {
    relevant: Vec<usize>,
    class_names: Option<&'a [String]>,
    by_group: bool,
    missing_policy: &'static str,
}

#[derive(Serialize)]
struct ScoreSummary {
    num_classes: usize,
    rows: usize,
    scored: usize,
    missing: Vec<String>,
    mean_score: Option<f64>,
}

pub fn score(args: &ScoreArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new("score");
    manifest.input(&args.predictions)?;
    let predictions = read_predictions(&args.predictions)?;
    let classes = class_set(&predictions, &args.relevant, args.class_names.as_deref())?;
    manifest.config(&ScoreConfigEcho {
        relevant: classes.relevant().iter().copied().collect(),
        class_names: classes.names(),
        by_group: args.by_group,
        missing_policy: match args.missing_policy {
            MissingPolicy::ExcludeSubject => "exclude",
            MissingPolicy::ErrorOut => "error",
        },
    });
    let cfg = ScoreConfig::new(classes).with_policy(args.missing_policy);
    let datasets = partition_by_subject(predictions.records);

    let rows: Vec<ScoreRow> = if args.by_group {
        let mut rows = Vec::new();
        for (group, scores) in cobra_by_group(&datasets, &cfg)? {
            rows.extend(scores.into_iter().map(|s| score_row(Some(&group), s)));
        }
        rows
    } else {
        cohort_scores(&datasets, &cfg)?
            .into_iter()
            .map(|s| score_row(None, s))
            .collect()
    };

    let values: Vec<f64> = rows.iter().filter_map(|r| r.score.score).collect();
    let summary = ScoreSummary {
        num_classes: cfg.class_set.num_classes(),
        rows: rows.len(),
        scored: values.len(),
        missing: rows
            .iter()
            .filter(|r| r.score.score.is_none())
            .map(|r| match &r.group {
                Some(g) => format!("{}/{}", r.score.subject_id, g),
                None => r.score.subject_id.clone(),
            })
            .collect(),
        mean_score: (!values.is_empty()).then(|| cobra_core::numeric::mean(&values)),
    };
    for m in &summary.missing {
        eprintln!("warning: {m}: no datapoints predicted in the relevant classes, score missing");
    }

    let out = OutDir::create(&args.out)?;
    out.write("scores.csv", |w| write_scores(w, &rows))?;
    let manifest = manifest.finish();
    out.write_json(
        "score_report.json",
        &Report {
            manifest: &manifest,
            body: summary,
        },
    )
}

// ---------------------------------------------------------------- correlate

pub struct CorrelateArgs {
    pub scores: PathBuf,
    pub assessments: PathBuf,
    pub strata: Option<PathBuf>,
    pub bootstrap: bool,
    pub level: f64,
    pub iters: usize,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct CorrelateConfigEcho {
    ci: &'static str,
    level: f64,
    iters: usize,
}

#[derive(Serialize)]
struct CorrelateBody {
    grouped: bool,
    correlation: Option<CorrelationReport>,
    dropped_missing: usize,
    dropped_unassessed: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    stratified: Option<StratifiedReport>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    groups: BTreeMap<String, Outcome>,
}

pub fn correlate(args: &CorrelateArgs) -> Result<()> {
    check_level(args.level)?;
    let mut manifest = ManifestBuilder::new("correlate");
    manifest.input(&args.scores)?.input(&args.assessments)?;
    if let Some(s) = &args.strata {
        manifest.input(s)?;
    }
    manifest.config(&CorrelateConfigEcho {
        ci: if args.bootstrap { "bootstrap" } else { "fisher" },
        level: args.level,
        iters: args.iters,
    });
    manifest.seed(args.seed);
    let ci = ci_spec(args.bootstrap, args.iters, args.seed);
    let rows = read_scores(&args.scores)?;
    let assess = read_assessments(&args.assessments)?;
    let strata = args.strata.as_deref().map(read_strata).transpose()?;
    let grouped = rows.iter().any(|r| r.group.is_some());
    let out = OutDir::create(&args.out)?;

    if grouped {
        if strata.is_some() {
            return Err(Error::Config("--strata needs an ungrouped scores file".into()));
        }
        let mut by_group: BTreeMap<String, Vec<SubjectScore>> = BTreeMap::new();
        for r in rows {
            by_group.entry(r.group.unwrap_or_default()).or_default().push(r.score);
        }
        let mut groups = BTreeMap::new();
        let mut scatter = Vec::new();
        let mut first_error = None;
        for (g, scores) in &by_group {
            match correlate_scores(scores, &assess, ci, args.level) {
                Ok(c) => {
                    scatter.extend(
                        c.pairs
                            .iter()
                            .map(|p| vec![p.subject_id.clone(), g.clone(), num(p.score), num(p.clinical)]),
                    );
                    groups.insert(
                        g.clone(),
                        Outcome::Report {
                            report: c.report,
                            dropped_missing: c.dropped_missing,
                        },
                    );
                }
                Err(e) => {
                    groups.insert(g.clone(), Outcome::Unavailable { error: e.to_string() });
                    first_error.get_or_insert(e);
                }
            }
        }
        if groups.values().all(|o| o.report().is_none()) {
            return Err(first_error.unwrap_or(Error::InsufficientOverlap { needed: 3, found: 0 }));
        }
        out.write_csv("scatter.csv", &["subject_id", "group", "score", "clinical"], &scatter)?;
        let manifest = manifest.finish();
        return out.write_json(
            "correlation_report.json",
            &Report {
                manifest: &manifest,
                body: CorrelateBody {
                    grouped,
                    correlation: None,
                    dropped_missing: 0,
                    dropped_unassessed: 0,
                    stratified: None,
                    groups,
                },
            },
        );
    }

    let scores: Vec<SubjectScore> = rows.into_iter().map(|r| r.score).collect();
    let c = correlate_scores(&scores, &assess, ci, args.level)?;
    let stratified = strata
        .as_ref()
        .map(|s| stratified_correlation(&c.pairs, s, ci, args.level))
        .transpose()?;
    let scatter: Vec<Vec<String>> = c
        .pairs
        .iter()
        .map(|p| {
            let stratum = strata
                .as_ref()
                .and_then(|s| s.get(&p.subject_id).cloned())
                .unwrap_or_default();
            vec![p.subject_id.clone(), num(p.score), num(p.clinical), stratum]
        })
        .collect();
    out.write_csv("scatter.csv", &["subject_id", "score", "clinical", "stratum"], &scatter)?;
    let manifest = manifest.finish();
    out.write_json(
        "correlation_report.json",
        &Report {
            manifest: &manifest,
            body: CorrelateBody {
                grouped,
                correlation: Some(c.report),
                dropped_missing: c.dropped_missing,
                dropped_unassessed: c.dropped_unassessed,
                stratified,
                groups: BTreeMap::new(),
            },
        },
    )
}

// ---------------------------------------------------------------- fid

pub struct FidArgs {
    pub reference: PathBuf,
    pub subjects: PathBuf,
    pub assessments: PathBuf,
    pub predictions: Option<PathBuf>,
    pub reference_predictions: Option<PathBuf>,
    pub relevant: Option<String>,
    pub bootstrap: bool,
    pub level: f64,
    pub iters: usize,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct FidConfigEcho {
    ci: &'static str,
    level: f64,
    iters: usize,
    restricted_to: Option<Vec<usize>>,
}

#[derive(Serialize)]
struct FidBody {
    reference_rows: usize,
    distances: Vec<SubjectDistance>,
    skipped: Vec<String>,
    correlation: Outcome,
}

/// Keeps the feature rows whose matching prediction falls in a relevant class.
fn restrict(
    features: Vec<cobra_core::Sample>,
    predictions: &Predictions,
    classes: &ClassSet,
    path: &Path,
) -> Result<Vec<cobra_core::Sample>> {
    let predicted: HashMap<(&str, &str), usize> = predictions
        .records
        .iter()
        .map(|r| ((r.subject_id.as_str(), r.point_id.as_str()), predict_class(r.probs())))
        .collect();
    let mut kept = Vec::with_capacity(features.len());
    for s in features {
        let Some(&class) = predicted.get(&(s.subject_id.as_str(), s.point_id.as_str())) else {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("no prediction for subject {} point {}", s.subject_id, s.point_id),
            });
        };
        if classes.is_relevant(class) {
            kept.push(s);
        }
    }
    Ok(kept)
}

pub fn fid(args: &FidArgs) -> Result<()> {
    check_level(args.level)?;
    let mut manifest = ManifestBuilder::new("fid");
    manifest
        .input(&args.reference)?
        .input(&args.subjects)?
        .input(&args.assessments)?;
    for p in [&args.predictions, &args.reference_predictions].into_iter().flatten() {
        manifest.input(p)?;
    }
    manifest.seed(args.seed);
    let mut reference = read_features(&args.reference)?;
    let mut subjects = read_features(&args.subjects)?;
    let assess = read_assessments(&args.assessments)?;

    let mut restricted_to = None;
    if let Some(relevant) = &args.relevant {
        let Some(pred_path) = &args.predictions else {
            return Err(Error::Config("--relevant needs --predictions".into()));
        };
        let predictions = read_predictions(pred_path)?;
        let classes = class_set(&predictions, relevant, None)?;
        subjects = restrict(subjects, &predictions, &classes, pred_path)?;
        if let Some(ref_path) = &args.reference_predictions {
            let ref_predictions = read_predictions(ref_path)?;
            reference = restrict(reference, &ref_predictions, &classes, ref_path)?;
        }
        restricted_to = Some(classes.relevant().iter().copied().collect());
    }
    manifest.config(&FidConfigEcho {
        ci: if args.bootstrap { "bootstrap" } else { "fisher" },
        level: args.level,
        iters: args.iters,
        restricted_to,
    });

    let reference = FeatureSet::new(REFERENCE_ID, reference.into_iter().map(|s| s.features).collect())?;
    let (distances, skipped) = subject_distances(&reference, &feature_sets(&subjects), &assess)?;
    let correlation = correlate_distances(&distances, ci_spec(args.bootstrap, args.iters, args.seed), args.level);

    let out = OutDir::create(&args.out)?;
    let rows: Vec<Vec<String>> = distances
        .iter()
        .map(|d| {
            vec![
                d.subject_id.clone(),
                d.n_rows.to_string(),
                num(d.distance),
                opt_num(d.clinical),
            ]
        })
        .collect();
    out.write_csv(
        "distances.csv",
        &["subject_id", "n_rows", "distance", "clinical"],
        &rows,
    )?;
    let (outcome, error) = match correlation {
        Ok(report) => (
            Outcome::Report {
                report,
                dropped_missing: 0,
            },
            None,
        ),
        Err(e) => (Outcome::Unavailable { error: e.to_string() }, Some(e)),
    };
    let manifest = manifest.finish();
    out.write_json(
        "fid_report.json",
        &Report {
            manifest: &manifest,
            body: FidBody {
                reference_rows: reference.rows.len(),
                distances,
                skipped,
                correlation: outcome,
            },
        },
    )?;
    error.map_or(Ok(()), Err)
}

// ---------------------------------------------------------------- simulate

pub struct SimulateArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct SimulateBody {
    files: BTreeMap<&'static str, usize>,
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new("simulate");
    let mut cfg: SynthConfig = match &args.config {
        Some(path) => {
            manifest.input(path)?;
            read_json(path)?
        }
        None => SynthConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    manifest.config(&cfg).seed(cfg.seed);
    let cohort = generate_cohort(&cfg)?;
    let test = cohort.test_samples();
    let severity: Vec<Vec<String>> = cohort
        .subjects
        .iter()
        .map(|s| vec![s.subject_id.clone(), num(s.severity)])
        .collect();

    let out = OutDir::create(&args.out)?;
    out.write("healthy.csv", |w| write_samples(w, &cohort.healthy))?;
    out.write("reference.csv", |w| write_samples(w, &cohort.reference))?;
    out.write("test.csv", |w| write_samples(w, &test))?;
    out.write("assessments.csv", |w| write_assessments(w, &cohort.assessments))?;
    out.write("strata.csv", |w| write_strata(w, &cohort.strata))?;
    out.write_csv("severity.csv", &["subject_id", "severity"], &severity)?;
    out.write_json("config.json", &cfg)?;

    let files = BTreeMap::from([
        ("healthy.csv", cohort.healthy.len()),
        ("reference.csv", cohort.reference.len()),
        ("test.csv", test.len()),
        ("assessments.csv", cohort.assessments.len()),
        ("strata.csv", cohort.strata.len()),
        ("severity.csv", severity.len()),
    ]);
    let manifest = manifest.finish();
    out.write_json(
        "manifest.json",
        &Report {
            manifest: &manifest,
            body: SimulateBody { files },
        },
    )
}

// ---------------------------------------------------------------- train

pub struct TrainArgs {
    pub data: PathBuf,
    pub config: Option<PathBuf>,
    pub classes: Option<usize>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub hidden: Option<usize>,
    pub init_scale: Option<f64>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct TrainEcho<'a> {
    classes: usize,
    #[serde(flatten)]
    train: &'a TrainConfig,
}

#[derive(Serialize)]
struct TrainBody {
    samples: usize,
    inputs: usize,
    classes: usize,
    initial_loss: f64,
    final_loss: f64,
    steps: usize,
    training_accuracy: Option<f64>,
}

pub fn train_cmd(args: &TrainArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new("train");
    manifest.input(&args.data)?;
    let mut cfg: TrainConfig = match &args.config {
        Some(path) => {
            manifest.input(path)?;
            read_json(path)?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.hidden {
        cfg.hidden = v;
    }
    if let Some(v) = args.init_scale {
        cfg.init_scale = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    let data = read_features(&args.data)?;
    let classes = match args.classes {
        Some(k) => k,
        None => data.iter().filter_map(|s| s.label).max().map_or(0, |m| m + 1),
    };
    manifest.config(&TrainEcho { classes, train: &cfg }).seed(cfg.seed);
    let (model, log) = train(&data, classes, &cfg)?;
    let accuracy = predict_dataset(&model, &data)?.accuracy();

    let out = OutDir::create(&args.out)?;
    let json = model.to_json();
    out.write("model.json", |w| {
        w.write_all(json.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::Io {
                context: "cannot write model.json".into(),
                source: e,
            })
    })?;
    let losses: Vec<Vec<String>> = log
        .step_losses
        .iter()
        .enumerate()
        .map(|(i, l)| vec![i.to_string(), num(*l)])
        .collect();
    out.write_csv("loss.csv", &["step", "loss"], &losses)?;
    let manifest = manifest.finish();
    out.write_json(
        "train_report.json",
        &Report {
            manifest: &manifest,
            body: TrainBody {
                samples: data.len(),
                inputs: model.inputs(),
                classes,
                initial_loss: log.initial_loss,
                final_loss: log.final_loss,
                steps: log.step_losses.len(),
                training_accuracy: accuracy,
            },
        },
    )
}

// ---------------------------------------------------------------- predict

pub struct PredictArgs {
    pub model: PathBuf,
    pub data: PathBuf,
    pub class_names: Option<String>,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct PredictEcho {
    class_names: Option<Vec<String>>,
}

#[derive(Serialize)]
struct PredictBody {
    records: usize,
    subjects: usize,
    accuracy: Option<f64>,
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new("predict");
    manifest.input(&args.model)?.input(&args.data)?;
    let text = fs::read_to_string(&args.model).map_err(|e| Error::Io {
        context: format!("cannot read {}", args.model.display()),
        source: e,
    })?;
    let model = RefModel::from_json(&text).map_err(|e| Error::Format {
        path: args.model.clone(),
        message: e.to_string(),
    })?;
    let names = args.class_names.as_deref().map(split_list);
    if let Some(names) = &names {
        if names.len() != model.classes() {
            return Err(Error::Config(format!(
                "--class-names lists {} names for a {}-class model",
                names.len(),
                model.classes()
            )));
        }
    }
    manifest.config(&PredictEcho {
        class_names: names.clone(),
    });
    let data = read_features(&args.data)?;
    let prediction = predict_dataset(&model, &data)?;
    let hidden_rows: Vec<(&str, &str, &[f64])> = prediction
        .records
        .iter()
        .zip(&prediction.hidden)
        .map(|(r, h)| (r.subject_id.as_str(), r.point_id.as_str(), h.as_slice()))
        .collect();
    let subjects = partition_by_subject(prediction.records.clone()).len();

    let out = OutDir::create(&args.out)?;
    out.write("predictions.csv", |w| {
        write_predictions(w, &prediction.records, names.as_deref())
    })?;
    out.write("features.csv", |w| write_feature_rows(w, &hidden_rows))?;
    let manifest = manifest.finish();
    out.write_json(
        "predict_report.json",
        &Report {
            manifest: &manifest,
            body: PredictBody {
                records: prediction.records.len(),
                subjects,
                accuracy: prediction.accuracy(),
            },
        },
    )
}

// ---------------------------------------------------------------- report

pub struct ReportArgs {
    pub predictions: PathBuf,
    pub assessments: PathBuf,
    pub relevant: String,
    pub class_names: Option<String>,
    pub strata: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub bootstrap: bool,
    pub level: f64,
    pub iters: usize,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct ReportEcho {
    relevant: Vec<usize>,
    class_names: Option<Vec<String>>,
    ci: &'static str,
    level: f64,
    iters: usize,
    metric_iters: usize,
}

#[derive(Serialize)]
struct DensitySummary {
    series: String,
    n: usize,
    bandwidth: f64,
    integral: f64,
    mode: f64,
}

#[derive(Serialize)]
struct Performance {
    overall: Vec<cobra_core::stats::PerformanceReport>,
    by_group: Vec<cobra_core::stats::PerformanceReport>,
    predicted_relevant: Vec<cobra_core::stats::PerformanceReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    by_label: Vec<cobra_core::stats::PerformanceReport>,
}

#[derive(Serialize)]
struct ReportBody {
    num_classes: usize,
    subjects: usize,
    scores: Vec<SubjectScore>,
    correlation: Outcome,
    relevance: cobra_core::analysis::RelevanceTable,
    groups: BTreeMap<String, Outcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stratified: Option<StratifiedReport>,
    densities: Vec<DensitySummary>,
    performance: Option<Performance>,
}

fn histogram(series: &str, values: &[f64]) -> Vec<Vec<String>> {
    let width = 1.0 / HISTOGRAM_BINS as f64;
    let mut counts = [0usize; HISTOGRAM_BINS];
    for &v in values {
        let bin = ((v / width).floor() as isize).clamp(0, HISTOGRAM_BINS as isize - 1) as usize;
        counts[bin] += 1;
    }
    counts
        .iter()
        .enumerate()
        .map(|(i, c)| {
            vec![
                series.to_string(),
                num(i as f64 * width),
                num((i + 1) as f64 * width),
                c.to_string(),
            ]
        })
        .collect()
}

fn subject_confidences(dataset: &SubjectDataset, classes: &ClassSet) -> Vec<f64> {
    dataset
        .records()
        .iter()
        .filter(|r| classes.is_relevant(predict_class(r.probs())))
        .map(|r| confidence(r.probs()))
        .collect()
}

pub fn report(args: &ReportArgs) -> Result<()> {
    check_level(args.level)?;
    let mut manifest = ManifestBuilder::new("report");
    manifest.input(&args.predictions)?.input(&args.assessments)?;
    for p in [&args.strata, &args.labels].into_iter().flatten() {
        manifest.input(p)?;
    }
    manifest.seed(args.seed);
    let predictions = read_predictions(&args.predictions)?;
    let classes = class_set(&predictions, &args.relevant, args.class_names.as_deref())?;
    let assess = read_assessments(&args.assessments)?;
    let strata = args.strata.as_deref().map(read_strata).transpose()?;
    let labels = args.labels.as_deref().map(read_strata).transpose()?;
    manifest.config(&ReportEcho {
        relevant: classes.relevant().iter().copied().collect(),
        class_names: classes.names().map(<[String]>::to_vec),
        ci: if args.bootstrap { "bootstrap" } else { "fisher" },
        level: args.level,
        iters: args.iters,
        metric_iters: DEFAULT_METRIC_BOOTSTRAP_ITERS,
    });
    let ci = ci_spec(args.bootstrap, args.iters, args.seed);
    let records = predictions.records;
    let datasets = partition_by_subject(records.clone());
    let cfg = ScoreConfig::new(classes.clone());

    let scores = cohort_scores(&datasets, &cfg)?;
    let (correlation, pairs) = match correlate_scores(&scores, &assess, ci, args.level) {
        Ok(c) => (
            Outcome::Report {
                report: c.report,
                dropped_missing: c.dropped_missing,
            },
            c.pairs,
        ),
        Err(e) => (Outcome::Unavailable { error: e.to_string() }, Vec::new()),
    };
    let stratified = match (&strata, pairs.len() >= 3) {
        (Some(s), true) => Some(stratified_correlation(&pairs, s, ci, args.level)?),
        _ => None,
    };
    let relevance = relevance_table(&datasets, &classes, &assess, ci, args.level)?;
    let groups = group_table(&datasets, &cfg, &assess, ci, args.level)?;

    let mut density_rows = Vec::new();
    let mut histogram_rows = Vec::new();
    let mut densities = Vec::new();
    let mut series: Vec<(String, Vec<f64>)> = vec![(
        "confidence_all".into(),
        datasets.iter().flat_map(|d| subject_confidences(d, &classes)).collect(),
    )];
    let scored: Vec<(&SubjectScore, f64)> = scores.iter().filter_map(|s| s.score.map(|v| (s, v))).collect();
    let best = scored.iter().max_by(|a, b| a.1.total_cmp(&b.1));
    let worst = scored.iter().min_by(|a, b| a.1.total_cmp(&b.1));
    for (tag, pick) in [("highest", best), ("lowest", worst)] {
        if let Some((s, _)) = pick {
            let dataset = datasets
                .iter()
                .find(|d| d.subject_id() == s.subject_id)
                .expect("scored subject");
            series.push((
                format!("confidence_{tag}_{}", s.subject_id),
                subject_confidences(dataset, &classes),
            ));
        }
    }
    series.push(("subject_scores".into(), scored.iter().map(|(_, v)| *v).collect()));
    for (name, values) in &series {
        histogram_rows.extend(histogram(name, values));
        match kde(values, None) {
            Ok(curve) => {
                density_rows.extend(
                    curve
                        .grid
                        .iter()
                        .zip(&curve.density)
                        .map(|(x, d)| vec![name.clone(), num(*x), num(*d)]),
                );
                densities.push(DensitySummary {
                    series: name.clone(),
                    n: values.len(),
                    bandwidth: curve.bandwidth,
                    integral: curve.integral(),
                    mode: curve.mode(),
                });
            }
            Err(e) => eprintln!("warning: no density for {name}: {e}"),
        }
    }

    let performance = if records.iter().all(|r| r.true_label.is_some()) && !records.is_empty() {
        let metrics =
            |group_by, scope| performance_metrics(&records, group_by, scope, DEFAULT_METRIC_BOOTSTRAP_ITERS, args.seed);
        Some(Performance {
            overall: metrics(GroupBy::None, MetricScope::All)?,
            by_group: metrics(GroupBy::Group, MetricScope::All)?,
            predicted_relevant: metrics(GroupBy::None, MetricScope::PredictedRelevant(&classes))?,
            by_label: match &labels {
                Some(l) => metrics(GroupBy::SubjectLabel(l), MetricScope::All)?,
                None => Vec::new(),
            },
        })
    } else {
        None
    };

    let out = OutDir::create(&args.out)?;
    let score_rows: Vec<ScoreRow> = scores.iter().cloned().map(|s| score_row(None, s)).collect();
    out.write("scores.csv", |w| write_scores(w, &score_rows))?;
    let scatter: Vec<Vec<String>> = pairs
        .iter()
        .map(|p| {
            let stratum = strata
                .as_ref()
                .and_then(|s| s.get(&p.subject_id).cloned())
                .unwrap_or_default();
            vec![p.subject_id.clone(), num(p.score), num(p.clinical), stratum]
        })
        .collect();
    out.write_csv("scatter.csv", &["subject_id", "score", "clinical", "stratum"], &scatter)?;
    let group_rows: Vec<Vec<String>> = groups.iter().map(|(g, o)| correlation_row(g, o)).collect();
    out.write_csv("groups.csv", &CORRELATION_COLUMNS, &group_rows)?;
    let relevance_rows = vec![
        correlation_row("relevant", &relevance.relevant),
        correlation_row("non_relevant", &relevance.non_relevant),
        correlation_row("all", &relevance.all),
    ];
    out.write_csv("relevance.csv", &CORRELATION_COLUMNS, &relevance_rows)?;
    out.write_csv("density.csv", &["series", "x", "density"], &density_rows)?;
    out.write_csv(
        "histogram.csv",
        &["series", "bin_low", "bin_high", "count"],
        &histogram_rows,
    )?;

    let manifest = manifest.finish();
    out.write_json(
        "report.json",
        &Report {
            manifest: &manifest,
            body: ReportBody {
                num_classes: classes.num_classes(),
                subjects: datasets.len(),
                scores,
                correlation,
                relevance,
                groups,
                stratified,
                densities,
                performance,
            },
        },
    )
}
