//! One function per subcommand. Every subcommand reads its prerequisites
//! through the workspace manifest and writes its outputs atomically.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use renalseg::cohort::{
    generate_synthetic_cohort, load_case, load_clinical, nifti, save_clinical, split_dataset, Case, ClinicalRecord,
    DatasetSplit, PhantomTruth, NUM_CLASSES,
};
use renalseg::evalkit::{
    evaluate_case, postprocess, sliding_window_predict, CaseEval, EvalReport, HierarchicalClass, MetricKind,
    MetricSummary,
};
use renalseg::preprocess::{
    fit_intensity_stats, load_preprocessed, preprocess_case, save_preprocessed, PreprocessedCase,
};
use renalseg::select::{compute_sampling_weights, select_characteristics, SelectionResult};
use renalseg::stats::{compare_arms, PairedComparison, TestUsed};
use renalseg::train::{class_weights_from_counts, make_sampler, read_train_log, train, EpochLog, SamplingWeights};
use renalseg::unet3d::{load_checkpoint, Network};
use serde::{Deserialize, Serialize};

use crate::config::{json_diff, ExperimentConfig};
use crate::workspace::{commit_dir, staging_dir, Workspace};
use crate::{plots, Arm, CliError, Command};

pub const SPLIT: &str = "split.json";
pub const PREPROCESSED: &str = "preprocessed";
pub const SELECTION: &str = "selection/selection.json";
pub const WEIGHTS: &str = "selection/weights.json";
pub const VAL_EVAL: &str = "selection/val_eval.csv";
pub const COMPARISON: &str = "comparison.json";
pub const RUN_CONFIG: &str = "run_config.json";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const TRUTH: &str = "truth.json";

pub fn run_subcommand(command: &Command, cfg: &ExperimentConfig) -> Result<(), CliError> {
    match command {
        Command::ShowConfig => {
            println!("{}", serde_json::to_string_pretty(cfg).expect("config serializes"));
            return Ok(());
        }
        Command::Synth => return synth(cfg),
        _ => {}
    }
    let mut ws = Workspace::open(&cfg.paths.workdir)?;
    let result = match command {
        Command::Split => split(cfg, &mut ws),
        Command::Preprocess => preprocess(cfg, &mut ws),
        Command::Train { sampling } => train_arm(cfg, &mut ws, *sampling),
        Command::Retrain => train_arm(cfg, &mut ws, Arm::Cognizant),
        Command::SelectFeatures => select_features(cfg, &mut ws),
        Command::Predict { arm } => predict(cfg, &mut ws, *arm),
        Command::Evaluate { arm } => evaluate(cfg, &mut ws, *arm),
        Command::Compare => compare(cfg, &mut ws),
        Command::Report => report(cfg, &mut ws),
        Command::ShowConfig | Command::Synth => unreachable!(),
    };
    // keep hashes of whatever was completed, even on failure
    ws.save_manifest()?;
    result
}

// ---- cohort directory ----

fn image_path(cohort: &Path, id: &str) -> PathBuf {
    cohort.join("images").join(format!("{id}.nii.gz"))
}

fn label_path(cohort: &Path, id: &str, group: usize) -> PathBuf {
    cohort.join("labels").join(format!("{id}_g{group}.nii.gz"))
}

fn synth(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let cohort = generate_synthetic_cohort(&cfg.synth)?;
    let dest = &cfg.paths.cohort;
    let st = staging_dir(dest)?;
    for case in &cohort.cases {
        let id = case.case_id();
        let p = image_path(&st, id);
        fs::create_dir_all(p.parent().unwrap()).map_err(|e| CliError::io(&p, e))?;
        nifti::write_image(&p, &case.image)?;
        for (g, a) in case.annotations.iter().enumerate() {
            let p = label_path(&st, id, g);
            fs::create_dir_all(p.parent().unwrap()).map_err(|e| CliError::io(&p, e))?;
            nifti::write_labels(&p, a)?;
        }
    }
    let records: Vec<ClinicalRecord> = cohort.cases.iter().map(|c| c.clinical.clone()).collect();
    save_clinical(&st.join("clinical.json"), &records)?;
    let truth = serde_json::to_vec_pretty(&cohort.truth).map_err(|e| CliError::Failed(e.to_string()))?;
    fs::write(st.join(TRUTH), truth).map_err(|e| CliError::io(&st, e))?;
    commit_dir(&st, dest)?;
    eprintln!("synth: {} cases written to {}", cohort.cases.len(), dest.display());
    Ok(())
}

fn clinical_records(cfg: &ExperimentConfig) -> Result<Vec<ClinicalRecord>, CliError> {
    let p = cfg.paths.cohort.join("clinical.json");
    if !p.is_file() {
        return Err(CliError::Missing(p));
    }
    Ok(load_clinical(&p)?)
}

fn records_for(records: &[ClinicalRecord], ids: &[String]) -> Result<Vec<ClinicalRecord>, CliError> {
    let by_id: BTreeMap<&str, &ClinicalRecord> = records.iter().map(|r| (r.case_id.as_str(), r)).collect();
    ids.iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|r| (*r).clone())
                .ok_or_else(|| CliError::Failed(format!("no clinical record for {id}")))
        })
        .collect()
}

fn load_raw_case(cohort: &Path, record: &ClinicalRecord) -> Result<Case, CliError> {
    let id = &record.case_id;
    let img = image_path(cohort, id);
    if !img.is_file() {
        return Err(CliError::Missing(img));
    }
    let labels: Vec<PathBuf> = (0..).map(|g| label_path(cohort, id, g)).take_while(|p| p.is_file()).collect();
    if labels.is_empty() {
        return Err(CliError::Missing(label_path(cohort, id, 0)));
    }
    Ok(load_case(&img, &labels, record.clone())?)
}

pub fn read_truth(cohort: &Path) -> Option<Vec<PhantomTruth>> {
    let text = fs::read_to_string(cohort.join(TRUTH)).ok()?;
    serde_json::from_str(&text).ok()
}

// ---- split / preprocess ----

fn split(cfg: &ExperimentConfig, ws: &mut Workspace) -> Result<(), CliError> {
    let ids: Vec<String> = clinical_records(cfg)?.into_iter().map(|r| r.case_id).collect();
    let s = split_dataset(&ids, cfg.split.fractions, cfg.split.seed).map_err(|e| CliError::Config(e.to_string()))?;
    ws.write_json(SPLIT, &s)?;
    eprintln!("split: {} train, {} val, {} test", s.train_ids.len(), s.val_ids.len(), s.test_ids.len());
    Ok(())
}

fn preprocess(cfg: &ExperimentConfig, ws: &mut Workspace) -> Result<(), CliError> {
    let split: DatasetSplit = ws.read_json(SPLIT)?;
    let records = clinical_records(cfg)?;
    let train_cases = records_for(&records, &split.train_ids)?
        .iter()
        .map(|r| load_raw_case(&cfg.paths.cohort, r))
        .collect::<Result<Vec<_>, _>>()?;
    let stats = fit_intensity_stats(&train_cases)?;
    let dest = ws.path(PREPROCESSED);
    let st = staging_dir(&dest)?;
    let target = cfg.preprocess.target_spacing;
    for case in &train_cases {
        save_preprocessed(&st.join(case.case_id()), &preprocess_case(case, target, &stats)?, &stats)?;
    }
    drop(train_cases);
    let rest: Vec<String> = split.val_ids.iter().chain(&split.test_ids).cloned().collect();
    for r in records_for(&records, &rest)? {
        let case = load_raw_case(&cfg.paths.cohort, &r)?;
        save_preprocessed(&st.join(case.case_id()), &preprocess_case(&case, target, &stats)?, &stats)?;
    }
    fs::write(st.join("intensity_stats.json"), serde_json::to_vec_pretty(&stats).unwrap())
        .map_err(|e| CliError::io(&st, e))?;
    commit_dir(&st, &dest)?;
    ws.record_dir(PREPROCESSED)?;
    eprintln!("preprocess: {} cases, stats {stats:?}", split.all_ids().count());
    Ok(())
}

fn load_cases(ws: &Workspace, ids: &[String]) -> Result<Vec<PreprocessedCase>, CliError> {
    ws.require_dir(PREPROCESSED)?;
    ids.iter()
        .map(|id| {
            let dir = ws.path(&format!("{PREPROCESSED}/{id}"));
            if !dir.is_dir() {
                return Err(CliError::Missing(dir));
            }
            Ok(load_preprocessed(&dir)?.0)
        })
        .collect()
}

// ---- training ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingRef {
    Uniform,
    Weights { path: String, sha256: String },
}

/// Everything that determines a training run. The two arms must differ in
/// `sampling` only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub split_sha256: String,
    pub sampling: SamplingRef,
}

fn arm_dir(arm: Arm) -> &'static str {
    arm.name()
}

fn class_counts(cases: &[PreprocessedCase]) -> [u64; NUM_CLASSES] {
    let mut counts = [0u64; NUM_CLASSES];
    for c in cases {
        for &l in c.annotations[0].voxels.as_slice() {
            counts[l as usize] += 1;
        }
    }
    counts
}

fn train_arm(cfg: &ExperimentConfig, ws: &mut Workspace, arm: Arm) -> Result<(), CliError> {
    let split: DatasetSplit = ws.read_json(SPLIT)?;
    let split_sha256 = ws.manifest().artifacts.get(SPLIT).cloned().unwrap_or_default();
    let (weights, sampling) = match arm {
        Arm::Uniform => (None, SamplingRef::Uniform),
        Arm::Cognizant => {
            let raw: BTreeMap<String, f64> = ws.read_json(WEIGHTS)?;
            let sha256 = ws.manifest().artifacts.get(WEIGHTS).cloned().unwrap_or_default();
            (Some(SamplingWeights::new(raw)?), SamplingRef::Weights { path: WEIGHTS.into(), sha256 })
        }
    };
    let run_cfg = RunConfig { experiment: cfg.clone(), split_sha256, sampling };
    if arm == Arm::Cognizant {
        let base: RunConfig = ws.read_json(&format!("{}/{RUN_CONFIG}", arm_dir(Arm::Uniform)))?;
        let diff = json_diff(&serde_json::to_value(&base).unwrap(), &serde_json::to_value(&run_cfg).unwrap());
        let outside: Vec<&String> =
            diff.iter().filter(|p| !(p.as_str() == "sampling" || p.starts_with("sampling."))).collect();
        if !outside.is_empty() {
            return Err(CliError::Config(format!(
                "the cognizant arm must differ from the uniform arm only in its sampling weights; also differs in {outside:?}"
            )));
        }
    }

    let train_cases = load_cases(ws, &split.train_ids)?;
    let val_cases = load_cases(ws, &split.val_ids)?;
    let derived = class_weights_from_counts(class_counts(&train_cases))?;
    let loss = cfg.loss_config(Some(derived));
    let mut sampler = make_sampler(&split.train_ids, weights.as_ref(), cfg.train.seed)?;
    let mut net = Network::<f32>::build(&cfg.network.network, cfg.network.init_seed)?;

    let rel = arm_dir(arm);
    let dest = ws.path(rel);
    let st = staging_dir(&dest)?;
    let bytes = serde_json::to_vec_pretty(&run_cfg).unwrap();
    fs::write(st.join(RUN_CONFIG), bytes).map_err(|e| CliError::io(&st, e))?;
    let started = std::time::Instant::now();
    let out = train(&mut net, &train_cases, &val_cases, &mut sampler, &cfg.patch(), &cfg.train, &loss, &st)?;
    commit_dir(&st, &dest)?;
    ws.record_dir(rel)?;
    for h in &out.history {
        eprintln!("{rel} epoch {:>3}: train {:.4}  val {:.4}  lr {:.2e}", h.epoch, h.train_loss, h.val_loss, h.lr);
    }
    eprintln!(
        "{rel}: best epoch {} (val {:.4}), {:.0} s",
        out.best_epoch,
        out.best_val_loss,
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn load_network(path: &Path) -> Result<Network<f32>, CliError> {
    let ckpt = load_checkpoint(path)?;
    let mut net = Network::<f32>::build(&ckpt.config, 0)?;
    net.load_params(ckpt.params)?;
    Ok(net)
}

fn segment(
    net: &Network<f32>,
    case: &PreprocessedCase,
    cfg: &ExperimentConfig,
) -> Result<renalseg::cohort::LabelMap, CliError> {
    Ok(postprocess(&sliding_window_predict(net, &case.image, cfg.preprocess.patch_size)?))
}

fn evaluate_against(
    pred: &renalseg::cohort::LabelMap,
    case: &PreprocessedCase,
    cfg: &ExperimentConfig,
) -> Result<CaseEval, CliError> {
    Ok(evaluate_case(pred, &case.annotations, case.annotations[0].spacing, &cfg.evaluation)?)
}

// ---- selection ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionArtifact {
    pub tumor_dice: BTreeMap<String, f64>,
    pub selection: SelectionResult,
    /// Why nothing was selected, when the problem is degenerate.
    pub note: Option<String>,
}

const TUMOR: usize = 2;

fn select_features(cfg: &ExperimentConfig, ws: &mut Workspace) -> Result<(), CliError> {
    debug_assert_eq!(HierarchicalClass::ALL[TUMOR], HierarchicalClass::Tumor);
    let split: DatasetSplit = ws.read_json(SPLIT)?;
    let ckpt = ws.require(&format!("{}/best.ckpt", arm_dir(Arm::Uniform)))?;
    let net = load_network(&ckpt)?;
    let val_cases = load_cases(ws, &split.val_ids)?;
    let mut evals = Vec::with_capacity(val_cases.len());
    for case in &val_cases {
        let pred = segment(&net, case, cfg)?;
        evals.push(evaluate_against(&pred, case, cfg)?);
    }
    let report = EvalReport::new("uniform_validation", evals)?;
    let tumor_dice: BTreeMap<String, f64> = report.cases.iter().map(|c| (c.case_id.clone(), c.dice[TUMOR])).collect();

    let records = clinical_records(cfg)?;
    let val_records = records_for(&records, &split.val_ids)?;
    let train_records = records_for(&records, &split.train_ids)?;
    let (selection, note) = select_characteristics(&val_records, &tumor_dice, &train_records, &cfg.selection)?;
    let weights = compute_sampling_weights(&selection, &train_records)?;

    ws.write_bytes(VAL_EVAL, report.to_csv().as_bytes())?;
    ws.write_json(SELECTION, &SelectionArtifact { tumor_dice, selection: selection.clone(), note: note.clone() })?;
    ws.write_json(WEIGHTS, &weights)?;
    match note {
        Some(n) => eprintln!("select-features: nothing selected ({n}); weights are uniform"),
        None => {
            for s in &selection.selected {
                eprintln!("select-features: {} coefficient {:+.4}", s.column.name, s.coefficient);
            }
            if selection.selected.is_empty() {
                eprintln!("select-features: no characteristic survives at lambda_1se; weights are uniform");
            }
        }
    }
    Ok(())
}

// ---- predict / evaluate / compare ----

fn prediction_dir(arm: Arm) -> String {
    format!("predictions/{}", arm.name())
}

fn predict(cfg: &ExperimentConfig, ws: &mut Workspace, arm: Arm) -> Result<(), CliError> {
    let split: DatasetSplit = ws.read_json(SPLIT)?;
    let net = load_network(&ws.require(&format!("{}/best.ckpt", arm_dir(arm)))?)?;
    let rel = prediction_dir(arm);
    let dest = ws.path(&rel);
    let st = staging_dir(&dest)?;
    for case in load_cases(ws, &split.test_ids)? {
        let pred = segment(&net, &case, cfg)?;
        nifti::write_labels(&st.join(format!("{}.nii.gz", case.case_id())), &pred)?;
    }
    commit_dir(&st, &dest)?;
    ws.record_dir(&rel)?;
    eprintln!("predict: {} test cases with the {} arm", split.test_ids.len(), arm.name());
    Ok(())
}

fn eval_csv(arm: Arm) -> String {
    format!("eval/{}.csv", arm.name())
}

fn evaluate(cfg: &ExperimentConfig, ws: &mut Workspace, arm: Arm) -> Result<(), CliError> {
    let split: DatasetSplit = ws.read_json(SPLIT)?;
    let mut evals = Vec::new();
    for case in load_cases(ws, &split.test_ids)? {
        let p = ws.require(&format!("{}/{}.nii.gz", prediction_dir(arm), case.case_id()))?;
        let pred = nifti::read_labels(&p, case.case_id(), 0)?;
        evals.push(evaluate_against(&pred, &case, cfg)?);
    }
    let report = EvalReport::new(arm.name(), evals)?;
    ws.write_bytes(&eval_csv(arm), report.to_csv().as_bytes())?;
    ws.write_json(&format!("eval/{}_summary.json", arm.name()), &report.summary()?)?;
    for (name, s) in &report.summary()?.metrics {
        eprintln!("evaluate {}: {name} mean {:.3} (sd {:.3})", arm.name(), s.mean, s.sd);
    }
    Ok(())
}

fn read_report(ws: &Workspace, arm: Arm) -> Result<EvalReport, CliError> {
    let p = ws.require(&eval_csv(arm))?;
    Ok(EvalReport::read(arm.name(), &p)?)
}

/// One row of the comparison table: both arms' summaries and the test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub uniform: MetricSummary,
    pub cognizant: MetricSummary,
    pub test_used: TestUsed,
    pub normality_p: Option<f64>,
    pub statistic: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub alpha: f64,
    pub n_cases: usize,
    pub rows: Vec<ComparisonRow>,
    pub details: Vec<PairedComparison>,
}

fn compare(cfg: &ExperimentConfig, ws: &mut Workspace) -> Result<(), CliError> {
    let base = read_report(ws, Arm::Uniform)?;
    let cog = read_report(ws, Arm::Cognizant)?;
    let details = compare_arms(&base, &cog, cfg.stats.alpha)?;
    let rows = details
        .iter()
        .map(|d| {
            Ok(ComparisonRow {
                metric: d.metric.clone(),
                uniform: MetricSummary::of(&d.baseline)?,
                cognizant: MetricSummary::of(&d.cognizant)?,
                test_used: d.test_used,
                normality_p: d.normality_p,
                statistic: d.statistic,
                p_value: d.p_value,
                significant: d.significant,
            })
        })
        .collect::<Result<Vec<_>, renalseg::Error>>()?;
    let out = ComparisonReport { alpha: cfg.stats.alpha, n_cases: base.cases.len(), rows, details };
    ws.write_json(COMPARISON, &out)?;
    eprintln!("compare: {} metrics over {} paired cases", out.rows.len(), out.n_cases);
    Ok(())
}

// ---- report ----

/// Share of logged draws that fall on the generator's hard cases, and the
/// share the weights imply.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgroupSampling {
    pub hard_train_cases: usize,
    pub train_cases: usize,
    pub draws: usize,
    pub observed_hard_share: f64,
    pub expected_hard_share: f64,
    pub mean_weight_hard: f64,
    pub mean_weight_easy: f64,
}

pub fn subgroup_sampling(
    logs: &[EpochLog],
    weights: &SamplingWeights,
    hard: &BTreeSet<String>,
) -> Option<SubgroupSampling> {
    let (mut wh, mut we, mut nh, mut ne) = (0.0, 0.0, 0usize, 0usize);
    for (id, w) in &weights.weights {
        if hard.contains(id) {
            wh += w;
            nh += 1;
        } else {
            we += w;
            ne += 1;
        }
    }
    if nh == 0 || ne == 0 {
        return None;
    }
    let draws: Vec<&String> = logs.iter().flat_map(|l| &l.sampled_case_ids).collect();
    let observed = draws.iter().filter(|id| hard.contains(id.as_str())).count() as f64 / draws.len().max(1) as f64;
    Some(SubgroupSampling {
        hard_train_cases: nh,
        train_cases: nh + ne,
        draws: draws.len(),
        observed_hard_share: observed,
        expected_hard_share: wh / (wh + we),
        mean_weight_hard: wh / nh as f64,
        mean_weight_easy: we / ne as f64,
    })
}

fn fmt_summary(s: &MetricSummary) -> (String, String) {
    (format!("{:.3} ({:.3})", s.mean, s.sd), format!("{:.3} ({:.3}-{:.3})", s.median, s.q25, s.q75))
}

fn report(cfg: &ExperimentConfig, ws: &mut Workspace) -> Result<(), CliError> {
    let comparison: ComparisonReport = ws.read_json(COMPARISON)?;
    let selection: SelectionArtifact = ws.read_json(SELECTION)?;
    let raw: BTreeMap<String, f64> = ws.read_json(WEIGHTS)?;
    let weights = SamplingWeights::new(raw)?;
    let base = read_report(ws, Arm::Uniform)?;
    let cog = read_report(ws, Arm::Cognizant)?;

    let mut md = String::new();
    md.push_str("# Uniform vs cognizant sampling\n\n");
    md.push_str(&format!("Test cases: {}. Significance level: {}.\n\n", comparison.n_cases, comparison.alpha));
    md.push_str("| Metric | Uniform mean (SD) | Uniform median (25-75 PR) | Cognizant mean (SD) | Cognizant median (25-75 PR) | Test | p |\n");
    md.push_str("|---|---|---|---|---|---|---|\n");
    for r in &comparison.rows {
        let (um, uq) = fmt_summary(&r.uniform);
        let (cm, cq) = fmt_summary(&r.cognizant);
        let test = match r.test_used {
            TestUsed::PairedT => "paired t",
            TestUsed::Wilcoxon => "Wilcoxon",
        };
        let p = if r.p_value < 0.001 { "<0.001".to_string() } else { format!("{:.3}", r.p_value) };
        md.push_str(&format!(
            "| {} | {um} | {uq} | {cm} | {cq} | {test} | {p}{} |\n",
            r.metric,
            if r.significant { "*" } else { "" }
        ));
    }
    md.push_str("\n## Selected characteristics\n\n");
    if let Some(n) = &selection.note {
        md.push_str(&format!("None ({n}).\n"));
    } else if selection.selection.selected.is_empty() {
        md.push_str("None at lambda_1se.\n");
    } else {
        md.push_str(&format!(
            "lambda_min = {:.4e}, lambda_1se = {:.4e}\n\n| Characteristic | Coefficient | Training frequency |\n|---|---|---|\n",
            selection.selection.lambda_min, selection.selection.lambda_1se
        ));
        for s in &selection.selection.selected {
            let f = selection.selection.frequencies.get(&s.column.name).copied().unwrap_or(f64::NAN);
            md.push_str(&format!("| {} | {:+.4} | {:.3} |\n", s.column.name, s.coefficient, f));
        }
    }
    let wv: Vec<f64> = weights.weights.values().copied().collect();
    md.push_str(&format!(
        "\nSampling weights: {} cases, min {:.3}, max {:.3}.\n",
        wv.len(),
        wv.iter().cloned().fold(f64::INFINITY, f64::min),
        wv.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    ));

    if let Some(truth) = read_truth(&cfg.paths.cohort) {
        let hard: BTreeSet<String> = truth.iter().filter(|t| t.hard).map(|t| t.case_id.clone()).collect();
        let log = ws.require(&format!("{}/{TRAIN_LOG}", arm_dir(Arm::Cognizant)))?;
        if let Some(s) = subgroup_sampling(&read_train_log(&log)?, &weights, &hard) {
            md.push_str(&format!(
                "\nHard subgroup: {} of {} training cases; share of cognizant draws {:.4} (weights imply {:.4}); mean weight hard {:.3} vs easy {:.3}.\n",
                s.hard_train_cases, s.train_cases, s.observed_hard_share, s.expected_hard_share, s.mean_weight_hard, s.mean_weight_easy
            ));
            ws.write_json("report/subgroup_sampling.json", &s)?;
        }
    }

    let dir = ws.path("report");
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let svg = plots::cv_curve(selection.selection.path.as_ref())?;
    ws.write_bytes("report/cv_curve.svg", svg.as_bytes())?;
    let svg = plots::weight_histogram(&wv)?;
    ws.write_bytes("report/weights_hist.svg", svg.as_bytes())?;
    let groups: Vec<(String, Vec<f64>, Vec<f64>)> = HierarchicalClass::ALL
        .iter()
        .map(|&c| (c.name().to_string(), base.values(c, MetricKind::Dice), cog.values(c, MetricKind::Dice)))
        .collect();
    let svg = plots::dice_boxplots(&groups)?;
    ws.write_bytes("report/dice_boxplots.svg", svg.as_bytes())?;
    md.push_str("\nPlots: `cv_curve.svg`, `weights_hist.svg`, `dice_boxplots.svg`.\n");
    ws.write_bytes("report/report.md", md.as_bytes())?;
    eprintln!("report: written to {}", dir.display());
    Ok(())
}
