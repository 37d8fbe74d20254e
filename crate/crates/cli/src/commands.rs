use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use serde::Serialize;
use seplab_core::attacks::{attack_dataset, correctly_classified};
use seplab_core::data::{gen_blobs, gen_spiral, split, subsample, write_dataset, SpiralParams, SpiralTransform};
use seplab_core::lipschitz::empirical_lipschitz;
use seplab_core::nn::{load_model, save_model};
use seplab_core::report::{
    to_json_string, write_experiment_csv, write_histogram_csv, write_history_csv, write_json, CertificateRow,
};
use seplab_core::separation::{cross_class_nn, flag_outliers, histogram, prune_to_separation};
use seplab_core::training::{evaluate, train};
use seplab_core::{
    data::random_relabel, AttackConfig, AttackKind, Dataset, DistanceClassifier, LipschitzConfig, Metric, SeparationMode,
    TrainConfig,
};

use crate::args::*;
use crate::dataset;
use crate::error::{CliError, CliResult};
use crate::runfile;

/// What a command read and wrote; the first output is the primary one.
pub struct Ran {
    pub outputs: Vec<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub seeds: BTreeMap<String, u64>,
    pub config: serde_json::Value,
}

fn config_of<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).expect("arguments serialize")
}

fn seeds(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn print_stdout(value: &impl Serialize) -> CliResult<()> {
    let text = to_json_string(value)?;
    std::io::stdout()
        .write_all(text.as_bytes())
        .map_err(|e| CliError::data(format!("stdout: {e}")))
}

pub fn separation(a: &SeparationArgs) -> CliResult<Ran> {
    let mut inputs = Vec::new();
    let mut references = dataset::load(&a.references, &mut inputs)?;
    let report = match a.mode {
        SeparationMode::TrainTrain => {
            if a.queries.as_ref().is_some_and(|q| q != &a.references) {
                return Err(CliError::usage(
                    "train-train mode compares a set with itself; pass only --references",
                ));
            }
            if a.random_labels {
                references = random_relabel(&references, a.seed)?;
            }
            cross_class_nn(&references, &references, a.metric, true)?
        }
        SeparationMode::TestTrain => {
            let q = a
                .queries
                .as_deref()
                .ok_or_else(|| CliError::usage("test-train mode needs --queries"))?;
            let mut queries = dataset::load(q, &mut inputs)?;
            if a.random_labels {
                references = random_relabel(&references, a.seed)?;
                queries = random_relabel(&queries, a.seed.wrapping_add(1))?;
            }
            cross_class_nn(&queries, &references, a.metric, false)?
        }
    };
    write_json(&report, &a.out)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(h) = &a.hist {
        write_histogram_csv(&histogram(&report, a.hist_bin)?, h)?;
        outputs.push(h.clone());
    }
    if let Some(t) = a.flag_below {
        let flagged = flag_outliers(&report, t)?;
        eprintln!("{} records at distance <= {t}", flagged.len());
        match &a.flagged {
            Some(p) => {
                write_json(&flagged, p)?;
                outputs.push(p.clone());
            }
            None => print_stdout(&flagged)?,
        }
    }
    match (report.min, report.mean) {
        (Some(min), Some(mean)) => eprintln!("n {} min {min:.6} mean {mean:.6}", report.n),
        _ => eprintln!("n {}: no differently-labeled reference found", report.n),
    }
    Ok(Ran {
        outputs,
        inputs,
        seeds: if a.random_labels { seeds(&[("labels", a.seed)]) } else { BTreeMap::new() },
        config: config_of(a),
    })
}

#[derive(Serialize)]
struct CertifyReport {
    metric: Metric,
    radius: f64,
    astuteness: f64,
    rows: Vec<CertificateRow>,
}

pub fn certify(a: &CertifyArgs) -> CliResult<Ran> {
    let mut inputs = Vec::new();
    let train_ds = dataset::load(&a.train, &mut inputs)?;
    let test_ds = dataset::load(&a.test, &mut inputs)?;
    let clf = DistanceClassifier::from_dataset(&train_ds, a.radius, a.metric)?;
    let certs = clf.certify_all(&test_ds)?;
    let rows: Vec<CertificateRow> = certs
        .iter()
        .enumerate()
        .map(|(index, c)| CertificateRow {
            index,
            predicted: c.predicted,
            true_label: test_ds.label(index),
            margin: c.margin,
            certified_radius: c.certified_radius,
        })
        .collect();
    let astuteness = clf.astuteness(&test_ds, a.radius)?;
    eprintln!("astuteness at {}: {astuteness:.6}", a.radius);
    write_json(
        &CertifyReport {
            metric: a.metric,
            radius: a.radius,
            astuteness,
            rows,
        },
        &a.out,
    )?;
    Ok(Ran {
        outputs: vec![a.out.clone()],
        inputs,
        seeds: BTreeMap::new(),
        config: config_of(a),
    })
}

#[derive(Serialize)]
struct ResolvedTrain<'a> {
    train: &'a str,
    test: &'a str,
    config: &'a TrainConfig,
}

pub fn train_cmd(a: &TrainArgs) -> CliResult<Ran> {
    let mut inputs = Vec::new();
    let text = fs::read_to_string(&a.config)
        .map_err(|e| CliError::data(format!("{}: {e}", a.config.display())))?;
    inputs.push(a.config.clone());
    let rf = runfile::parse(&text)?;
    let train_spec = a
        .train
        .clone()
        .or(rf.train)
        .ok_or_else(|| CliError::usage("no training set: give `train` in the run file or --train"))?;
    let test_spec = a
        .test
        .clone()
        .or(rf.test)
        .ok_or_else(|| CliError::usage("no test set: give `test` in the run file or --test"))?;
    let train_ds = dataset::load(&train_spec, &mut inputs)?;
    let test_ds = dataset::load(&test_spec, &mut inputs)?;
    let (net, history) = train(&rf.config, &train_ds, &test_ds)?;
    save_model(&net, &a.out)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(h) = &a.history {
        write_history_csv(&history, h)?;
        outputs.push(h.clone());
    }
    if let Some(last) = history.last() {
        eprintln!(
            "{} epochs, final loss {:.6}, train accuracy {:.4}",
            history.len(),
            last.loss,
            last.train_acc
        );
    }
    let config = serde_json::json!({
        "args": config_of(a),
        "resolved": config_of(&ResolvedTrain { train: &train_spec, test: &test_spec, config: &rf.config }),
    });
    Ok(Ran {
        outputs,
        inputs,
        seeds: seeds(&[("train", rf.config.seed), ("inner_attack", rf.config.inner.seed)]),
        config,
    })
}

fn attack_config(kind: AttackKind, epsilon: f64, seed: u64) -> AttackConfig {
    match kind {
        AttackKind::Pgd => AttackConfig::pgd(epsilon),
        AttackKind::Mt => AttackConfig::multi_targeted(epsilon),
    }
    .with_seed(seed)
}

#[derive(Serialize)]
struct AttackRow {
    index: usize,
    label: u32,
    clean_correct: bool,
    success: bool,
    loss_achieved: f64,
    adversarial_point: Vec<f64>,
}

#[derive(Serialize)]
struct AttackReport {
    method: AttackKind,
    config: AttackConfig,
    clean_accuracy: f64,
    adv_accuracy: f64,
    outcomes: Vec<AttackRow>,
}

pub fn attack(a: &AttackArgs) -> CliResult<Ran> {
    let mut inputs = Vec::new();
    dataset::existing(&a.model, &mut inputs)?;
    let net = load_model(&a.model)?;
    let ds = dataset::load(&a.data, &mut inputs)?;
    let mut cfg = attack_config(a.method, a.epsilon, a.seed);
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(s) = a.step_size {
        cfg.step_size = s;
    }
    if let Some(r) = a.random_start {
        cfg.random_start = r;
    }
    cfg.restarts = a.restarts;
    cfg.validate()?;
    let outcomes = attack_dataset(&net, &ds, &cfg, a.method)?;
    let mut rows = Vec::with_capacity(ds.len());
    for (index, o) in outcomes.into_iter().enumerate() {
        let label = ds.label(index);
        let clean_correct = correctly_classified(&net.logits(&ds.row(index))?, label);
        rows.push(AttackRow {
            index,
            label,
            clean_correct,
            success: o.success,
            loss_achieved: o.loss_achieved,
            adversarial_point: o.adversarial_point,
        });
    }
    let n = rows.len() as f64;
    let clean_accuracy = rows.iter().filter(|r| r.clean_correct).count() as f64 / n;
    let adv_accuracy = rows.iter().filter(|r| r.clean_correct && !r.success).count() as f64 / n;
    eprintln!("clean accuracy {clean_accuracy:.4}, adversarial accuracy {adv_accuracy:.4}");
    write_json(
        &AttackReport {
            method: a.method,
            config: cfg,
            clean_accuracy,
            adv_accuracy,
            outcomes: rows,
        },
        &a.out,
    )?;
    Ok(Ran {
        outputs: vec![a.out.clone()],
        inputs,
        seeds: seeds(&[("attack", a.seed)]),
        config: config_of(a),
    })
}

#[derive(Serialize)]
struct LipschitzReport {
    config: LipschitzConfig,
    mean: f64,
    per_example: Vec<f64>,
}

pub fn lipschitz(a: &LipschitzArgs) -> CliResult<Ran> {
    let mut inputs = Vec::new();
    dataset::existing(&a.model, &mut inputs)?;
    let net = load_model(&a.model)?;
    let ds = dataset::load(&a.data, &mut inputs)?;
    let cfg = LipschitzConfig {
        steps: a.steps,
        step_size: a.step_size.unwrap_or(a.epsilon / 5.0),
        seed: a.seed,
        ..LipschitzConfig::new(a.epsilon)
    };
    let est = empirical_lipschitz(&net, &ds, &cfg)?;
    eprintln!("mean local Lipschitz constant {:.6}", est.mean);
    write_json(
        &LipschitzReport {
            config: cfg,
            mean: est.mean,
            per_example: est.per_example,
        },
        &a.out,
    )?;
    Ok(Ran {
        outputs: vec![a.out.clone()],
        inputs,
        seeds: seeds(&[("lipschitz", a.seed)]),
        config: config_of(a),
    })
}

pub fn evaluate_cmd(a: &EvaluateArgs) -> CliResult<Ran> {
    let mut inputs = Vec::new();
    dataset::existing(&a.model, &mut inputs)?;
    let net = load_model(&a.model)?;
    let train_ds = dataset::load(&a.train, &mut inputs)?;
    let test_ds = dataset::load(&a.test, &mut inputs)?;
    let attack = attack_config(a.attack, a.epsilon, a.seed);
    let lip = LipschitzConfig {
        seed: a.seed,
        ..LipschitzConfig::new(a.lipschitz_epsilon.unwrap_or(a.epsilon))
    };
    let report = evaluate(&net, &train_ds, &test_ds, &attack, a.attack, &lip)?;
    eprintln!(
        "test accuracy {:.4}, adversarial test accuracy {:.4}, Lipschitz {:.4}",
        report.test_acc, report.adv_test_acc, report.test_lipschitz
    );
    write_json(&report, &a.out)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(c) = &a.csv {
        write_experiment_csv(&[(a.label.clone(), report)], c)?;
        outputs.push(c.clone());
    }
    Ok(Ran {
        outputs,
        inputs,
        seeds: seeds(&[("attack", a.seed), ("lipschitz", a.seed)]),
        config: config_of(a),
    })
}

#[derive(Serialize)]
struct SpiralSummary {
    transform: SpiralTransform,
    n_train: usize,
    n_test: usize,
    class_counts: Vec<usize>,
}

/// Spiral points, shuffled with `seed + 1` and pruned to an r-separated set
/// when either is requested, then split with the last `test_fraction`
/// going to the second set.
pub fn spiral_fixture(
    params: &SpiralParams,
    prune_radius: Option<f64>,
    metric: Metric,
    test_fraction: Option<f64>,
) -> CliResult<(Dataset, Option<Dataset>, SpiralTransform)> {
    let sp = gen_spiral(params)?;
    let mut ds = sp.dataset;
    if prune_radius.is_some() || test_fraction.is_some() {
        ds = subsample(&ds, ds.len(), params.seed.wrapping_add(1), false)?;
    }
    if let Some(r) = prune_radius {
        ds = prune_to_separation(&ds, r, metric)?;
    }
    match test_fraction {
        Some(f) => {
            if !(f > 0.0 && f < 1.0) {
                return Err(CliError::usage(format!("test fraction must be in (0, 1), got {f}")));
            }
            let n_test = ((ds.len() as f64) * f).round() as usize;
            let (tr, te) = split(&ds, ds.len() - n_test)?;
            Ok((tr, Some(te), sp.transform))
        }
        None => Ok((ds, None, sp.transform)),
    }
}

pub fn spiral(a: &SpiralArgs) -> CliResult<Ran> {
    let params = SpiralParams {
        n_per_class: a.n_per_class,
        x_range_max: a.x_range_max,
        noise: a.noise,
        seed: a.seed,
    };
    let (train_ds, test_ds, transform) = spiral_fixture(&params, a.prune_radius, a.metric, a.test_fraction)?;
    write_dataset(&train_ds, &a.out)?;
    let mut outputs = vec![a.out.clone()];
    let mut class_counts = train_ds.class_counts();
    let n_test = match (&test_ds, &a.test_out) {
        (Some(te), Some(p)) => {
            write_dataset(te, p)?;
            outputs.push(p.clone());
            for (c, k) in class_counts.iter_mut().zip(te.class_counts()) {
                *c += k;
            }
            te.len()
        }
        _ => 0,
    };
    eprintln!("{} training points, {n_test} test points", train_ds.len());
    print_stdout(&SpiralSummary {
        transform,
        n_train: train_ds.len(),
        n_test,
        class_counts,
    })?;
    let mut s = seeds(&[("spiral", a.seed)]);
    if a.prune_radius.is_some() || a.test_fraction.is_some() {
        s.insert("shuffle".into(), a.seed.wrapping_add(1));
    }
    Ok(Ran {
        outputs,
        inputs: Vec::new(),
        seeds: s,
        config: config_of(a),
    })
}

pub fn parse_centers(text: &str) -> CliResult<Vec<Vec<f64>>> {
    text.split(';')
        .map(|c| {
            c.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| CliError::usage(format!("--centers: `{v}`: {e}")))
                })
                .collect()
        })
        .collect()
}

pub fn blobs(a: &BlobsArgs) -> CliResult<Ran> {
    let centers = parse_centers(&a.centers)?;
    let ds = gen_blobs(&centers, a.spread, a.n_per_class, a.seed)?;
    write_dataset(&ds, &a.out)?;
    eprintln!("{} points in {} classes", ds.len(), centers.len());
    Ok(Ran {
        outputs: vec![a.out.clone()],
        inputs: Vec::new(),
        seeds: seeds(&[("blobs", a.seed)]),
        config: config_of(a),
    })
}
