//! Experiment dispatch. Each kind writes its artifacts, plots and record into
//! `cfg.out_dir`.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::config::{ExperimentConfig, ExperimentKind};
use super::io::{load_dataset, train_test_split, write_image};
use super::plots::emit_plots;
use super::record::{write_atomic, Curve, ResultRecord};
use crate::accountant::{
    achieved_epsilon_strategy1, achieved_epsilon_strategy2, alpha_grid_epsilon_strategy1,
    best_lambda_strategy1, calibrate_strategy1, calibrate_strategy2, empirical_epsilon_lower_bound, AttackOutcomes,
    CalibrationInputs, DpBudget,
};
use crate::attack::{
    auc_pair_concordance, run_membership_experiment, AttackConfig, AttackReport, MembershipResult, ShadowConfig,
    TargetConfig, TargetTrainer,
};
use crate::data::Dataset;
use crate::error::{Error, Result, StageContext};
use crate::model::{accuracy, save_checkpoint, train_ensemble, ArchConfig, EnsembleModel, NoiseConfig, NoiseStrategy};
use crate::rademacher::{
    complexity_ode, complexity_sde, gbm_moment_oracle, sigma_expectation, sup_closed_form, sup_random_search_oracle,
    ComplexityParams, ComplexityReport, SampleSet, SigmaMethod, ENUMERATION_LIMIT,
};
use crate::rng::{derive_seed, stream, tags};
use crate::sde::{round_trip, ImageGrid, SdeMode, SdeRunConfig};

const DATA: u64 = 201;
const HOLDOUT: u64 = 202;
const MODEL: u64 = 203;
const SAMPLES: u64 = 204;
const SIGMA: u64 = 205;
const SEARCH: u64 = 206;
const GBM: u64 = 207;
const SDE: u64 = 208;
const REPEAT_BASE: u64 = 300;

/// Runs one experiment and persists its record. The returned record carries
/// wall-clock timings; the persisted `record.json` does not.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultRecord> {
    let start = Instant::now();
    let mut record = ResultRecord::new(cfg.kind.name(), cfg.seed, cfg.resolved.clone());
    match cfg.kind {
        ExperimentKind::Train => run_train(cfg, &mut record).stage("train")?,
        ExperimentKind::Attack => run_attack(cfg, &mut record).stage("attack")?,
        ExperimentKind::Accountant => run_accountant(cfg, &mut record).stage("accountant")?,
        ExperimentKind::Rademacher => run_rademacher(cfg, &mut record).stage("rademacher")?,
        ExperimentKind::SdeDemo => run_sde_demo(cfg, &mut record).stage("sde-demo")?,
        ExperimentKind::DpsgdCompare => run_dpsgd_compare(cfg, &mut record).stage("dpsgd-compare")?,
    }
    let plots = emit_plots(&record, &cfg.out_dir).stage("plots")?;
    record.artifacts.extend(plots.files);
    record.notes.extend(plots.note);
    record.artifacts.sort();
    record.timings.insert("total_seconds".into(), start.elapsed().as_secs_f64());
    record.write(&cfg.out_dir).stage("record")?;
    Ok(record)
}

fn load(cfg: &ExperimentConfig) -> Result<(Dataset, ArchConfig)> {
    let data = load_dataset(&cfg.dataset, &mut stream(cfg.seed, DATA)).stage("dataset")?;
    let arch = ArchConfig {
        input_dim: data.dim(),
        classes: data.classes,
        ..cfg.arch.clone()
    };
    arch.validate()?;
    Ok((data, arch))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Least-squares slope of `y` on `x`.
pub fn regression_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

fn run_train(cfg: &ExperimentConfig, record: &mut ResultRecord) -> Result<()> {
    let (data, arch) = load(cfg)?;
    let (train_set, test_set) = train_test_split(&data, cfg.dataset.test_fraction, &mut stream(cfg.seed, HOLDOUT))?;
    let model_seed = derive_seed(cfg.seed, MODEL);
    let mut ens = EnsembleModel::init(cfg.ensemble, &arch, cfg.noise, model_seed).stage("init")?;
    let tc = crate::model::TrainConfig {
        seed: model_seed,
        ..cfg.train.clone()
    };
    let histories = train_ensemble(&mut ens, &train_set, Some(&test_set), &tc).stage("training")?;

    let mut eval = stream(cfg.seed, tags::EVAL_NOISE);
    let train_acc = accuracy(&ens, &train_set, &mut eval)?;
    let test_acc = accuracy(&ens, &test_set, &mut eval)?;
    record.metric("train_size", train_set.len() as f64);
    record.metric("test_size", test_set.len() as f64);
    record.metric("train_accuracy", train_acc);
    record.metric("test_accuracy", test_acc);
    record.metric("generalization_gap", train_acc - test_acc);
    if let Some(last) = histories[0].last() {
        record.metric("member0.final_train_loss", last.train_loss);
    }

    let epochs = histories[0].epochs.len();
    let per_epoch = |f: &dyn Fn(&crate::model::EpochRecord) -> f64| -> Vec<(f64, f64)> {
        (0..epochs)
            .map(|e| {
                let vals: Vec<f64> = histories.iter().map(|h| f(&h.epochs[e])).collect();
                ((e + 1) as f64, mean(&vals))
            })
            .collect()
    };
    record.curves.push(
        Curve::new("accuracy_vs_epoch", "Mean member accuracy per epoch", "epoch", "accuracy")
            .with_series("train", per_epoch(&|r| r.train_accuracy))
            .with_series("test", per_epoch(&|r| r.test_accuracy.unwrap_or(f64::NAN))),
    );
    record.curves.push(
        Curve::new("loss_vs_epoch", "Mean member training loss", "epoch", "cross-entropy")
            .with_series("train", per_epoch(&|r| r.train_loss)),
    );
    let wall: f64 = histories.iter().map(|h| h.wall_seconds).sum();
    record.timings.insert("train_seconds".into(), wall);

    save_checkpoint(&cfg.out_dir.join("checkpoint.json"), &ens, cfg.seed).stage("checkpoint")?;
    record.artifacts.push("checkpoint.json".into());
    Ok(())
}

/// The noise configuration used at sweep level `gamma`.
fn noise_at(base: &NoiseConfig, gamma: f64) -> Result<NoiseConfig> {
    if gamma == 0.0 {
        return Ok(NoiseConfig::none());
    }
    let n = match base.strategy {
        NoiseStrategy::None => {
            return Err(Error::invalid(
                "a nonzero gamma in attack.gammas needs noise.strategy additive or multiplicative",
            ))
        }
        NoiseStrategy::AdditiveI => {
            let pi = if base.gamma > 0.0 { base.pi / base.gamma * gamma } else { gamma / 2.0 };
            NoiseConfig::additive_with(gamma, pi)
        }
        NoiseStrategy::MultiplicativeII => NoiseConfig::multiplicative(gamma, base.pi),
    };
    let n = n.with_eta(base.eta);
    n.validate()?;
    Ok(n)
}

fn attack_setup(cfg: &ExperimentConfig, arch: &ArchConfig) -> (ShadowConfig, AttackConfig) {
    let shadow = ShadowConfig {
        arch: arch.clone(),
        train: cfg.train.clone(),
    };
    let attack = AttackConfig {
        hidden: cfg.attack.hidden,
        epochs: cfg.attack.epochs,
        learning_rate: cfg.attack.learning_rate,
        batch_size: cfg.attack.batch_size,
        thresholds: cfg.attack.thresholds.clone(),
        seed: 0,
    };
    (shadow, attack)
}

/// Largest ε lower bound over the threshold table.
fn empirical_epsilon(report: &AttackReport, delta: f64, confidence: f64) -> Result<f64> {
    let mut best = 0.0f64;
    for row in &report.table {
        let outcomes = AttackOutcomes {
            false_positives: row.false_positives,
            negatives: report.negatives(),
            false_negatives: row.false_negatives,
            positives: report.positives(),
        };
        best = best.max(empirical_epsilon_lower_bound(&outcomes, delta, confidence)?);
    }
    Ok(best)
}

/// Calibration inputs of a target trained on `n` records.
fn target_inputs(cfg: &ExperimentConfig, n: usize) -> CalibrationInputs {
    let b = cfg.train.batch_size.min(n) as u64;
    CalibrationInputs {
        iterations: cfg.train.epochs as u64 * (n as u64).div_ceil(b),
        batch_size: b,
        dataset_size: n as u64,
        blocks: cfg.arch.blocks as u64,
        input_bound: cfg.accountant.input_bound,
        residual_bound: cfg.accountant.residual_bound,
        activation_bound: cfg.accountant.activation_bound,
        eta: cfg.accountant.eta,
        head_bound: cfg.accountant.head_bound,
    }
}

/// Theoretical ε of a noise setting; infinite when no finite budget applies.
fn theoretical_epsilon(cfg: &ExperimentConfig, noise: &NoiseConfig, n: usize) -> f64 {
    let inputs = target_inputs(cfg, n);
    let delta = cfg.accountant.delta;
    let eps = match noise.strategy {
        NoiseStrategy::None => return f64::INFINITY,
        NoiseStrategy::AdditiveI => best_lambda_strategy1(noise.gamma, noise.pi, delta, &inputs).map(|(_, e)| e),
        NoiseStrategy::MultiplicativeII => {
            achieved_epsilon_strategy2(noise.gamma, noise.pi, delta, cfg.accountant.lambda, &inputs)
        }
    };
    eps.unwrap_or(f64::INFINITY)
}

fn concordance_error(report: &AttackReport) -> f64 {
    (report.auc - auc_pair_concordance(&report.member_scores, &report.nonmember_scores)).abs()
}

fn run_attack(cfg: &ExperimentConfig, record: &mut ResultRecord) -> Result<()> {
    let (data, arch) = load(cfg)?;
    let (shadow, attack) = attack_setup(cfg, &arch);
    let a = &cfg.attack;
    let mut auc_vs_gamma: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    let mut acc_vs_gamma: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    let mut auc_vs_k: Vec<(f64, Vec<(f64, f64)>)> = Vec::new();
    let mut max_concordance = 0.0f64;
    let mut epoch_seconds = Vec::new();
    for &gamma in &a.gammas {
        let noise = noise_at(&cfg.noise, gamma)?;
        let mut per_k = Vec::new();
        for &k in &a.ensembles {
            let target = TargetConfig {
                arch: arch.clone(),
                noise,
                ensemble: k,
                train: cfg.train.clone(),
                trainer: TargetTrainer::Standard,
            };
            let mut runs: Vec<MembershipResult> = Vec::with_capacity(a.repeats);
            for r in 0..a.repeats {
                let seed = derive_seed(cfg.seed, REPEAT_BASE + r as u64);
                runs.push(run_membership_experiment(&data, &target, &shadow, &attack, a.stratified, seed)?);
            }
            let prefix = format!("gamma={gamma}.k={k}");
            let aucs: Vec<f64> = runs.iter().map(|m| m.report.auc).collect();
            let test: Vec<f64> = runs.iter().map(|m| m.utility.test_accuracy).collect();
            let train: Vec<f64> = runs.iter().map(|m| m.utility.train_accuracy).collect();
            let mut lbs = Vec::new();
            for (r, m) in runs.iter().enumerate() {
                record.metric(format!("{prefix}.repeat={r}.auc"), m.report.auc);
                record.metric(format!("{prefix}.repeat={r}.test_accuracy"), m.utility.test_accuracy);
                max_concordance = max_concordance.max(concordance_error(&m.report));
                lbs.push(empirical_epsilon(&m.report, cfg.accountant.delta, a.confidence)?);
                epoch_seconds.push(m.target_epoch_seconds);
            }
            record.metric(format!("{prefix}.auc"), mean(&aucs));
            record.metric(format!("{prefix}.test_accuracy"), mean(&test));
            record.metric(format!("{prefix}.train_accuracy"), mean(&train));
            record.metric(format!("{prefix}.generalization_gap"), mean(&train) - mean(&test));
            record.metric(
                format!("{prefix}.attack_train_accuracy"),
                mean(&runs.iter().map(|m| m.attack_train_accuracy).collect::<Vec<_>>()),
            );
            let lb = lbs.iter().cloned().fold(0.0, f64::max);
            record.metric(format!("{prefix}.empirical_epsilon_lb"), lb);
            let n_target = runs[0].split.target_train.len();
            record.metric(format!("{prefix}.theoretical_epsilon"), theoretical_epsilon(cfg, &noise, n_target));
            record.curves.push(Curve::roc(
                format!("roc_gamma{gamma}_k{k}"),
                format!("Attack ROC, gamma = {gamma}, ensemble = {k} (AUC {:.3})", runs[0].report.auc),
                runs[0].report.roc.clone(),
            ));
            auc_vs_gamma.entry(k).or_default().push((gamma, mean(&aucs)));
            acc_vs_gamma.entry(k).or_default().push((gamma, mean(&test)));
            per_k.push((k as f64, mean(&aucs)));
        }
        auc_vs_k.push((gamma, per_k));
    }
    record.metric("max_auc_concordance_error", max_concordance);
    for (k, pts) in &auc_vs_gamma {
        record.metric(format!("k={k}.auc_gamma_slope"), regression_slope(pts));
    }
    if a.gammas.len() > 1 {
        let mut c = Curve::new("auc_vs_gamma", "Attack AUC against noise level", "gamma", "AUC");
        for (k, pts) in auc_vs_gamma {
            c = c.with_series(format!("ensemble {k}"), pts);
        }
        record.curves.push(c);
        let mut c = Curve::new("accuracy_vs_gamma", "Target test accuracy against noise level", "gamma", "test accuracy");
        for (k, pts) in acc_vs_gamma {
            c = c.with_series(format!("ensemble {k}"), pts);
        }
        record.curves.push(c);
    }
    if a.ensembles.len() > 1 {
        let mut c = Curve::new("auc_vs_ensemble", "Attack AUC against ensemble size", "ensemble size", "AUC");
        for (gamma, pts) in auc_vs_k {
            c = c.with_series(format!("gamma {gamma}"), pts);
        }
        record.curves.push(c);
    }
    record.timings.insert("target_epoch_seconds".into(), mean(&epoch_seconds));
    Ok(())
}

fn run_dpsgd_compare(cfg: &ExperimentConfig, record: &mut ResultRecord) -> Result<()> {
    let (data, arch) = load(cfg)?;
    let (shadow, attack) = attack_setup(cfg, &arch);
    let d = &cfg.dpsgd;
    let arms = [
        ("baseline", NoiseConfig::none(), 1, TargetTrainer::Standard),
        ("residual", cfg.noise, cfg.ensemble, TargetTrainer::Standard),
        (
            "dpsgd",
            NoiseConfig::none(),
            1,
            TargetTrainer::Dpsgd {
                clip_norm: d.clip_norm,
                noise_multiplier: d.noise_multiplier,
                microbatch_size: d.microbatch_size,
            },
        ),
    ];
    let mut roc = Curve::new("roc_compare", "Attack ROC by training method", "false positive rate", "true positive rate");
    roc.unit_axes = true;
    let mut max_concordance = 0.0f64;
    for (name, noise, k, trainer) in arms {
        let target = TargetConfig {
            arch: arch.clone(),
            noise,
            ensemble: k,
            train: cfg.train.clone(),
            trainer,
        };
        let mut aucs = Vec::new();
        let mut test = Vec::new();
        let mut train = Vec::new();
        let mut secs = Vec::new();
        for r in 0..cfg.attack.repeats {
            let seed = derive_seed(cfg.seed, REPEAT_BASE + r as u64);
            let m = run_membership_experiment(&data, &target, &shadow, &attack, cfg.attack.stratified, seed)
                .map_err(|e| Error::Stage {
                    stage: match name {
                        "baseline" => "baseline arm",
                        "residual" => "residual-perturbation arm",
                        _ => "dpsgd arm",
                    },
                    source: Box::new(e),
                })?;
            record.metric(format!("{name}.repeat={r}.auc"), m.report.auc);
            record.metric(format!("{name}.repeat={r}.test_accuracy"), m.utility.test_accuracy);
            max_concordance = max_concordance.max(concordance_error(&m.report));
            if r == 0 {
                roc = roc.with_series(name, m.report.roc.clone());
            }
            aucs.push(m.report.auc);
            test.push(m.utility.test_accuracy);
            train.push(m.utility.train_accuracy);
            secs.push(m.target_epoch_seconds);
        }
        record.metric(format!("{name}.auc"), mean(&aucs));
        record.metric(format!("{name}.test_accuracy"), mean(&test));
        record.metric(format!("{name}.train_accuracy"), mean(&train));
        record.timings.insert(format!("{name}.epoch_seconds"), mean(&secs));
    }
    record.metric("max_auc_concordance_error", max_concordance);
    record.curves.push(roc);
    Ok(())
}

fn run_accountant(cfg: &ExperimentConfig, record: &mut ResultRecord) -> Result<()> {
    let a = &cfg.accountant;
    let budget = DpBudget::new(a.epsilon, a.delta, a.lambda)?;
    let inputs = CalibrationInputs {
        iterations: a.iterations,
        batch_size: a.batch_size,
        dataset_size: a.dataset_size,
        blocks: a.blocks,
        input_bound: a.input_bound,
        residual_bound: a.residual_bound,
        activation_bound: a.activation_bound,
        eta: a.eta,
        head_bound: a.head_bound,
    };
    let s1 = calibrate_strategy1(&budget, &inputs)?;
    let s2 = calibrate_strategy2(&budget, &inputs)?;
    record.metric("alpha", s1.alpha);
    record.metric("participations", s1.participations as f64);
    record.metric("additive.pi_min", s1.pi_min);
    record.metric("additive.gamma_min", s1.gamma_min);
    for (i, e) in &s1.per_layer_epsilons {
        record.metric(format!("layer_epsilon.{i}"), *e);
    }
    record.metric("multiplicative.gamma_min", s2.gamma_min);
    record.metric("multiplicative.pi_min", s2.pi_min);
    let mut text = s1.render();
    text.push_str("\n[calibration.strategy_multiplicative]\n");
    text.push_str(&format!("alpha = {}\ngamma_min = {}\npi_min = {}\n", s2.alpha, s2.gamma_min, s2.pi_min));
    if a.gamma > 0.0 && a.pi > 0.0 {
        let achieved = achieved_epsilon_strategy1(a.gamma, a.pi, a.delta, a.lambda, &inputs).unwrap_or(f64::INFINITY);
        record.metric("additive.achieved_epsilon", achieved);
        let curve: Vec<(f64, f64)> = (1..100)
            .map(|k| k as f64 / 100.0)
            .filter_map(|l| {
                achieved_epsilon_strategy1(a.gamma, a.pi, a.delta, l, &inputs)
                    .ok()
                    .map(|e| (l, e))
            })
            .collect();
        match best_lambda_strategy1(a.gamma, a.pi, a.delta, &inputs) {
            Ok((l, e)) => {
                record.metric("additive.best_lambda", l);
                record.metric("additive.best_epsilon", e);
            }
            Err(e) => record.notes.push(format!("best lambda: {e}")),
        }
        let (alpha, eps) = alpha_grid_epsilon_strategy1(a.gamma, a.pi, a.delta, &inputs)?;
        record.metric("additive.alpha_grid_alpha", alpha);
        record.metric("additive.alpha_grid_epsilon", eps);
        let m2 = achieved_epsilon_strategy2(a.gamma, a.pi, a.delta, a.lambda, &inputs).unwrap_or(f64::INFINITY);
        record.metric("multiplicative.achieved_epsilon", m2);
        text.push_str(&format!(
            "\n[achieved]\ngamma = {}\npi = {}\nadditive_epsilon = {achieved}\nmultiplicative_epsilon = {m2}\n",
            a.gamma, a.pi
        ));
        if !curve.is_empty() {
            record.curves.push(
                Curve::new("epsilon_vs_lambda", "Achieved epsilon against the budget split", "lambda", "epsilon")
                    .with_series("additive", curve),
            );
        }
    }
    write_atomic(&cfg.out_dir.join("calibration.txt"), text.as_bytes())?;
    record.artifacts.push("calibration.txt".into());
    Ok(())
}

fn run_rademacher(cfg: &ExperimentConfig, record: &mut ResultRecord) -> Result<()> {
    let r = &cfg.rademacher;
    let params = ComplexityParams {
        c: r.c,
        t: r.t,
        p: r.p,
        gamma: r.gamma,
    };
    params.validate()?;
    let samples = SampleSet::random(r.n, r.dim, 0.05, 1.0, &mut stream(cfg.seed, SAMPLES))?;
    let sigma_seed = derive_seed(cfg.seed, SIGMA);
    let sigma = sigma_expectation(
        &samples,
        r.p,
        SigmaMethod::Auto {
            draws: r.draws,
            seed: sigma_seed,
        },
    )?;
    let f = complexity_ode(&samples, &params, &sigma)?;
    let g = complexity_sde(&samples, &params, &sigma)?;
    let ratio = g.value / f.value;
    record.metric("complexity_ode", f.value);
    record.metric("complexity_sde", g.value);
    record.metric("ratio", ratio);
    record.metric("damping", params.damping());
    record.metric("ratio_abs_error", (ratio - params.damping()).abs());
    record.metric("sigma_std_error", sigma.std_error);

    if r.n <= ENUMERATION_LIMIT {
        let exact = sigma_expectation(&samples, r.p, SigmaMethod::Enumerate)?;
        let mc = sigma_expectation(
            &samples,
            r.p,
            SigmaMethod::MonteCarlo {
                draws: r.draws,
                seed: sigma_seed,
            },
        )?;
        record.metric("sigma_enumerated", exact.value);
        record.metric("sigma_monte_carlo", mc.value);
        record.metric("sigma_z", (mc.value - exact.value) / mc.std_error);
    }

    let mut zs = Vec::new();
    for i in 0..10 {
        let u = i as f64 / 9.0;
        let x0 = 0.5 + u;
        let lam = r.c * (u - 0.5);
        let gamma = r.gamma * (0.5 + u);
        let o = gbm_moment_oracle(x0, lam, gamma, r.t, r.p, r.gbm_paths, r.gbm_steps, derive_seed(cfg.seed, GBM + 1000 * i))?;
        record.metric(format!("gbm.{i}.z"), o.z_score);
        zs.push(o.z_score);
    }
    record.metric("gbm.max_abs_z", zs.iter().fold(0.0f64, |m, z| m.max(z.abs())));

    let mut rng = stream(cfg.seed, SEARCH);
    let mut signs: Vec<f64> = (0..r.n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    signs.shuffle(&mut rng);
    let closed = sup_closed_form(&samples, &signs, &params);
    let found = sup_random_search_oracle(&samples, &signs, &params, r.search_trials, derive_seed(cfg.seed, SEARCH))?;
    record.metric("search.closed_form", closed);
    record.metric("search.oracle", found.value);
    record.metric("search.fraction", if closed > 0.0 { found.value / closed } else { 1.0 });

    let gammas: Vec<f64> = (0..=8).map(|i| 2.0 * r.gamma * i as f64 / 8.0).collect();
    let mut sde_pts = Vec::new();
    for &gm in &gammas {
        let v = complexity_sde(&samples, &ComplexityParams { gamma: gm, ..params }, &sigma)?;
        sde_pts.push((gm, v.value));
    }
    record.curves.push(
        Curve::new("complexity_vs_gamma", "Rademacher complexity against diffusion", "gamma", "complexity")
            .with_series("sde", sde_pts)
            .with_series("ode", gammas.iter().map(|&gm| (gm, f.value)).collect()),
    );

    let report = ComplexityReport {
        params,
        n: r.n,
        d: r.dim,
        f,
        g,
        ratio,
        gbm_z_scores: zs,
    };
    write_atomic(&cfg.out_dir.join("rademacher.txt"), report.render().as_bytes())?;
    let csv = format!("{}\n{}\n", ComplexityReport::CSV_HEADER, report.csv_row());
    write_atomic(&cfg.out_dir.join("rademacher.csv"), csv.as_bytes())?;
    record.artifacts.push("rademacher.txt".into());
    record.artifacts.push("rademacher.csv".into());
    Ok(())
}

fn save_image(cfg: &ExperimentConfig, record: &mut ResultRecord, stem: &str, img: &ImageGrid) -> Result<()> {
    let ext = if img.channels == 1 { "pgm" } else { "ppm" };
    let clamped = img.clamped();
    for name in [format!("{stem}.{ext}"), format!("{stem}.png")] {
        write_image(&cfg.out_dir.join(&name), &clamped)?;
        record.artifacts.push(name);
    }
    Ok(())
}

fn run_sde_demo(cfg: &ExperimentConfig, record: &mut ResultRecord) -> Result<()> {
    let s = &cfg.sde;
    let img = match &s.image {
        Some(path) => super::io::read_image(path).stage("image")?,
        None => ImageGrid::test_pattern(s.rows, s.cols, s.channels)?,
    };
    let seed = derive_seed(cfg.seed, SDE);
    let ode_cfg = SdeRunConfig {
        mode: SdeMode::Ode,
        gamma: 0.0,
        dt: s.dt,
        t_end: s.t_end,
        seed,
    };
    let sde_cfg = SdeRunConfig {
        mode: s.noisy_mode,
        gamma: s.gamma,
        ..ode_cfg
    };
    let ode = round_trip(&img, &ode_cfg)?;
    let sde = round_trip(&img, &sde_cfg)?;
    record.metric("ode.reconstruction_error", ode.error);
    record.metric("sde.reconstruction_error", sde.error);
    record.metric("error_ratio", if ode.error > 0.0 { sde.error / ode.error } else { f64::INFINITY });
    save_image(cfg, record, "original", &img)?;
    save_image(cfg, record, "ode_forward", &ode.terminal)?;
    save_image(cfg, record, "ode_backward", &ode.reconstructed)?;
    save_image(cfg, record, "sde_forward", &sde.terminal)?;
    save_image(cfg, record, "sde_backward", &sde.reconstructed)?;
    if s.snapshots > 0 {
        let steps = sde.forward_trajectory.len() - 1;
        for j in 1..=s.snapshots {
            let idx = j * steps / s.snapshots;
            save_image(cfg, record, &format!("sde_snapshot_{j:02}"), &sde.forward_trajectory[idx])?;
        }
    }
    let err_curve = |traj: &[ImageGrid]| -> Result<Vec<(f64, f64)>> {
        traj.iter()
            .enumerate()
            .map(|(i, x)| Ok((i as f64 * s.dt, crate::sde::reconstruction_error(&img, x)?)))
            .collect()
    };
    record.curves.push(
        Curve::new("distance_vs_time", "Distance from the original image during the forward pass", "t", "relative distance")
            .with_series("ode", err_curve(&ode.forward_trajectory)?)
            .with_series(s.noisy_mode.name(), err_curve(&sde.forward_trajectory)?),
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str, dir: &std::path::Path) -> ExperimentConfig {
        let mut o = BTreeMap::new();
        o.insert("out".to_string(), dir.display().to_string());
        ExperimentConfig::from_text(text, &o).unwrap()
    }

    #[test]
    fn slope_of_a_line() {
        assert!((regression_slope(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)]) - 2.0).abs() < 1e-12);
        assert_eq!(regression_slope(&[(1.0, 1.0), (1.0, 2.0)]), 0.0);
    }

    #[test]
    fn accountant_passthrough() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_experiment(&cfg("kind = accountant\naccountant.gamma = 0\n", dir.path())).unwrap();
        for k in ["alpha", "additive.pi_min", "additive.gamma_min", "layer_epsilon.0"] {
            assert!(r.metrics.contains_key(k), "{k}");
        }
        assert!(dir.path().join("calibration.txt").exists());
        assert!(dir.path().join("record.json").exists());
    }

    #[test]
    fn sde_demo_layout() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_experiment(&cfg("kind = sde-demo\nsde.rows = 16\nsde.cols = 16\nsde.snapshots = 2\n", dir.path())).unwrap();
        for stem in ["ode_forward", "ode_backward", "sde_forward", "sde_backward"] {
            assert!(dir.path().join(format!("{stem}.pgm")).exists());
            assert!(dir.path().join(format!("{stem}.png")).exists());
        }
        assert!(dir.path().join("sde_snapshot_02.png").exists());
        assert!(r.metrics["sde.reconstruction_error"] > r.metrics["ode.reconstruction_error"]);
    }

    #[test]
    fn nonzero_sweep_needs_a_strategy() {
        assert!(noise_at(&NoiseConfig::none(), 1.0).is_err());
        assert_eq!(noise_at(&NoiseConfig::additive(2.0), 0.0).unwrap(), NoiseConfig::none());
        let n = noise_at(&NoiseConfig::additive(2.0), 4.0).unwrap();
        assert_eq!((n.gamma, n.pi), (4.0, 2.0));
    }

    #[test]
    fn errors_name_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg("kind = train\ndataset.source = csv\ndataset.path = /nonexistent.csv\n", dir.path());
        let e = run_experiment(&c).unwrap_err().to_string();
        assert!(e.starts_with("train: dataset:"), "{e}");
    }

    #[test]
    fn train_is_reproducible() {
        let text = "kind = train\ndataset.n = 120\ndataset.dim = 4\nmodel.blocks = 2\ntrain.epochs = 3\nensemble.size = 2\nnoise.strategy = additive\nnoise.gamma = 0.5\n";
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ra = run_experiment(&cfg(text, a.path())).unwrap();
        let rb = run_experiment(&cfg(text, b.path())).unwrap();
        assert_eq!(ra.metrics, rb.metrics);
        assert_eq!(ra.curves, rb.curves);
        assert!(a.path().join("checkpoint.json").exists());
        assert!(a.path().join("accuracy_vs_epoch.svg").exists());
    }
}
