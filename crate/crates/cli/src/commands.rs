use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use sgelu_core::activations::{tabulate as tabulate_kind, write_table_csv, ActivationKind};
use sgelu_core::analysis::{
    gradcheck_fixture, gradient_check, passing_layers, test_all_layers, weight_histogram, weight_update_demo,
    write_demo_csv, write_histogram_csv, write_ks_csv,
};
use sgelu_core::experiments::{
    load_mnist, run_all, run_suite_observed, write_median_csv, write_runs_csv, ExperimentConfig, MetricsRecord,
    RunOutcome,
};
use sgelu_core::network::{AdamConfig, Network, Task};
use sgelu_core::normalization::{time_normalizers, write_timing_csv, NormalizerKind};
use sgelu_core::report::sig10;

use crate::config::FileConfig;
use crate::error::CliError;
use crate::output::{OutputDir, RUN_RECORD};
use crate::{
    activation_name, trained_name, AnalyzeArgs, DemoArgs, GradcheckArgs, OutputArgs, SuiteArgs, TabulateArgs,
    TimeNormArgs, TrainArgs, TrainOpts,
};

const INIT: &str = "glorot normal, std = sqrt(2 / (fan_in + fan_out)), zero bias";
const LOSS: &str = "mean over batch and outputs of 0.5 * (prediction - target)^2";

struct Common {
    file: FileConfig,
    out_dir: PathBuf,
    force: bool,
}

fn common(o: &OutputArgs) -> Result<Common, CliError> {
    let file = FileConfig::load(o.config.as_deref())?;
    let out_dir = file.pick(o.out_dir.clone(), "out_dir", PathBuf::from("out"))?;
    Ok(Common {
        file,
        out_dir,
        force: o.force,
    })
}

#[derive(Serialize)]
struct RunRecord<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    config: C,
    artifacts: &'a [String],
}

fn write_run_record<C: Serialize>(out: &OutputDir, command: &str, config: C, artifacts: &[String]) -> Result<(), CliError> {
    out.write_json(
        RUN_RECORD,
        &RunRecord {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config,
            artifacts,
        },
    )?;
    Ok(())
}

fn kind_from(
    file: &FileConfig,
    flag: Option<String>,
    alpha: Option<f64>,
    default: &str,
    check: fn(&str) -> Result<String, String>,
) -> Result<ActivationKind, CliError> {
    let name = file.pick(flag, "fn", default.to_string())?;
    let name = check(&name).map_err(|e| CliError::Usage(format!("activation '{name}': {e}")))?;
    let alpha = alpha.or(file.get("alpha")?);
    Ok(ActivationKind::from_name(&name, alpha)?)
}

pub fn tabulate(a: TabulateArgs) -> Result<(), CliError> {
    let c = common(&a.output)?;
    let kind = kind_from(&c.file, a.function, a.alpha, "sgelu", activation_name)?;
    let min = c.file.pick(a.min, "min", -4.0)?;
    let max = c.file.pick(a.max, "max", 4.0)?;
    let n = c.file.pick(a.n, "n", 801)?;
    c.file.finish()?;
    let rows = tabulate_kind(kind, min, max, n)?;

    let name = format!("tabulate_{}.csv", kind.name());
    let artifacts = vec![name.clone()];
    let out = OutputDir::claim(&c.out_dir, c.force, &artifacts)?;
    let path = out.write(&name, |w| write_table_csv(&rows, w))?;
    write_run_record(
        &out,
        "tabulate",
        json!({ "activation": kind, "min": min, "max": max, "n": n }),
        &artifacts,
    )?;
    println!("wrote {} ({} rows)", path.display(), rows.len());
    Ok(())
}

struct TrainSettings {
    data_dir: PathBuf,
    jobs: usize,
    save_networks: bool,
}

fn experiment_config(
    task: Task,
    kind: ActivationKind,
    t: &TrainOpts,
    file: &FileConfig,
) -> Result<ExperimentConfig, CliError> {
    let base = match task {
        Task::Classify => ExperimentConfig::classification(kind),
        Task::Autoencode => ExperimentConfig::autoencoder(kind),
    };
    let cfg = ExperimentConfig {
        hidden_layers: file.pick(t.hidden_layers, "hidden_layers", base.hidden_layers)?,
        width: file.pick(t.width, "width", base.width)?,
        epochs: file.pick(t.epochs, "epochs", base.epochs)?,
        batch_size: file.pick(t.batch_size, "batch_size", base.batch_size)?,
        seeds: file.pick(t.seeds.clone(), "seeds", base.seeds.clone())?,
        adam: AdamConfig {
            lr: file.pick(t.lr, "lr", base.adam.lr)?,
            ..base.adam
        },
        train_samples: file.pick(t.train_samples, "train_samples", base.train_samples)?,
        test_samples: file.pick(t.test_samples, "test_samples", base.test_samples)?,
        dropout: file.pick(t.dropout, "dropout", base.dropout)?,
        ..base
    };
    cfg.validate()?;
    Ok(cfg)
}

fn train_settings(t: &TrainOpts, file: &FileConfig) -> Result<TrainSettings, CliError> {
    let jobs = file.pick(t.jobs, "jobs", 1)?;
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    Ok(TrainSettings {
        data_dir: file.pick(t.data_dir.clone(), "data_dir", PathBuf::from("data/mnist"))?,
        jobs,
        save_networks: t.save_networks || file.get("save_networks")?.unwrap_or(false),
    })
}

fn network_name(task: Task, run: &RunOutcome) -> String {
    format!("{}_{}_seed{}.json", task.name(), run.activation.name(), run.seed)
}

fn report_epoch(r: &MetricsRecord) {
    if r.diverged {
        eprintln!("{} seed {} epoch {}: diverged", r.activation, r.seed, r.epoch);
        return;
    }
    let acc = r.test_acc.map(|a| format!(" test_acc {}", sig10(a))).unwrap_or_default();
    eprintln!(
        "{} seed {} epoch {}: train_loss {} test_loss {}{acc}",
        r.activation,
        r.seed,
        r.epoch,
        sig10(r.train_loss),
        sig10(r.test_loss)
    );
}

fn planned_networks(task: Task, cfgs: &[ExperimentConfig]) -> Vec<String> {
    cfgs.iter()
        .flat_map(|c| c.seeds.iter().map(move |s| format!("{}_{}_seed{s}.json", task.name(), c.activation.name())))
        .collect()
}

fn write_networks(out: &OutputDir, task: Task, runs: &[RunOutcome]) -> Result<(), CliError> {
    for run in runs {
        out.write_json(&network_name(task, run), &run.network)?;
    }
    Ok(())
}

fn warn_diverged(runs: &[RunOutcome]) {
    for r in runs.iter().filter(|r| r.diverged) {
        eprintln!(
            "warning: {} seed {} diverged at epoch {}",
            r.activation.name(),
            r.seed,
            r.records.len()
        );
    }
}

pub fn train(a: TrainArgs, task: Task) -> Result<(), CliError> {
    let c = common(&a.output)?;
    let kind = kind_from(&c.file, a.function, a.train.alpha, "sgelu", trained_name)?;
    let cfg = experiment_config(task, kind, &a.train, &c.file)?;
    let settings = train_settings(&a.train, &c.file)?;
    c.file.finish()?;

    let csv = format!("{}.csv", task.name());
    let mut artifacts = vec![csv.clone()];
    if settings.save_networks {
        artifacts.extend(planned_networks(task, std::slice::from_ref(&cfg)));
    }
    let out = OutputDir::claim(&c.out_dir, c.force, &artifacts)?;
    let (train, test) = load_mnist(&settings.data_dir, cfg.train_samples, cfg.test_samples)?;

    let runs = run_all(std::slice::from_ref(&cfg), &train, &test, settings.jobs, &report_epoch)?;
    warn_diverged(&runs);
    out.write(&csv, |w| write_runs_csv(runs.iter().flat_map(|r| r.records.iter()), w))?;
    if settings.save_networks {
        write_networks(&out, task, &runs)?;
    }
    write_run_record(
        &out,
        &format!("train-{}", if task == Task::Classify { "classify" } else { "autoencoder" }),
        json!({
            "experiment": cfg,
            "normalizer": cfg.normalizer(),
            "init": INIT,
            "loss": LOSS,
            "data_dir": settings.data_dir,
            "jobs": settings.jobs,
        }),
        &artifacts,
    )?;
    for r in &runs {
        if let Some(last) = r.records.last() {
            println!("{} seed {}: final test loss {}", kind.name(), r.seed, sig10(last.test_loss));
        }
    }
    println!("wrote {}", out.path(&csv).display());
    Ok(())
}

pub fn suite(a: SuiteArgs) -> Result<(), CliError> {
    let c = common(&a.output)?;
    let task = match c.file.pick(a.task, "task", "classify".to_string())?.as_str() {
        "classify" => Task::Classify,
        "autoencode" => Task::Autoencode,
        other => return Err(CliError::Usage(format!("unknown task '{other}' (classify or autoencode)"))),
    };
    let names = c.file.pick(
        a.activations,
        "activations",
        ["sgelu", "gelu", "lisht"].map(String::from).to_vec(),
    )?;
    let alpha = a.train.alpha.or(c.file.get("alpha")?);
    let mut cfgs = Vec::with_capacity(names.len());
    for name in &names {
        let name = trained_name(name).map_err(|e| CliError::Usage(format!("activation '{name}': {e}")))?;
        let kind = ActivationKind::from_name(&name, alpha)?;
        cfgs.push(experiment_config(task, kind, &a.train, &c.file)?);
    }
    if cfgs.is_empty() {
        return Err(CliError::Usage("no activations to compare".into()));
    }
    let settings = train_settings(&a.train, &c.file)?;
    c.file.finish()?;

    let csv = format!("{}.csv", task.name());
    let median_csv = format!("{}_median.csv", task.name());
    let mut artifacts = vec![csv.clone(), median_csv.clone()];
    if settings.save_networks {
        artifacts.extend(planned_networks(task, &cfgs));
    }
    let out = OutputDir::claim(&c.out_dir, c.force, &artifacts)?;
    let (train, test) = load_mnist(&settings.data_dir, cfgs[0].train_samples, cfgs[0].test_samples)?;

    let result = run_suite_observed(&cfgs, &train, &test, settings.jobs, &report_epoch)?;
    warn_diverged(&result.runs);
    out.write(&csv, |w| write_runs_csv(result.records(), w))?;
    out.write(&median_csv, |w| write_median_csv(&result.medians, w))?;
    if settings.save_networks {
        write_networks(&out, task, &result.runs)?;
    }
    write_run_record(
        &out,
        "suite",
        json!({
            "task": task,
            "experiments": cfgs,
            "normalizers": cfgs.iter().map(|c| (c.activation.name(), c.normalizer())).collect::<Vec<_>>(),
            "init": INIT,
            "loss": LOSS,
            "data_dir": settings.data_dir,
            "jobs": settings.jobs,
        }),
        &artifacts,
    )?;
    let last = cfgs[0].epochs;
    for cfg in &cfgs {
        if let Some(m) = result.median(cfg.activation.name(), last) {
            println!(
                "{} epoch {last}: median test loss {} over {} runs",
                m.activation,
                sig10(m.test_loss),
                m.runs
            );
        }
    }
    println!("wrote {} and {}", out.path(&csv).display(), out.path(&median_csv).display());
    Ok(())
}

fn load_network(path: &Path) -> Result<Network, CliError> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingData(path.to_path_buf()),
        _ => CliError::Failed(format!("{}: {e}", path.display())),
    })?;
    let net: Network = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CliError::Failed(format!("{}: not a saved network: {e}", path.display())))?;
    net.validate()?;
    Ok(net)
}

pub fn analyze_weights(a: AnalyzeArgs) -> Result<(), CliError> {
    let c = common(&a.output)?;
    let paths: Vec<PathBuf> = if a.networks.is_empty() {
        c.file.get("network")?.unwrap_or_default()
    } else {
        c.file.get::<serde_json::Value>("network")?;
        a.networks
    };
    let bins = c.file.pick(a.bins, "bins", 50)?;
    c.file.finish()?;
    if paths.is_empty() {
        return Err(CliError::Usage("pass at least one --network file".into()));
    }

    let mut loaded = Vec::with_capacity(paths.len());
    let mut artifacts = vec!["ks_summary.csv".to_string()];
    for p in &paths {
        let net = load_network(p)?;
        let stem = p
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| CliError::Usage(format!("cannot name outputs for {}", p.display())))?
            .to_string();
        if loaded.iter().any(|(s, _): &(String, Network)| *s == stem) {
            return Err(CliError::Usage(format!("two networks share the file name '{stem}'")));
        }
        artifacts.push(format!("{stem}_ks.csv"));
        for layer in 0..net.layers.len() - 1 {
            artifacts.push(format!("{stem}_hist_layer{layer}.csv"));
        }
        loaded.push((stem, net));
    }
    let out = OutputDir::claim(&c.out_dir, c.force, &artifacts)?;

    let mut summary = Vec::new();
    for (stem, net) in &loaded {
        let ks = test_all_layers(net)?;
        out.write(&format!("{stem}_ks.csv"), |w| write_ks_csv(&ks, w))?;
        for layer in 0..net.layers.len() - 1 {
            let hist = weight_histogram(net, layer, bins)?;
            out.write(&format!("{stem}_hist_layer{layer}.csv"), |w| write_histogram_csv(&hist, w))?;
        }
        let passing = passing_layers(&ks);
        println!("{stem}: {passing} of {} hidden layers pass", ks.len());
        summary.push((stem.clone(), ks.len(), passing));
    }
    out.write("ks_summary.csv", |w| {
        use std::io::Write;
        writeln!(w, "network,layers,passing")?;
        for (stem, layers, passing) in &summary {
            writeln!(w, "{stem},{layers},{passing}")?;
        }
        Ok(())
    })?;
    write_run_record(
        &out,
        "analyze-weights",
        json!({ "networks": paths, "bins": bins, "ks_level": 0.05 }),
        &artifacts,
    )?;
    Ok(())
}

fn parse_normalizer(name: &str, kind: ActivationKind) -> Result<NormalizerKind, CliError> {
    Ok(match name {
        "auto" => sgelu_core::experiments::normalizer_policy(kind),
        "none" => NormalizerKind::None,
        "batchnorm" => NormalizerKind::BatchNorm,
        "minmax" => NormalizerKind::MinMax,
        other => return Err(CliError::Usage(format!("unknown normalizer '{other}'"))),
    })
}

pub fn gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    let c = common(&a.output)?;
    let kind = kind_from(&c.file, a.function, a.alpha, "sgelu", activation_name)?;
    let normalizer = parse_normalizer(&c.file.pick(a.normalizer, "normalizer", "auto".to_string())?, kind)?;
    let shape = c.file.pick(a.shape, "shape", vec![4, 8, 8, 3])?;
    let batch = c.file.pick(a.batch, "batch", 16)?;
    let h = c.file.pick(a.h, "h", 1e-5)?;
    let seed = c.file.pick(a.seed, "seed", 0)?;
    let tol = c.file.pick(a.tol, "tol", 1e-4)?;
    c.file.finish()?;
    if !(h > 0.0 && h.is_finite()) {
        return Err(CliError::Usage(format!("--h must be positive, got {h}")));
    }

    let (net, x, target) = gradcheck_fixture(kind, normalizer, &shape, batch, seed)?;
    let artifacts = vec!["gradcheck.csv".to_string()];
    let out = OutputDir::claim(&c.out_dir, c.force, &artifacts)?;
    let report = gradient_check(&net, &x, &target, h)?;
    let passes = report.max_rel_error <= tol;
    let shape_label = shape.iter().map(usize::to_string).collect::<Vec<_>>().join("-");
    out.write("gradcheck.csv", |w| {
        use std::io::Write;
        writeln!(w, "activation,normalizer,shape,batch,h,max_rel_error,worst,analytic,numeric,checked,passes")?;
        writeln!(
            w,
            "{},{},{shape_label},{batch},{},{},{},{},{},{},{passes}",
            kind.name(),
            normalizer.name(),
            sig10(h),
            sig10(report.max_rel_error),
            report.worst,
            sig10(report.analytic),
            sig10(report.numeric),
            report.checked
        )
    })?;
    write_run_record(
        &out,
        "gradcheck",
        json!({
            "activation": kind, "normalizer": normalizer, "shape": shape, "batch": batch,
            "h": h, "seed": seed, "tol": tol, "init": INIT, "loss": LOSS,
        }),
        &artifacts,
    )?;
    println!(
        "{} / {}: max relative error {} at {} over {} parameters",
        kind.name(),
        normalizer.name(),
        sig10(report.max_rel_error),
        report.worst,
        report.checked
    );
    if passes {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "gradient check failed: {} > {}",
            sig10(report.max_rel_error),
            sig10(tol)
        )))
    }
}

pub fn demo_update(a: DemoArgs) -> Result<(), CliError> {
    let c = common(&a.output)?;
    let names = c.file.pick(a.functions, "fn", vec!["sgelu".to_string(), "gelu".to_string()])?;
    let alpha = a.alpha.or(c.file.get("alpha")?);
    let w0 = c.file.pick(a.w0, "w0", -4.0)?;
    let x = c.file.pick(a.x, "x", 1.0)?;
    let target = c.file.pick(a.target, "target", 1.0)?;
    let lr = c.file.pick(a.lr, "lr", 1.0)?;
    let steps = c.file.pick(a.steps, "steps", 100)?;
    c.file.finish()?;
    let mut kinds = Vec::with_capacity(names.len());
    for name in &names {
        let name = activation_name(name).map_err(|e| CliError::Usage(format!("activation '{name}': {e}")))?;
        let kind = ActivationKind::from_name(&name, alpha)?;
        if !kinds.contains(&kind) {
            kinds.push(kind);
        }
    }

    let artifacts: Vec<String> = kinds.iter().map(|k| format!("demo_{}.csv", k.name())).collect();
    let out = OutputDir::claim(&c.out_dir, c.force, &artifacts)?;
    for (kind, name) in kinds.iter().zip(&artifacts) {
        let trace = weight_update_demo(*kind, w0, x, target, lr, steps)?;
        out.write(name, |w| write_demo_csv(&trace, w))?;
        let max_step = trace.windows(2).map(|p| (p[1].w - p[0].w).abs()).fold(0.0, f64::max);
        let (first, last) = (&trace[0], &trace[trace.len() - 1]);
        println!(
            "{}: |error| {} -> {}, largest |dw| {}",
            kind.name(),
            sig10(first.abs_error),
            sig10(last.abs_error),
            sig10(max_step)
        );
    }
    write_run_record(
        &out,
        "demo-update",
        json!({ "activations": kinds, "w0": w0, "x": x, "target": target, "lr": lr, "steps": steps }),
        &artifacts,
    )?;
    Ok(())
}

pub fn time_norm(a: TimeNormArgs) -> Result<(), CliError> {
    let c = common(&a.output)?;
    let widths = c.file.pick(a.width, "width", vec![128])?;
    let batch = c.file.pick(a.batch, "batch", 128)?;
    let iters = c.file.pick(a.iters, "iters", 101)?;
    c.file.finish()?;

    let artifacts = vec!["time_norm.csv".to_string()];
    let out = OutputDir::claim(&c.out_dir, c.force, &artifacts)?;
    let timings = widths
        .iter()
        .map(|&w| time_normalizers(w, batch, iters))
        .collect::<Result<Vec<_>, _>>()?;
    out.write("time_norm.csv", |w| write_timing_csv(&timings, w))?;
    for t in &timings {
        println!(
            "width {} batch {}: batchnorm {} ns/elem, minmax {} ns/elem",
            t.width,
            t.batch,
            sig10(t.bn_ns_per_elem),
            sig10(t.minmax_ns_per_elem)
        );
    }
    write_run_record(
        &out,
        "time-norm",
        json!({ "widths": widths, "batch": batch, "iters": iters }),
        &artifacts,
    )?;
    Ok(())
}
