//! `imprint`: command-line front end for training, attacking, fitting and
//! evaluating the trajectory-imprint detector.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use imprint_core::attacks::persist::{example_file_name, load_adversarial, save_adversarial, AdvEntry, AdvManifest};
use imprint_core::attacks::{l2_distance, AttackMethod};
use imprint_core::data::{read_examples_csv, Example, Split};
use imprint_core::harness::{
    attack_spec_for, emit_report, evaluate_detection, generate_adversarial, prepare, run_ablations, write_latencies,
    AdversarialSet, ExperimentConfig, Offline, PipelineBundle, ReportFormat, SignalKind, Variant, Workspace,
};
use imprint_core::parallel::{configure_global_threads, Parallelism};
use imprint_core::train::Metric;
use imprint_core::trajectory::{batch_extract, batch_extract_imprints, write_imprints_csv, write_trajectories_csv};
use imprint_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "imprint", version, about = "Adversarial example detection from training-trajectory imprints")]
struct Cli {
    /// Plain-text `key = value` experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every `seeds.*` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads; 0 uses every core, 1 runs sequentially.
    #[arg(long, global = true, default_value_t = 0)]
    parallelism: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the model and keep a checkpoint per epoch.
    Train,
    /// Craft adversarial examples with every configured attack.
    Attack,
    /// Write trajectories (or softmax imprints) of a split or an attack batch.
    Extract {
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Read inputs from a saved adversarial batch instead of a split.
        #[arg(long)]
        adv: Option<PathBuf>,
    },
    /// Offline phase: benign pool, autoencoder and detector.
    Fit,
    /// Online phase for inputs in dataset CSV layout, or for test examples.
    Detect {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Number of test examples to classify when no input file is given.
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Detection accuracy and online FRR of the fitted bundle.
    Eval,
    /// Evaluate ablation variants.
    Ablate {
        /// full, no-noise-reduction, no-fft, neither, or all.
        #[arg(long, default_value = "all")]
        variant: String,
    },
}

struct Paths {
    root: PathBuf,
}

impl Paths {
    fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    fn bundle(&self) -> PathBuf {
        self.root.join("bundle")
    }

    fn adv(&self, method: AttackMethod) -> PathBuf {
        self.root.join("adv").join(method.to_string())
    }
}

fn load_config(cli: &Cli) -> imprint_core::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path).map_err(|e| match e {
            Error::Io { path, source } => Error::Config(format!("{}: {source}", path.display())),
            other => other,
        })?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_all_seeds(seed);
    }
    cfg.parallelism = Parallelism(cli.parallelism);
    cfg.validate()?;
    Ok(cfg)
}

fn workspace(cfg: &ExperimentConfig, paths: &Paths) -> anyhow::Result<Workspace> {
    Ok(prepare(cfg, Some(&paths.checkpoints()))?)
}

fn adversarial_sets(ws: &Workspace, paths: &Paths) -> anyhow::Result<Vec<AdversarialSet>> {
    let mut fresh = None;
    let mut sets = Vec::new();
    for (i, &method) in ws.config.attack_methods.iter().enumerate() {
        let dir = paths.adv(method);
        if dir.join(imprint_core::attacks::persist::ADV_MANIFEST).exists() {
            let (manifest, examples) = load_adversarial(&dir)?;
            if manifest.attack.method != method || manifest.attack.epsilon != ws.config.attack_epsilon {
                bail!("{} holds a different attack; rerun `attack`", dir.display());
            }
            sets.push(AdversarialSet {
                attack: method.to_string(),
                success: manifest.entries.iter().map(|e| e.success).collect(),
                trajectory_distance: manifest.entries.iter().map(|e| e.trajectory_distance).collect(),
                examples,
                queries: 0,
            });
        } else {
            if fresh.is_none() {
                fresh = Some(generate_adversarial(ws, &ws.attack_sources()?)?);
            }
            sets.push(fresh.as_ref().expect("generated above")[i].clone());
        }
    }
    Ok(sets)
}

fn cmd_train(cfg: &ExperimentConfig, paths: &Paths) -> anyhow::Result<()> {
    let ws = workspace(cfg, paths)?;
    let set = &ws.checkpoints;
    println!("{} checkpoints in {}", set.len(), paths.checkpoints().display());
    match set.val_metric().last() {
        Some(Metric::Accuracy(a)) => println!("final validation accuracy {a:.4}"),
        Some(Metric::Mse(m)) => println!("final validation mse {m:.6}"),
        None => {}
    }
    Ok(())
}

fn cmd_attack(cfg: &ExperimentConfig, paths: &Paths) -> anyhow::Result<()> {
    let ws = workspace(cfg, paths)?;
    let sources = ws.attack_sources()?;
    let sets = generate_adversarial(&ws, &sources)?;
    for (&method, set) in cfg.attack_methods.iter().zip(&sets) {
        let entries = set
            .examples
            .iter()
            .zip(&sources)
            .enumerate()
            .map(|(i, (adv, src))| AdvEntry {
                example_id: src.id,
                seed: attack_spec_for(cfg, method, src.id).seed,
                success: set.success[i],
                linf: adv.x.max_abs_diff(&src.x) as f64,
                l2: l2_distance(&adv.x, &src.x),
                trajectory_distance: set.trajectory_distance[i],
                file: example_file_name(src.id),
            })
            .collect();
        let manifest = AdvManifest {
            attack: attack_spec_for(cfg, method, 0),
            feature_shape: ws.data.feature_shape.clone(),
            entries,
        };
        let dir = paths.adv(method);
        save_adversarial(&dir, &manifest, &set.examples)?;
        println!(
            "{method}: {} of {} successful, written to {}",
            set.success.iter().filter(|&&s| s).count(),
            set.examples.len(),
            dir.display()
        );
    }
    Ok(())
}

fn cmd_extract(cfg: &ExperimentConfig, paths: &Paths, split: SplitArg, adv: Option<&Path>) -> anyhow::Result<()> {
    let ws = workspace(cfg, paths)?;
    let (name, examples): (String, Vec<Example>) = match adv {
        Some(dir) => {
            let (manifest, ex) = load_adversarial(dir)?;
            (format!("adv_{}", manifest.attack.method), ex)
        }
        None => {
            let split = Split::from(split);
            (format!("{split:?}").to_lowercase(), ws.data.split(split).to_vec())
        }
    };
    std::fs::create_dir_all(&paths.root).with_context(|| format!("creating {}", paths.root.display()))?;
    let path = match cfg.trajectory_signal {
        SignalKind::Loss => {
            let t = batch_extract(&ws.checkpoints, &examples, cfg.trajectory_mode, cfg.parallelism)?;
            let path = paths.root.join(format!("trajectories_{name}.csv"));
            write_trajectories_csv(&path, &t)?;
            path
        }
        SignalKind::Softmax => {
            let m = batch_extract_imprints(&ws.checkpoints, &examples, cfg.parallelism)?;
            let path = paths.root.join(format!("imprints_{name}.csv"));
            write_imprints_csv(&path, &m)?;
            path
        }
    };
    println!("{} rows written to {}", examples.len(), path.display());
    Ok(())
}

fn fit_bundle(cfg: &ExperimentConfig, paths: &Paths, ws: &Workspace) -> anyhow::Result<PipelineBundle> {
    let bundle = Offline::new(ws)?.bundle(cfg.variant)?;
    bundle.save(&paths.bundle())?;
    Ok(bundle)
}

fn cmd_fit(cfg: &ExperimentConfig, paths: &Paths) -> anyhow::Result<()> {
    let ws = workspace(cfg, paths)?;
    let bundle = fit_bundle(cfg, paths, &ws)?;
    println!(
        "detector fitted on {} benign inputs (variant {}, preset FRR {}, threshold {:.6e}), bundle in {}",
        bundle.pool_ids().len(),
        bundle.variant(),
        bundle.preset_frr(),
        bundle.detector().threshold(),
        paths.bundle().display()
    );
    Ok(())
}

fn load_bundle(cfg: &ExperimentConfig, paths: &Paths) -> anyhow::Result<PipelineBundle> {
    let dir = paths.bundle();
    if !dir.join(imprint_core::harness::BUNDLE_FILE).exists() {
        bail!("no bundle in {}; run `fit` first", dir.display());
    }
    let bundle = PipelineBundle::load(&dir)?;
    if bundle.config_hash() != cfg.hash() {
        return Err(Error::Config(format!("bundle in {} was fitted under a different config", dir.display())).into());
    }
    Ok(bundle)
}

fn cmd_detect(cfg: &ExperimentConfig, paths: &Paths, input: Option<&Path>, count: usize) -> anyhow::Result<()> {
    let bundle = load_bundle(cfg, paths)?;
    let examples = match input {
        Some(path) => read_examples_csv(path, bundle.checkpoints().spec().input_shape())?,
        None => {
            let ws = workspace(cfg, paths)?;
            ws.data.test.iter().take(count).cloned().collect()
        }
    };
    let mut latencies = Vec::with_capacity(examples.len());
    println!("index,verdict,score,threshold");
    for (i, ex) in examples.iter().enumerate() {
        let (v, l) = bundle.detect(&ex.x).map_err(|e| e.for_example(i))?;
        println!("{i},{},{:.6e},{:.6e}", v.verdict, v.score, v.threshold);
        latencies.push(l);
    }
    let path = paths.root.join("latencies.csv");
    write_latencies(&path, &latencies)?;
    Ok(())
}

fn print_summary(name: &str, r: &imprint_core::harness::EvalReport) {
    println!(
        "{name}: detection accuracy {:.4} ({} of {}), online FRR {:.4} ({} of {}), preset FRR {}",
        r.detection_accuracy, r.detected, r.adversarial, r.online_frr, r.rejected, r.holdout, r.preset_frr
    );
}

fn cmd_eval(cfg: &ExperimentConfig, paths: &Paths) -> anyhow::Result<()> {
    let ws = workspace(cfg, paths)?;
    let bundle = if paths.bundle().join(imprint_core::harness::BUNDLE_FILE).exists() {
        load_bundle(cfg, paths)?
    } else {
        fit_bundle(cfg, paths, &ws)?
    };
    let adversarial: Vec<AdversarialSet> = adversarial_sets(&ws, paths)?.iter().map(AdversarialSet::successful).collect();
    let report = evaluate_detection(&bundle, cfg, &ws.benign_holdout()?, &adversarial)?;
    emit_report(&report, ReportFormat::Json, &paths.root.join("report.json"))?;
    emit_report(&report, ReportFormat::Csv, &paths.root.join("report.csv"))?;
    print_summary(&cfg.variant.to_string(), &report);
    Ok(())
}

fn cmd_ablate(cfg: &ExperimentConfig, paths: &Paths, variant: &str) -> anyhow::Result<()> {
    let variants: Vec<Variant> = if variant == "all" {
        Variant::ALL.to_vec()
    } else {
        vec![variant.parse()?]
    };
    let reports = run_ablations(cfg, &variants)?;
    let dir = paths.root.join("ablation");
    for (v, r) in variants.iter().zip(&reports) {
        emit_report(r, ReportFormat::Json, &dir.join(format!("{v}.json")))?;
        emit_report(r, ReportFormat::Csv, &dir.join(format!("{v}.csv")))?;
        print_summary(&v.to_string(), r);
    }
    Ok(())
}

fn run(cli: &Cli, cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let paths = Paths {
        root: cli.out_dir.clone(),
    };
    match &cli.command {
        Command::Train => cmd_train(cfg, &paths),
        Command::Attack => cmd_attack(cfg, &paths),
        Command::Extract { split, adv } => cmd_extract(cfg, &paths, *split, adv.as_deref()),
        Command::Fit => cmd_fit(cfg, &paths),
        Command::Detect { input, count } => cmd_detect(cfg, &paths, input.as_deref(), *count),
        Command::Eval => cmd_eval(cfg, &paths),
        Command::Ablate { variant } => cmd_ablate(cfg, &paths, variant),
    }
}

fn is_config_error(err: &anyhow::Error) -> bool {
    err.downcast_ref::<Error>()
        .is_some_and(|e| matches!(e.root(), Error::Config(_)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_global_threads(cli.parallelism);
    let cfg = match load_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match run(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_config_error(&e) { EXIT_CONFIG } else { EXIT_RUNTIME })
        }
    }
}
