//! `haptic-bench`: demonstrations, dataset collection and recognition experiments.
//!
//! Every step reads and writes versioned text files in the output directory,
//! so a pipeline can be run piecewise or end to end with `report --analyze`.

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use haptic_core::bench::{
    self, ablate, compare_modes, curve, demonstrations, fit_demonstrations, generate_dataset, render_report, select_for,
    Catalog, ExperimentPlan, ReportBundle,
};
use haptic_core::explore::{Explorer, Mode};
use haptic_core::grasp_model::{demos_from_text, demos_to_text, Gmm};
use haptic_core::learn::{Classifier, Dataset, FeatureSubset, Hypers};
use haptic_core::sim::ObjectTag;
use haptic_core::{par, Config};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "haptic-bench", version, about = "Simulated in-hand haptic object recognition")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Master seed; overrides the plan's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Configuration file (TOML); defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Experiment plan (TOML).
    #[arg(long, global = true)]
    plan: Option<PathBuf>,
    /// Object catalog file.
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,
    /// Directory for all inputs and outputs.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Generate stable-grasp demonstrations.
    GenDemos,
    /// Fit the stable-grasp mixture model.
    FitGmm {
        /// Demonstrations file (default: <out>/demos.csv).
        #[arg(long)]
        demos: Option<PathBuf>,
    },
    /// Run every trial of the plan and write a dataset.
    Collect {
        #[arg(long)]
        mode: Mode,
        /// Mixture model file (default: <out>/gmm.txt).
        #[arg(long)]
        gmm: Option<PathBuf>,
    },
    /// Train a classifier on a whole dataset.
    Train {
        #[arg(long, default_value = "full")]
        mode: Mode,
        #[arg(long, default_value = "all")]
        subset: FeatureSubset,
        /// Fixed regularization; selected by inner cross-validation when omitted.
        #[arg(long, requires = "sigma_factor")]
        lambda: Option<f64>,
        #[arg(long, requires = "lambda")]
        sigma_factor: Option<f64>,
    },
    /// Evaluate a trained classifier on a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Cross-validated accuracy for every feature subset.
    Ablate {
        #[arg(long, default_value = "full")]
        mode: Mode,
        /// Only objects tagged ycb-like.
        #[arg(long)]
        ycb_only: bool,
    },
    /// Learning curve over the plan's training sizes.
    Curve {
        #[arg(long, default_value = "full")]
        mode: Mode,
        #[arg(long, default_value = "all")]
        subset: FeatureSubset,
    },
    /// Paired comparison of the two modes on identical folds.
    Compare {
        #[arg(long, default_value = "all")]
        subset: FeatureSubset,
    },
    /// Render the collected results.
    Report {
        /// Recompute every analysis from both datasets first.
        #[arg(long)]
        analyze: bool,
    },
}

struct Ctx {
    cfg: Config,
    plan: ExperimentPlan,
    catalog: Catalog,
    out: PathBuf,
}

impl Ctx {
    fn load(g: &Global) -> anyhow::Result<Self> {
        let cfg = match &g.config {
            Some(p) => Config::from_text(&read(p)?)?,
            None => Config::default(),
        };
        cfg.validate()?;
        let mut plan = match &g.plan {
            Some(p) => ExperimentPlan::from_text(&read(p)?)?,
            None => ExperimentPlan::default(),
        };
        if let Some(s) = g.seed {
            plan.seed = s;
        }
        let catalog = match &g.catalog {
            Some(p) => Catalog::from_text(&read(p)?)?,
            None => Catalog::standard(),
        };
        catalog.validate()?;
        std::fs::create_dir_all(&g.out).map_err(haptic_core::Error::Io)?;
        Ok(Self {
            cfg,
            plan,
            catalog,
            out: g.out.clone(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn dataset(&self, mode: Mode) -> anyhow::Result<Dataset> {
        let ds = Dataset::from_text(&read(&self.path(&dataset_name(mode)))?)?;
        if ds.catalog_hash != self.catalog.hash() {
            bail!(haptic_core::Error::CatalogMismatch(format!("{} was collected with another catalog", dataset_name(mode))));
        }
        Ok(ds)
    }

    /// Analyses use the dataset's own seed so every number traces back to it.
    fn plan_for(&self, ds: &Dataset) -> ExperimentPlan {
        ExperimentPlan {
            seed: ds.seed,
            ..self.plan.clone()
        }
    }

    fn bundle(&self, ds: &Dataset) -> anyhow::Result<ReportBundle> {
        let path = self.path("bundle.json");
        let fresh = ReportBundle {
            seed: ds.seed,
            config_hash: ds.config_hash.clone(),
            catalog_hash: ds.catalog_hash.clone(),
            ..Default::default()
        };
        if !path.exists() {
            return Ok(fresh);
        }
        let b = ReportBundle::from_text(&read(&path)?)?;
        if (b.seed, &b.config_hash, &b.catalog_hash) != (ds.seed, &ds.config_hash, &ds.catalog_hash) {
            log::warn!("bundle.json belongs to another run; starting a new one");
            return Ok(fresh);
        }
        Ok(b)
    }

    fn save_bundle(&self, b: &ReportBundle) -> anyhow::Result<()> {
        write(&self.path("bundle.json"), &b.to_text())
    }
}

fn dataset_name(mode: Mode) -> String {
    format!("dataset_{}.csv", mode.name())
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text)
        .map_err(haptic_core::Error::Io)
        .with_context(|| format!("cannot write {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let ctx = Ctx::load(&cli.global)?;
    match cli.command {
        Command::GenDemos => {
            let demos = demonstrations(&ctx.cfg, ctx.plan.seed)?;
            write(&ctx.path("demos.csv"), &demos_to_text(&demos.samples))?;
            println!("{} demonstrations ({} widths without a stable grasp)", demos.samples.len(), demos.skipped);
        }
        Command::FitGmm { demos } => {
            let path = demos.unwrap_or_else(|| ctx.path("demos.csv"));
            let samples = demos_from_text(&read(&path)?)?;
            let gmm = fit_demonstrations(&ctx.cfg, &samples, ctx.plan.seed)?;
            write(&ctx.path("gmm.txt"), &gmm.to_text())?;
            println!("fitted {} components on {} samples, d in [{:.1}, {:.1}] mm", gmm.components(), samples.len(), gmm.d_range.0, gmm.d_range.1);
        }
        Command::Collect { mode, gmm } => {
            let path = gmm.unwrap_or_else(|| ctx.path("gmm.txt"));
            let model = match (mode, path.exists()) {
                (_, true) => Some(Gmm::from_text(&read(&path)?)?),
                (Mode::Full, false) => bail!("full mode needs a mixture model; run fit-gmm first ({} not found)", path.display()),
                (Mode::Benchmark, false) => None,
            };
            let explorer = Explorer::new(&ctx.cfg, model);
            let ds = generate_dataset(&explorer, &ctx.catalog, &ctx.plan, &ctx.cfg.trial, mode, &ctx.cfg.hash())?;
            write(&ctx.path(&dataset_name(mode)), &ds.to_text())?;
            let retried = ds.rows.iter().filter(|r| r.attempts > 1).count();
            println!("{} trials, {} failed, {retried} needed a retry", ds.rows.len(), ds.failures());
        }
        Command::Train {
            mode,
            subset,
            lambda,
            sigma_factor,
        } => {
            let ds = ctx.dataset(mode)?;
            let hypers = match (lambda, sigma_factor) {
                (Some(lambda), Some(sigma_factor)) => Hypers { lambda, sigma_factor },
                _ => select_for(&ds, subset, &ctx.cfg, ds.seed)?,
            };
            let clf = Classifier::fit(&ds, subset, hypers)?;
            let name = format!("classifier_{}_{}.txt", mode.name(), subset.name());
            write(&ctx.path(&name), &clf.to_text())?;
            println!("lambda {:e}, sigma factor {}, {} classes -> {name}", hypers.lambda, hypers.sigma_factor, clf.model.classes.len());
        }
        Command::Eval { model, dataset } => {
            let clf = Classifier::from_text(&read(&model)?)?;
            let ds = Dataset::from_text(&read(&dataset)?)?;
            let (acc, confusion) = clf.evaluate(&ds)?;
            let mut csv = String::from("true\\predicted");
            for c in &clf.model.classes {
                csv.push_str(&format!(",{c}"));
            }
            csv.push('\n');
            for (c, row) in clf.model.classes.iter().zip(&confusion) {
                csv.push_str(&c.to_string());
                for v in row {
                    csv.push_str(&format!(",{v}"));
                }
                csv.push('\n');
            }
            write(&ctx.path("eval_confusion.csv"), &csv)?;
            println!("accuracy {}% on {} rows", pct(acc), ds.samples().len());
        }
        Command::Ablate { mode, ycb_only } => {
            let ds = ctx.dataset(mode)?;
            let ycb = ctx.catalog.ids_with_tag(ObjectTag::YcbLike);
            let only = ycb_only.then_some(ycb.as_slice());
            let reports = ablate(&ds, &ctx.plan.subsets, &ctx.cfg, ds.seed, only)?;
            for r in &reports {
                println!("{:<12} {:>3} dims  {:>5}% +- {}", r.subset.name(), r.subset.dims(), pct(r.mean), pct(r.std));
            }
            let mut b = ctx.bundle(&ds)?;
            match (ycb_only, mode) {
                (true, Mode::Full) => b.ablation_ycb = Some(reports),
                (true, Mode::Benchmark) => log::warn!("the report keeps ycb-only ablations of the full dataset only"),
                (false, Mode::Full) => b.ablation_full = Some(reports),
                (false, Mode::Benchmark) => b.ablation_benchmark = Some(reports),
            }
            ctx.save_bundle(&b)?;
        }
        Command::Curve { mode, subset } => {
            let ds = ctx.dataset(mode)?;
            let c = curve(&ds, subset, &ctx.plan_for(&ds), &ctx.cfg)?;
            for p in &c.points {
                println!("{:>3} per class  {:>5}% +- {}", p.size, pct(p.mean), pct(p.std));
            }
            let mut b = ctx.bundle(&ds)?;
            match mode {
                Mode::Full => b.curve_full = Some(c),
                Mode::Benchmark => b.curve_benchmark = Some(c),
            }
            ctx.save_bundle(&b)?;
        }
        Command::Compare { subset } => {
            let full = ctx.dataset(Mode::Full)?;
            let benchmark = ctx.dataset(Mode::Benchmark)?;
            let cmp = compare_modes(&full, &benchmark, subset, &ctx.cfg, full.seed, ctx.plan.significance)?;
            println!(
                "full {}% vs benchmark {}%: gap {} points, t = {:.3}, p = {:.4} ({})",
                pct(cmp.full.mean),
                pct(cmp.benchmark.mean),
                pct(cmp.gap),
                cmp.test.t,
                cmp.test.p_value,
                if cmp.test.significant { "significant" } else { "not significant" }
            );
            let mut b = ctx.bundle(&full)?;
            b.comparison = Some(cmp);
            ctx.save_bundle(&b)?;
        }
        Command::Report { analyze } => {
            let b = if analyze {
                let full = ctx.dataset(Mode::Full)?;
                let benchmark = ctx.dataset(Mode::Benchmark)?;
                let b = bench::analyze(&ctx.cfg, &ctx.catalog, &ctx.plan_for(&full), &full, &benchmark)?;
                ctx.save_bundle(&b)?;
                b
            } else {
                ReportBundle::from_text(&read(&ctx.path("bundle.json"))?)?
            };
            let dir = ctx.path("report");
            let files = render_report(&b, &dir)?;
            print!("{}", read(&dir.join("summary.txt"))?);
            log::info!("rendered {} files into {}", files.len(), dir.display());
        }
    }
    Ok(())
}

/// 2 for invalid input, 3 when an experiment could not be completed.
fn exit_code(e: &anyhow::Error) -> u8 {
    e.chain()
        .find_map(|c| c.downcast_ref::<haptic_core::Error>())
        .map_or(2, |c| if c.is_validation() { 2 } else { 3 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let jobs = cli.global.jobs;
    match par::with_jobs(jobs, || run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
