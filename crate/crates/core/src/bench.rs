//! Object catalog, dataset generation and experiment orchestration.

use crate::config::{Config, TrialDefaults};
use crate::error::{Error, Result};
use crate::explore::{Explorer, Mode, Outcome, TrialConfig};
use crate::geometry::Superellipse;
use crate::grasp_model::{fit_gmm, generate_demonstrations, DemoSample, DemoSet, Gmm};
use crate::learn::{
    assemble, cross_validate, learning_curve, paired_t_test, select_hypers, CurvePoint, CvReport, Dataset, DatasetRow,
    FeatureSubset, Hypers, PairedTest,
};
use crate::par;
use crate::seed;
use crate::sim::{ObjectSpec, ObjectTag};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;

pub const CATALOG_SCHEMA: &str = "haptic-catalog/1";
pub const PLAN_SCHEMA: &str = "haptic-plan/1";
pub const REPORT_SCHEMA: &str = "haptic-report/1";

// seed streams
const DEMOS: u64 = 1;
const TRIALS: u64 = 2;
const CV: u64 = 3;
const CURVE: u64 = 4;
const TRAIN: u64 = 5;

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Cross-section scale of the index, ring and little planes relative to the grasp plane.
#[derive(Debug, Clone, Copy)]
enum Profile {
    Prism,
    Sphere,
    Cone,
    Squat,
}

impl Profile {
    fn scales(self) -> [f64; 3] {
        match self {
            Profile::Prism => [1.0, 1.0, 1.0],
            Profile::Sphere => [0.97, 0.87, 0.66],
            Profile::Cone => [0.85, 0.68, 0.5],
            Profile::Squat => [0.9, 0.45, 0.2],
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn object(
    id: u32,
    name: &str,
    tag: ObjectTag,
    width: f64,
    aspect: f64,
    p: f64,
    profile: Profile,
    stiffness: f64,
    friction: f64,
    load: f64,
) -> ObjectSpec {
    let a = width / 2.0;
    let b = aspect * a;
    let s = profile.scales();
    ObjectSpec {
        id,
        name: name.to_string(),
        tag,
        stiffness,
        friction,
        load,
        sections: [
            Superellipse::new(a, b, p),
            Superellipse::new(s[0] * a, s[0] * b, p),
            Superellipse::new(s[1] * a, s[1] * b, p),
            Superellipse::new(s[2] * a, s[2] * b, p),
        ],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub objects: Vec<ObjectSpec>,
}

impl Catalog {
    /// 21 household-like objects and 9 shape/softness variants.
    pub fn standard() -> Self {
        use ObjectTag::{Supplemental as S, YcbLike as Y};
        use Profile::*;
        let objects = vec![
            object(0, "tennis-ball", Y, 64.0, 1.0, 2.0, Sphere, 1.2, 0.9, 0.25),
            object(1, "baseball", Y, 68.0, 1.0, 2.0, Sphere, 4.0, 0.8, 0.35),
            object(2, "golf-ball", Y, 42.0, 1.0, 2.0, Sphere, 5.0, 0.7, 0.2),
            object(3, "racquetball", Y, 56.0, 1.0, 2.0, Sphere, 0.6, 0.9, 0.2),
            object(4, "plum", Y, 50.0, 0.95, 2.0, Sphere, 0.5, 0.8, 0.25),
            object(5, "peach", Y, 58.0, 1.0, 2.0, Sphere, 0.4, 0.8, 0.3),
            object(6, "lemon", Y, 52.0, 0.8, 2.2, Sphere, 1.0, 0.8, 0.25),
            object(7, "orange", Y, 68.0, 1.0, 2.0, Sphere, 0.7, 0.8, 0.35),
            object(8, "apple", Y, 66.0, 0.95, 2.0, Sphere, 2.0, 0.8, 0.35),
            object(9, "banana", Y, 34.0, 0.9, 2.0, Prism, 0.8, 0.8, 0.25),
            object(10, "strawberry", Y, 30.0, 1.0, 2.0, Cone, 0.3, 0.8, 0.1),
            object(11, "mustard-bottle", Y, 58.0, 0.6, 4.0, Prism, 0.9, 0.7, 0.35),
            object(12, "bleach-cleanser", Y, 66.0, 0.6, 4.0, Prism, 1.5, 0.7, 0.4),
            object(13, "sugar-box", Y, 38.0, 1.5, 8.0, Prism, 2.5, 0.7, 0.3),
            object(14, "pudding-box", Y, 35.0, 1.3, 8.0, Squat, 3.0, 0.7, 0.3),
            object(15, "gelatin-box", Y, 28.0, 1.2, 8.0, Squat, 3.0, 0.7, 0.2),
            object(16, "potted-meat-can", Y, 50.0, 0.7, 6.0, Squat, 5.0, 0.7, 0.35),
            object(17, "tomato-soup-can", Y, 66.0, 1.0, 2.0, Prism, 5.0, 0.7, 0.4),
            object(18, "mug", Y, 62.0, 1.0, 2.0, Squat, 5.0, 0.7, 0.35),
            object(19, "foam-brick", Y, 50.0, 1.0, 8.0, Prism, 0.25, 1.0, 0.15),
            object(20, "sponge", Y, 36.0, 1.6, 6.0, Prism, 0.3, 1.0, 0.1),
            object(21, "soft-ball", S, 40.0, 1.0, 2.0, Sphere, 0.25, 0.9, 0.15),
            object(22, "medium-ball", S, 40.0, 1.0, 2.0, Sphere, 1.0, 0.9, 0.15),
            object(23, "hard-ball", S, 40.0, 1.0, 2.0, Sphere, 5.0, 0.9, 0.15),
            object(24, "soft-cylinder", S, 55.0, 1.0, 2.0, Prism, 0.3, 0.9, 0.2),
            object(25, "hard-cylinder", S, 55.0, 1.0, 2.0, Prism, 4.0, 0.9, 0.2),
            object(26, "soft-cube", S, 45.0, 1.0, 8.0, Prism, 0.3, 0.9, 0.2),
            object(27, "hard-cube", S, 45.0, 1.0, 8.0, Prism, 4.0, 0.9, 0.2),
            object(28, "soft-cone", S, 40.0, 1.0, 2.0, Cone, 0.5, 0.9, 0.15),
            object(29, "hard-cone", S, 40.0, 1.0, 2.0, Cone, 3.0, 0.9, 0.15),
        ];
        Catalog { objects }
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids: Vec<u32> = self.objects.iter().map(|o| o.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.objects.len() {
            return Err(Error::Domain("catalog ids must be unique".into()));
        }
        if let Some(o) = self.objects.iter().find(|o| !o.is_valid()) {
            return Err(Error::Domain(format!("invalid object `{}`", o.name)));
        }
        if self.objects.len() < 2 {
            return Err(Error::Domain("catalog needs at least two objects".into()));
        }
        Ok(())
    }

    pub fn get(&self, id: u32) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn ids_with_tag(&self, tag: ObjectTag) -> Vec<u32> {
        self.objects.iter().filter(|o| o.tag == tag).map(|o| o.id).collect()
    }

    /// Keep the first `n` objects.
    pub fn truncated(&self, n: usize) -> Catalog {
        Catalog {
            objects: self.objects.iter().take(n).cloned().collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let body = serde_json::to_string_pretty(self).expect("catalog serializes");
        format!("schema={CATALOG_SCHEMA}\n{body}\n")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let body = strip_schema(text, CATALOG_SCHEMA)?;
        let c: Catalog = serde_json::from_str(body).map_err(|e| Error::Format(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_text().as_bytes())
    }
}

fn strip_schema<'a>(text: &'a str, schema: &str) -> Result<&'a str> {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    if first.trim() != format!("schema={schema}") {
        return Err(Error::Format(format!("expected first line `schema={schema}`")));
    }
    Ok(rest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub seed: u64,
    pub trials: u32,
    /// Attempts per trial including the first.
    pub attempts: u32,
    /// Abort dataset generation above this fraction of failed trials.
    pub max_failure_rate: f64,
    pub subsets: Vec<FeatureSubset>,
    pub curve_sizes: Vec<usize>,
    pub curve_test: usize,
    pub curve_repeats: usize,
    pub significance: f64,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            seed: 42,
            trials: 20,
            attempts: 3,
            max_failure_rate: 0.05,
            subsets: FeatureSubset::ALL.to_vec(),
            curve_sizes: (3..=15).collect(),
            curve_test: 5,
            curve_repeats: 5,
            significance: 0.05,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Domain(m.to_string()));
        if self.trials == 0 || self.attempts == 0 {
            return bad("trials and attempts must be positive");
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) || !(self.significance > 0.0 && self.significance < 1.0) {
            return bad("rates must lie in [0, 1]");
        }
        if self.curve_repeats == 0 || self.curve_sizes.contains(&0) {
            return bad("learning-curve sizes and repeats must be positive");
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let body = toml::to_string(self).expect("plan serializes");
        format!("schema=\"{PLAN_SCHEMA}\"\n{body}")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct WithSchema {
            schema: String,
            #[serde(flatten)]
            plan: ExperimentPlan,
        }
        let parsed: WithSchema = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if parsed.schema != PLAN_SCHEMA {
            return Err(Error::Format(format!("unsupported plan schema {}", parsed.schema)));
        }
        parsed.plan.validate()?;
        Ok(parsed.plan)
    }
}

/// Demonstrations and the stable-grasp model fitted to them, both derived from the master seed.
pub fn demonstrations(cfg: &Config, master: u64) -> Result<DemoSet> {
    let gm = &cfg.grasp_model;
    let mut rng = seed::rng(master, &[DEMOS, 0]);
    generate_demonstrations(&cfg.hand, gm.demos, (gm.demo_width_min, gm.demo_width_max), gm.demo_noise, &mut rng)
}

/// Fit the stable-grasp mixture; the same samples and seed give the same model.
pub fn fit_demonstrations(cfg: &Config, samples: &[DemoSample], master: u64) -> Result<Gmm> {
    let gm = &cfg.grasp_model;
    fit_gmm(samples, gm.components, &mut seed::rng(master, &[DEMOS, 1]), gm.max_iter, gm.tol, gm.regularization)
}

pub fn fit_stable_grasp_model(cfg: &Config, master: u64) -> Result<(DemoSet, Gmm)> {
    let demos = demonstrations(cfg, master)?;
    let gmm = fit_demonstrations(cfg, &demos.samples, master)?;
    Ok((demos, gmm))
}

/// Seed of one attempt. Independent of the mode, so both modes see the same presented poses.
pub fn trial_seed(master: u64, object: u32, trial: u32, attempt: u32) -> u64 {
    seed::derive(master, &[TRIALS, object as u64, trial as u64, attempt as u64])
}

/// Run every (object, trial) with retries and collect the feature rows.
pub fn generate_dataset(
    explorer: &Explorer,
    catalog: &Catalog,
    plan: &ExperimentPlan,
    defaults: &TrialDefaults,
    mode: Mode,
    config_hash: &str,
) -> Result<Dataset> {
    catalog.validate()?;
    plan.validate()?;
    let jobs: Vec<(&ObjectSpec, u32)> = catalog
        .objects
        .iter()
        .flat_map(|o| (0..plan.trials).map(move |t| (o, t)))
        .collect();
    let rows = par::map(&jobs, |&(spec, trial)| -> Result<DatasetRow> {
        let mut last = Outcome::Timeout;
        for attempt in 0..plan.attempts {
            let s = trial_seed(plan.seed, spec.id, trial, attempt);
            let cfg = TrialConfig::new(defaults, mode, s);
            let rec = explorer.run_trial(spec, &cfg, &mut seed::rng(s, &[]))?;
            if rec.outcome == Outcome::Completed {
                return Ok(DatasetRow {
                    label: spec.id,
                    trial,
                    attempts: attempt + 1,
                    outcome: rec.outcome,
                    features: Some(assemble(&rec)?),
                });
            }
            log::debug!("{} trial {trial} attempt {attempt}: {:?} in {:?}", spec.name, rec.outcome, rec.final_phase);
            last = rec.outcome;
        }
        Ok(DatasetRow {
            label: spec.id,
            trial,
            attempts: plan.attempts,
            outcome: last,
            features: None,
        })
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let ds = Dataset {
        mode,
        seed: plan.seed,
        config_hash: config_hash.to_string(),
        catalog_hash: catalog.hash(),
        rows,
    };
    let failed = ds.failures();
    if failed as f64 > plan.max_failure_rate * ds.rows.len() as f64 {
        let mut by_object: Vec<String> = catalog
            .objects
            .iter()
            .filter_map(|o| {
                let n = ds.rows.iter().filter(|r| r.label == o.id && r.features.is_none()).count();
                (n > 0).then(|| format!("{} ({n})", o.name))
            })
            .collect();
        by_object.truncate(10);
        return Err(Error::Experiment(format!(
            "{failed} of {} trials failed after retries: {}",
            ds.rows.len(),
            by_object.join(", ")
        )));
    }
    Ok(ds)
}

fn cv_rng(master: u64, tag: u64) -> rand_chacha::ChaCha8Rng {
    seed::rng(master, &[CV, tag])
}

fn subset_tag(s: FeatureSubset) -> u64 {
    FeatureSubset::ALL.iter().position(|x| *x == s).unwrap_or(0) as u64
}

/// Cross-validated accuracy of every subset, optionally restricted to the tagged objects.
pub fn ablate(ds: &Dataset, subsets: &[FeatureSubset], cfg: &Config, master: u64, only: Option<&[u32]>) -> Result<Vec<CvReport>> {
    let ds = match only {
        Some(ids) => ds.filter_labels(|l| ids.contains(&l)),
        None => ds.clone(),
    };
    subsets
        .iter()
        .map(|&s| cross_validate(&ds, s, &cfg.learn, &mut cv_rng(master, subset_tag(s))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeComparison {
    pub subset: FeatureSubset,
    pub full: CvReport,
    pub benchmark: CvReport,
    /// Full minus benchmark mean accuracy.
    pub gap: f64,
    pub test: PairedTest,
}

/// Same folds for both datasets (same seed, same row order), then a paired test over folds.
pub fn compare_modes(full: &Dataset, bench: &Dataset, subset: FeatureSubset, cfg: &Config, master: u64, alpha: f64) -> Result<ModeComparison> {
    if full.catalog_hash != bench.catalog_hash {
        return Err(Error::CatalogMismatch("datasets come from different catalogs".into()));
    }
    let labels = |d: &Dataset| d.samples().iter().map(|s| s.0).collect::<Vec<_>>();
    if labels(full) != labels(bench) {
        return Err(Error::CatalogMismatch("datasets have different label sequences".into()));
    }
    let a = cross_validate(full, subset, &cfg.learn, &mut cv_rng(master, subset_tag(subset)))?;
    let b = cross_validate(bench, subset, &cfg.learn, &mut cv_rng(master, subset_tag(subset)))?;
    let test = paired_t_test(&a.fold_accuracy, &b.fold_accuracy, alpha)?;
    Ok(ModeComparison {
        subset,
        gap: a.mean - b.mean,
        full: a,
        benchmark: b,
        test,
    })
}

/// Inner-CV hyperparameter choice for a final model trained on the whole dataset.
pub fn select_for(ds: &Dataset, subset: FeatureSubset, cfg: &Config, master: u64) -> Result<Hypers> {
    let samples = ds.samples();
    let xs: Vec<Vec<f64>> = samples.iter().map(|s| subset.select(&s.1)).collect();
    let labels: Vec<u32> = samples.iter().map(|s| s.0).collect();
    select_hypers(&xs, &labels, &cfg.learn, &mut seed::rng(master, &[TRAIN, subset_tag(subset)]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub hypers: Hypers,
    pub points: Vec<CurvePoint>,
}

/// Learning curve with hyperparameters selected once on the whole dataset.
pub fn curve(ds: &Dataset, subset: FeatureSubset, plan: &ExperimentPlan, cfg: &Config) -> Result<Curve> {
    let samples = ds.samples();
    let xs: Vec<Vec<f64>> = samples.iter().map(|s| subset.select(&s.1)).collect();
    let labels: Vec<u32> = samples.iter().map(|s| s.0).collect();
    let hypers = select_hypers(&xs, &labels, &cfg.learn, &mut seed::rng(plan.seed, &[CURVE, 0]))?;
    let points = learning_curve(
        ds,
        subset,
        &plan.curve_sizes,
        plan.curve_test,
        plan.curve_repeats,
        hypers,
        &mut seed::rng(plan.seed, &[CURVE, 1]),
    )?;
    Ok(Curve { hypers, points })
}

/// Everything the report renders; each number derives from the stored datasets and seed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportBundle {
    pub seed: u64,
    pub config_hash: String,
    pub catalog_hash: String,
    pub ablation_full: Option<Vec<CvReport>>,
    pub ablation_benchmark: Option<Vec<CvReport>>,
    pub ablation_ycb: Option<Vec<CvReport>>,
    pub comparison: Option<ModeComparison>,
    pub curve_full: Option<Curve>,
    pub curve_benchmark: Option<Curve>,
}

impl ReportBundle {
    pub fn to_text(&self) -> String {
        let body = serde_json::to_string_pretty(self).expect("bundle serializes");
        format!("schema={REPORT_SCHEMA}\n{body}\n")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        serde_json::from_str(strip_schema(text, REPORT_SCHEMA)?).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Datasets plus the full analysis.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub gmm: Gmm,
    pub full: Dataset,
    pub benchmark: Dataset,
    pub bundle: ReportBundle,
}

/// Collect both datasets and run ablations, the mode comparison and the learning curves.
pub fn run_experiment(cfg: &Config, catalog: &Catalog, plan: &ExperimentPlan) -> Result<Experiment> {
    cfg.validate()?;
    let (_, gmm) = fit_stable_grasp_model(cfg, plan.seed)?;
    let explorer = Explorer::new(cfg, Some(gmm.clone()));
    let hash = cfg.hash();
    let full = generate_dataset(&explorer, catalog, plan, &cfg.trial, Mode::Full, &hash)?;
    let benchmark = generate_dataset(&explorer, catalog, plan, &cfg.trial, Mode::Benchmark, &hash)?;
    let bundle = analyze(cfg, catalog, plan, &full, &benchmark)?;
    Ok(Experiment {
        gmm,
        full,
        benchmark,
        bundle,
    })
}

pub fn analyze(cfg: &Config, catalog: &Catalog, plan: &ExperimentPlan, full: &Dataset, benchmark: &Dataset) -> Result<ReportBundle> {
    let ycb = catalog.ids_with_tag(ObjectTag::YcbLike);
    Ok(ReportBundle {
        seed: plan.seed,
        config_hash: full.config_hash.clone(),
        catalog_hash: full.catalog_hash.clone(),
        ablation_full: Some(ablate(full, &plan.subsets, cfg, plan.seed, None)?),
        ablation_benchmark: Some(ablate(benchmark, &plan.subsets, cfg, plan.seed, None)?),
        ablation_ycb: Some(ablate(full, &plan.subsets, cfg, plan.seed, Some(&ycb))?),
        comparison: Some(compare_modes(full, benchmark, FeatureSubset::All, cfg, plan.seed, plan.significance)?),
        curve_full: Some(curve(full, FeatureSubset::All, plan, cfg)?),
        curve_benchmark: Some(curve(benchmark, FeatureSubset::All, plan, cfg)?),
    })
}

fn accuracy_csv(reports: &[(&str, &Option<Vec<CvReport>>)]) -> String {
    let mut s = String::from("dataset,subset,dims,mean,std");
    let folds = reports
        .iter()
        .filter_map(|r| r.1.as_ref())
        .flat_map(|v| v.iter().map(|c| c.fold_accuracy.len()))
        .max()
        .unwrap_or(0);
    for f in 0..folds {
        write!(s, ",fold{f}").unwrap();
    }
    s.push('\n');
    for (name, rep) in reports {
        for r in rep.iter().flatten() {
            write!(s, "{name},{},{},{:.6},{:.6}", r.subset.name(), r.subset.dims(), r.mean, r.std).unwrap();
            for a in &r.fold_accuracy {
                write!(s, ",{a:.6}").unwrap();
            }
            s.push('\n');
        }
    }
    s
}

fn curve_csv(full: &Option<Curve>, bench: &Option<Curve>) -> String {
    let mut s = String::from("mode,size,mean,std,repeats\n");
    for (name, c) in [("full", full), ("benchmark", bench)] {
        for p in c.iter().flat_map(|c| &c.points) {
            writeln!(s, "{name},{},{:.6},{:.6},{}", p.size, p.mean, p.std, p.accuracies.len()).unwrap();
        }
    }
    s
}

fn summary(b: &ReportBundle) -> String {
    let mut s = String::new();
    writeln!(s, "seed: {}", b.seed).unwrap();
    writeln!(s, "config hash: {}", b.config_hash).unwrap();
    writeln!(s, "catalog hash: {}", b.catalog_hash).unwrap();
    let ablation = |s: &mut String, title: &str, r: &Option<Vec<CvReport>>| {
        writeln!(s, "\n{title}").unwrap();
        match r {
            None => writeln!(s, "  not run").unwrap(),
            Some(v) => {
                for c in v {
                    writeln!(s, "  {:<13} {:>2} dims  {:6.2}% +- {:5.2}", c.subset.name(), c.subset.dims(), 100.0 * c.mean, 100.0 * c.std).unwrap();
                }
            }
        }
    };
    ablation(&mut s, "ablation (full mode)", &b.ablation_full);
    ablation(&mut s, "ablation (benchmark mode)", &b.ablation_benchmark);
    ablation(&mut s, "ablation (ycb-like objects, full mode)", &b.ablation_ycb);
    writeln!(s, "\nfull vs benchmark").unwrap();
    match &b.comparison {
        None => writeln!(s, "  not run").unwrap(),
        Some(c) => {
            writeln!(s, "  subset {}: full {:.2}%  benchmark {:.2}%  gap {:.2} points", c.subset.name(), 100.0 * c.full.mean, 100.0 * c.benchmark.mean, 100.0 * c.gap).unwrap();
            writeln!(
                s,
                "  paired t-test over {} folds: t = {:.4}, p = {:.6}, {} at alpha = {}",
                c.test.dof + 1,
                c.test.t,
                c.test.p_value,
                if c.test.significant { "significant" } else { "not significant" },
                c.test.alpha
            )
            .unwrap();
        }
    }
    for (title, c) in [("learning curve (full mode)", &b.curve_full), ("learning curve (benchmark mode)", &b.curve_benchmark)] {
        writeln!(s, "\n{title}").unwrap();
        match c {
            None => writeln!(s, "  not run").unwrap(),
            Some(c) => {
                writeln!(s, "  lambda {:e}, sigma factor {}", c.hypers.lambda, c.hypers.sigma_factor).unwrap();
                for p in &c.points {
                    writeln!(s, "  {:>2} trials/object  {:6.2}% +- {:5.2}", p.size, 100.0 * p.mean, 100.0 * p.std).unwrap();
                }
            }
        }
    }
    s
}

/// Write the report files; returns their names in write order.
pub fn render_report(b: &ReportBundle, outdir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(outdir)?;
    let mut files: Vec<(String, String)> = vec![
        ("summary.txt".into(), summary(b)),
        ("bundle.json".into(), b.to_text()),
        (
            "accuracy.csv".into(),
            accuracy_csv(&[("full", &b.ablation_full), ("benchmark", &b.ablation_benchmark), ("ycb-full", &b.ablation_ycb)]),
        ),
        ("learning_curve.csv".into(), curve_csv(&b.curve_full, &b.curve_benchmark)),
    ];
    if let Some(c) = &b.comparison {
        for (name, r) in [("full", &c.full), ("benchmark", &c.benchmark)] {
            files.push((format!("confusion_{name}.csv"), r.confusion_csv()));
            files.push((format!("confusion_{name}.txt"), r.confusion_grid()));
        }
    }
    for (name, body) in &files {
        std::fs::write(outdir.join(name), body)?;
    }
    Ok(files.into_iter().map(|f| f.0).collect())
}
