//! The `dgmd` command-line front end.
//!
//! Every subcommand reads a JSON [`RunConfig`] (or the defaults when
//! `--config` is absent) and lets flags override individual fields.
//! Outputs are deterministic given the config; wall-clock information goes
//! only to `run.log` in the output directory.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use dgmd_core::classifiers::{
    blend, ensemble_calibrate, mlp_train, read_bundle, svm_train, write_bundle, EnsembleModel, MlpConfig, SvmConfig,
};
use dgmd_core::dc_space::{dc_to_color, DiagnosticClass};
use dgmd_core::eval::{
    evaluate_out_of_domain_tasks, load_pipelines, run_cross_validation, stratified_folds, write_summary_csv,
    CvConfig, EvalReport, Task,
};
use dgmd_core::features::{read_features_csv, write_features_csv, FeatureRow, StructureFeatures};
use dgmd_core::grader_net::{train_ensemble, GraderConfig, GraderEnsemble, GradingSample};
use dgmd_core::patch_grid::GridSpec;
use dgmd_core::synth::{generate_dataset, load_dataset, Domain, PhantomSpec, Subject, MANIFEST_NAME};
use dgmd_core::volume::{read_volume, write_dcmap, DcMap, Dims};
use dgmd_core::Error;

/// Everything a run needs. Paths are relative to the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub ood_data_dir: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Patches per axis.
    pub k: usize,
    /// Patch size at grading resolution; overrides `grader.patch_dims`.
    pub patch_dims: Dims,
    /// Task of `classify`.
    pub task: Task,
    /// Tasks of `cross-validate` and `eval-ood`.
    pub tasks: Vec<Task>,
    pub n_folds: usize,
    pub n_per_class: usize,
    pub phantom: PhantomSpec,
    pub ood_noise_sigma: f64,
    pub ood_intensity_shift: f64,
    pub grader: GraderConfig,
    pub mlp: MlpConfig,
    pub svm: SvmConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            ood_data_dir: "data-ood".into(),
            output_dir: "out".into(),
            seed: 0,
            k: 2,
            patch_dims: [8, 12, 8],
            task: Task::ThreeClass,
            tasks: Task::ALL.to_vec(),
            n_folds: 10,
            n_per_class: 60,
            phantom: PhantomSpec {
                dims: [32, 48, 32],
                ..PhantomSpec::default()
            },
            ood_noise_sigma: 0.08,
            ood_intensity_shift: 0.05,
            grader: desk_grader(),
            mlp: MlpConfig::default(),
            svm: SvmConfig::default(),
        }
    }
}

/// Grader settings that train a full ensemble in about a minute on one core.
pub fn desk_grader() -> GraderConfig {
    GraderConfig {
        patch_dims: [8, 12, 8],
        base_channels: 4,
        levels: 3,
        lr: 5e-3,
        batch_size: 8,
        early_stop_first: 10,
        early_stop_rest: 8,
        max_epochs_first: 40,
        max_epochs_rest: 25,
        ..GraderConfig::default()
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.k < 2 {
            return Err(format!("k must be at least 2, got {}", self.k));
        }
        if self.n_folds < 4 {
            return Err(format!("n_folds must be at least 4, got {}", self.n_folds));
        }
        if self.tasks.is_empty() {
            return Err("tasks must not be empty".into());
        }
        Ok(())
    }

    pub fn grader_config(&self) -> GraderConfig {
        GraderConfig {
            patch_dims: self.patch_dims,
            ..self.grader.clone()
        }
    }

    pub fn cv_config(&self) -> CvConfig {
        CvConfig {
            n_folds: self.n_folds,
            seed: self.seed,
            k: self.k,
            grader: self.grader_config(),
            mlp: self.mlp.clone(),
            svm: self.svm.clone(),
            tasks: self.tasks.clone(),
        }
    }

    pub fn ood_spec(&self) -> PhantomSpec {
        self.phantom.shifted(self.ood_noise_sigma, self.ood_intensity_shift)
    }

    fn models_dir(&self) -> PathBuf {
        self.output_dir.join("models")
    }

    fn grader_path(&self) -> PathBuf {
        self.output_dir.join("grader.dgw")
    }

    fn maps_dir(&self) -> PathBuf {
        self.output_dir.join("maps")
    }

    fn features_path(&self) -> PathBuf {
        self.output_dir.join("features.csv")
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "dgmd",
    about = "Disease-coordinate grading for multi-class dementia diagnosis",
    after_help = "Precedence: built-in defaults < --config JSON < command-line flags.\n\
Exit codes: 0 success, 1 usage or configuration error, 2 data or protocol error.\n\
DG_THREADS caps the number of worker threads.\n\
Map colours: CN blue (0,0,255), AD red (255,0,0), FTD green (0,255,0); \
saturation follows the coordinate radius, so the origin is gray (128,128,128)."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON run configuration
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Phantom dataset directory (holds manifest.csv)
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Out-of-domain phantom directory
    #[arg(long)]
    pub ood_data_dir: Option<PathBuf>,
    /// Directory for models, maps and reports
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Patches per axis
    #[arg(long)]
    pub k: Option<usize>,
    /// One of dem-vs-cn, ad-vs-cn, ftd-vs-cn, ad-vs-ftd, three-class
    #[arg(long)]
    pub task: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate phantom subjects and manifest.csv
    SynthGen {
        #[command(flatten)]
        common: Common,
        /// `in` writes to data_dir, `out` writes shifted phantoms to ood_data_dir
        #[arg(long, default_value = "in")]
        domain: String,
        #[arg(long)]
        n_per_class: Option<usize>,
    },
    /// Train one grader ensemble on every subject of data_dir (output_dir/grader.dgw)
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Grade subjects with output_dir/grader.dgw (output_dir/maps/<id>_dc.dgv)
    Grade {
        #[command(flatten)]
        common: Common,
        /// Grade only this subject
        #[arg(long)]
        subject: Option<String>,
    },
    /// Aggregate graded maps per structure (output_dir/features.csv)
    Features {
        #[command(flatten)]
        common: Common,
    },
    /// Train and test the classifier pair on features.csv, or apply a bundle
    Classify {
        #[command(flatten)]
        common: Common,
        /// Apply this classifier bundle instead of training one
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Full ten-iteration protocol (cv_report.json, cv_summary.csv, models/)
    CrossValidate {
        #[command(flatten)]
        common: Common,
    },
    /// Average the ten cross-validation models on ood_data_dir (ood_report.json)
    EvalOod {
        #[command(flatten)]
        common: Common,
    },
    /// Render axial, coronal and sagittal mid-slices of a DC map as PNG
    ExportMap {
        #[command(flatten)]
        common: Common,
        /// DGV1 DC map
        #[arg(long)]
        map: PathBuf,
        /// Output directory, default output_dir
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Parameter(m) => CliError::Usage(m),
            other => CliError::Run(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Run(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(m: impl Into<String>) -> CliError {
    CliError::Usage(m.into())
}

/// Defaults, then the config file, then flags.
pub fn load_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(v) = &common.data_dir {
        cfg.data_dir = v.clone();
    }
    if let Some(v) = &common.ood_data_dir {
        cfg.ood_data_dir = v.clone();
    }
    if let Some(v) = &common.output_dir {
        cfg.output_dir = v.clone();
    }
    if let Some(v) = common.seed {
        cfg.seed = v;
    }
    if let Some(v) = common.k {
        cfg.k = v;
    }
    if let Some(v) = &common.task {
        cfg.task = v.parse().map_err(|e: Error| usage(e.to_string()))?;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Run(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Run(Error::Format(e.to_string())))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Appends one line to `output_dir/run.log`; the only place wall-clock data goes.
fn log_run(cfg: &RunConfig, command: &str, started: Instant) {
    use std::io::Write;
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let path = cfg.output_dir.join("run.log");
    if std::fs::create_dir_all(&cfg.output_dir).is_ok() {
        if let Ok(mut f) = std::fs::OpenOptions::new().create(true).append(true).open(path) {
            let _ = writeln!(f, "{now} {command} {:.1}s", started.elapsed().as_secs_f64());
        }
    }
}

fn load_subjects(dir: &Path) -> CliResult<Vec<Subject>> {
    let manifest = dir.join(MANIFEST_NAME);
    if !manifest.is_file() {
        return Err(usage(format!("no dataset at {} (run synth-gen first)", manifest.display())));
    }
    Ok(load_dataset(&manifest)?)
}

fn print_report(r: &EvalReport) {
    let sens: Vec<String> = r.classes.iter().zip(&r.sensitivities).map(|(c, s)| format!("{c} {s:.3}")).collect();
    println!(
        "{:<12} {:<3} n={:<4} ACC {:.3}  BACC {:.3}  AUC {:.3}  Sen [{}]",
        r.task.name(),
        r.domain.tag(),
        r.n,
        r.acc,
        r.bacc,
        r.auc,
        sens.join(", ")
    );
}

fn synth_gen(cfg: &RunConfig, domain: &str, n_per_class: Option<usize>) -> CliResult<()> {
    let n = n_per_class.unwrap_or(cfg.n_per_class);
    let (spec, dir, seed) = match domain {
        "in" => (cfg.phantom.clone(), &cfg.data_dir, cfg.seed),
        // a distinct seed keeps out-of-domain subjects from repeating in-domain ones
        "out" => (cfg.ood_spec(), &cfg.ood_data_dir, cfg.seed ^ 0x00D0_00D0),
        other => return Err(usage(format!("--domain must be 'in' or 'out', got '{other}'"))),
    };
    let manifest = generate_dataset(n, &spec, seed, dir)?;
    println!("wrote {} subjects to {}", 3 * n, manifest.display());
    Ok(())
}

fn train(cfg: &RunConfig) -> CliResult<()> {
    let subjects = load_subjects(&cfg.data_dir)?;
    let samples: Vec<GradingSample> = subjects
        .iter()
        .map(|s| GradingSample::new(&s.volume, &s.labels, s.class))
        .collect::<Result<_, _>>()?;
    let gcfg = cfg.grader_config();
    let grid = GridSpec::new(samples[0].intensity.dims(), gcfg.patch_dims, cfg.k)?;
    let ensemble = train_ensemble(&samples, &grid, &gcfg, cfg.seed)?;
    create_dir(&cfg.output_dir)?;
    ensemble.save(cfg.grader_path())?;
    println!("trained {} graders -> {}", ensemble.members.len(), cfg.grader_path().display());
    Ok(())
}

fn load_grader(cfg: &RunConfig) -> CliResult<GraderEnsemble> {
    let path = cfg.grader_path();
    if !path.is_file() {
        return Err(usage(format!("no grader at {} (run train first)", path.display())));
    }
    Ok(GraderEnsemble::load(path)?)
}

fn map_path(cfg: &RunConfig, id: &str) -> PathBuf {
    cfg.maps_dir().join(format!("{id}_dc.dgv"))
}

fn grade(cfg: &RunConfig, only: Option<&str>) -> CliResult<()> {
    let grader = load_grader(cfg)?;
    let mut subjects = load_subjects(&cfg.data_dir)?;
    if let Some(id) = only {
        subjects.retain(|s| s.id == id);
        if subjects.is_empty() {
            return Err(CliError::Run(Error::Data(format!("no subject '{id}' in the manifest"))));
        }
    }
    create_dir(&cfg.maps_dir())?;
    for s in &subjects {
        write_dcmap(&grader.grade_raw(&s.volume)?, map_path(cfg, &s.id))?;
    }
    println!("graded {} subjects -> {}", subjects.len(), cfg.maps_dir().display());
    Ok(())
}

fn features(cfg: &RunConfig) -> CliResult<()> {
    let subjects = load_subjects(&cfg.data_dir)?;
    let rows = subjects
        .iter()
        .map(|s| {
            let path = map_path(cfg, &s.id);
            if !path.is_file() {
                return Err(usage(format!("missing map {} (run grade first)", path.display())));
            }
            let map = read_volume(&path)?.into_dc()?;
            Ok(FeatureRow {
                subject_id: s.id.clone(),
                class: s.class,
                features: StructureFeatures::compute(&map, &s.labels)?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    write_features_csv(&cfg.features_path(), &rows)?;
    println!("wrote {} rows -> {}", rows.len(), cfg.features_path().display());
    Ok(())
}

#[derive(Serialize)]
struct ClassifyReport {
    task: Task,
    lambda: f64,
    train: usize,
    classifier_val: usize,
    ensemble_cal: usize,
    test: EvalReport,
}

#[derive(Serialize)]
struct PredictionRow<'a> {
    subject_id: &'a str,
    class: DiagnosticClass,
    predicted: &'a str,
}

/// Trains on the first iteration of the fold plan over the feature table:
/// d1..d7 train, d8 selects hyperparameters, d9 calibrates, d10 tests.
fn classify(cfg: &RunConfig, bundle: Option<&Path>) -> CliResult<()> {
    let path = cfg.features_path();
    if !path.is_file() {
        return Err(usage(format!("missing {} (run features first)", path.display())));
    }
    let task = cfg.task;
    let rows: Vec<FeatureRow> = read_features_csv(&path)?
        .into_iter()
        .filter(|r| task.label(r.class).is_some())
        .collect();
    let dc: Vec<Vec<f64>> = rows.iter().map(|r| r.features.dc_flat()).collect();
    let vol: Vec<Vec<f64>> = rows.iter().map(|r| r.features.volumes.clone()).collect();
    let labels: Vec<usize> = rows.iter().map(|r| task.label(r.class).expect("filtered")).collect();

    if let Some(bundle) = bundle {
        let model = read_bundle(bundle)?;
        let mut w = csv_writer(&cfg.output_dir.join(format!("predictions_{task}.csv")))?;
        for (i, r) in rows.iter().enumerate() {
            let p = model.predict_proba(&dc[i], &vol[i])?;
            let predicted = &model.classes[dgmd_core::eval::metrics::argmax(&p)];
            w.serialize(PredictionRow {
                subject_id: &r.subject_id,
                class: r.class,
                predicted,
            })
            .map_err(|e| CliError::Run(Error::Format(e.to_string())))?;
        }
        w.flush().map_err(|e| io_err(&cfg.output_dir, e))?;
        println!("wrote predictions for {} subjects", rows.len());
        return Ok(());
    }

    let plan = stratified_folds(&labels, cfg.n_folds, cfg.seed)?;
    let roles = plan.roles(0);
    roles.check_disjoint()?;
    let pick = |idx: &[usize], m: &[Vec<f64>]| -> Vec<Vec<f64>> { idx.iter().map(|&i| m[i].clone()).collect() };
    let lab = |idx: &[usize]| -> Vec<usize> { idx.iter().map(|&i| labels[i]).collect() };
    let n = task.n_classes();
    let (tr, va, ca, te) = (&roles.train, &roles.classifier_val, &roles.ensemble_cal, &roles.test);
    let (mlp, _) = mlp_train(&pick(tr, &dc), &lab(tr), &pick(va, &dc), &lab(va), n, &cfg.mlp, cfg.seed)?;
    let svm = svm_train(&pick(tr, &vol), &lab(tr), &pick(va, &vol), &lab(va), n, &cfg.svm)?;
    let pm: Vec<Vec<f64>> = ca.iter().map(|&i| mlp.predict_proba(&dc[i])).collect::<Result<_, _>>()?;
    let ps: Vec<Vec<f64>> = ca.iter().map(|&i| svm.predict_proba(&vol[i])).collect::<Result<_, _>>()?;
    let lambda = ensemble_calibrate(&pm, &ps, &lab(ca))?;
    let model = EnsembleModel {
        classes: task.class_names(),
        lambda,
        mlp,
        svm,
    };
    let test_proba: Vec<Vec<f64>> = te
        .iter()
        .map(|&i| Ok(blend(lambda, &model.mlp.predict_proba(&dc[i])?, &model.svm.predict_proba(&vol[i])?)))
        .collect::<Result<_, Error>>()?;
    let report = EvalReport::from_probabilities(task, Domain::In, &lab(te), &test_proba)?;
    create_dir(&cfg.output_dir)?;
    write_bundle(&model, cfg.output_dir.join(format!("{task}.dgc")))?;
    write_json(
        &cfg.output_dir.join(format!("classify_{task}.json")),
        &ClassifyReport {
            task,
            lambda,
            train: tr.len(),
            classifier_val: va.len(),
            ensemble_cal: ca.len(),
            test: report.clone(),
        },
    )?;
    println!("lambda {lambda:.2}");
    print_report(&report);
    Ok(())
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    csv::Writer::from_path(path).map_err(|e| CliError::Run(Error::Format(format!("{}: {e}", path.display()))))
}

fn cross_validate(cfg: &RunConfig) -> CliResult<()> {
    let subjects = load_subjects(&cfg.data_dir)?;
    let outcome = run_cross_validation(&subjects, &cfg.cv_config())?;
    create_dir(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("cv_report.json"), &outcome.to_report())?;
    write_summary_csv(&cfg.output_dir.join("cv_summary.csv"), &outcome.reports())?;
    outcome.save_models(&cfg.models_dir())?;
    for r in outcome.reports() {
        print_report(&r);
    }
    Ok(())
}

fn eval_ood(cfg: &RunConfig) -> CliResult<()> {
    if !cfg.models_dir().is_dir() {
        return Err(usage(format!("no models at {} (run cross-validate first)", cfg.models_dir().display())));
    }
    let models = load_pipelines(&cfg.models_dir(), &cfg.tasks)?;
    let subjects = load_subjects(&cfg.ood_data_dir)?;
    let reports = evaluate_out_of_domain_tasks(&models, &subjects, &cfg.tasks)?;
    create_dir(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("ood_report.json"), &reports)?;
    write_summary_csv(&cfg.output_dir.join("ood_summary.csv"), &reports)?;
    for r in &reports {
        print_report(r);
    }
    Ok(())
}

/// The three mid-slices of a map as RGB images: axial (x by y at mid z),
/// coronal (x by z at mid y) and sagittal (y by z at mid x). The second
/// axis runs upwards.
pub fn mid_slices(map: &DcMap) -> [(&'static str, image::RgbImage); 3] {
    let [nx, ny, nz] = map.dims();
    let render = |w: usize, h: usize, at: &dyn Fn(usize, usize) -> [usize; 3]| {
        image::RgbImage::from_fn(w as u32, h as u32, |u, v| {
            let [x, y, z] = at(u as usize, h - 1 - v as usize);
            image::Rgb(dc_to_color(map.point_at(x, y, z)))
        })
    };
    [
        ("axial", render(nx, ny, &|a, b| [a, b, nz / 2])),
        ("coronal", render(nx, nz, &|a, b| [a, ny / 2, b])),
        ("sagittal", render(ny, nz, &|a, b| [nx / 2, a, b])),
    ]
}

fn export_map(cfg: &RunConfig, map: &Path, out: Option<&Path>) -> CliResult<()> {
    if !map.is_file() {
        return Err(usage(format!("no map at {}", map.display())));
    }
    let dc = read_volume(map)?.into_dc()?;
    let out = out.map_or_else(|| cfg.output_dir.clone(), Path::to_path_buf);
    create_dir(&out)?;
    let stem = map
        .file_stem()
        .map_or_else(|| "map".to_string(), |s| s.to_string_lossy().into_owned());
    for (plane, img) in mid_slices(&dc) {
        let path = out.join(format!("{stem}_{plane}.png"));
        img.save(&path)
            .map_err(|e| CliError::Run(Error::Format(format!("{}: {e}", path.display()))))?;
        println!("{}", path.display());
    }
    Ok(())
}

fn configure_threads() {
    if let Some(n) = std::env::var("DG_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

pub fn execute(cli: Cli) -> CliResult<()> {
    let started = Instant::now();
    let (name, common) = match &cli.command {
        Command::SynthGen { common, .. } => ("synth-gen", common),
        Command::Train { common } => ("train", common),
        Command::Grade { common, .. } => ("grade", common),
        Command::Features { common } => ("features", common),
        Command::Classify { common, .. } => ("classify", common),
        Command::CrossValidate { common } => ("cross-validate", common),
        Command::EvalOod { common } => ("eval-ood", common),
        Command::ExportMap { common, .. } => ("export-map", common),
    };
    let cfg = load_config(common)?;
    match &cli.command {
        Command::SynthGen {
            domain, n_per_class, ..
        } => synth_gen(&cfg, domain, *n_per_class)?,
        Command::Train { .. } => train(&cfg)?,
        Command::Grade { subject, .. } => grade(&cfg, subject.as_deref())?,
        Command::Features { .. } => features(&cfg)?,
        Command::Classify { bundle, .. } => classify(&cfg, bundle.as_deref())?,
        Command::CrossValidate { .. } => cross_validate(&cfg)?,
        Command::EvalOod { .. } => eval_ood(&cfg)?,
        Command::ExportMap { map, out, .. } => export_map(&cfg, map, out.as_deref())?,
    }
    log_run(&cfg, name, started);
    Ok(())
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    configure_threads();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
