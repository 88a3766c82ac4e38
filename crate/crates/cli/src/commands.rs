//! Subcommand implementations. Each returns a typed error; `main` maps it to
//! an exit code.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use cmfeedback::data::{build_dataset, load_dataset, save_dataset, Dataset, Split};
use cmfeedback::distill::{
    train_student_cm, train_student_kd, train_student_plain, train_teacher, Pipeline, SchedulerKind, TrainPlan,
    TrainedPair, EVAL_CHUNK,
};
use cmfeedback::metrics::{
    codeword_mse, config_hash, nmse, reconstruct, render_table, ExperimentReport, Method, Nmse, RenderedTable,
    TableLayout,
};
use cmfeedback::nn::{count_complexity, load_checkpoint, save_checkpoint, Network, Role};
use cmfeedback::{Error, Result};
use serde::Serialize;

use crate::cli::{AblateArgs, EvalArgs, GenDataArgs, Grid, TableArgs, TrainArgs};
use crate::config::{ExperimentConfig, NetworkKind};

pub const TRAIN_FILE: &str = "train.csid";
pub const TEST_FILE: &str = "test.csid";
pub const ENCODER_FILE: &str = "encoder.csim";
pub const DECODER_FILE: &str = "decoder.csim";
pub const REPORT_FILE: &str = "report.json";
pub const TIMING_FILE: &str = "timing.json";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn gen_data(args: &GenDataArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let mut channel = cfg.channel_config()?;
    if let Some(s) = args.seed {
        channel.seed = s;
    }
    let n_train = args.train.unwrap_or(cfg.data.n_train);
    let n_test = args.test.unwrap_or(cfg.data.n_test);
    let (train, test) = build_dataset(&channel, n_train, n_test)?;
    create_dir(&args.out)?;
    for ds in [&train, &test] {
        let name = if ds.split == Some(Split::Train) { TRAIN_FILE } else { TEST_FILE };
        let path = args.out.join(name);
        save_dataset(&path, ds)?;
        println!("{name}: {} samples ({})", ds.len(), path.display());
    }
    let energy = |ds: &Dataset| ds.retained_energy.unwrap_or(f64::NAN);
    println!(
        "energy in first {} delay rows: train {:.2}%, test {:.2}%",
        channel.nc,
        100.0 * energy(&train),
        100.0 * energy(&test)
    );
    Ok(())
}

/// Train/test data from `dir`, from the config's `[data]` files, or freshly
/// generated from `[channel]`, in that order of preference.
pub fn load_data(cfg: &ExperimentConfig, config_path: &Path, dir: Option<&Path>) -> Result<(Dataset, Dataset)> {
    let base = config_path.parent().unwrap_or(Path::new("."));
    let files = match dir {
        Some(d) => Some((d.join(TRAIN_FILE), d.join(TEST_FILE))),
        None => match (&cfg.data.train, &cfg.data.test) {
            (Some(a), Some(b)) => Some((base.join(a), base.join(b))),
            (None, None) => None,
            _ => return Err(Error::config("data", "give both train and test files or neither")),
        },
    };
    let (train, test) = match files {
        Some((a, b)) => (load_dataset(a)?, load_dataset(b)?),
        None => build_dataset(&cfg.channel_config()?, cfg.data.n_train, cfg.data.n_test)?,
    };
    for ds in [&train, &test] {
        if (ds.dims.nc, ds.dims.nt) != (cfg.channel.nc, cfg.channel.nt) {
            return Err(Error::config(
                "Nc",
                format!(
                    "dataset is {}x{} but the config asks for Nc = {}, Nt = {}",
                    ds.dims.nc, ds.dims.nt, cfg.channel.nc, cfg.channel.nt
                ),
            ));
        }
    }
    Ok((train, test))
}

/// A trained teacher: the encoder always, the decoder when KD needs it.
pub struct Teacher {
    pub encoder: Network<f32>,
    pub decoder: Option<Network<f32>>,
}

impl Teacher {
    pub fn load(dir: &Path, with_decoder: bool) -> Result<Self> {
        let encoder = load_checkpoint(dir.join(ENCODER_FILE))?;
        let decoder = if with_decoder { Some(load_checkpoint(dir.join(DECODER_FILE))?) } else { None };
        Ok(Teacher { encoder, decoder })
    }
}

#[derive(Serialize)]
struct HashedRun<'a> {
    channel: &'a crate::config::ChannelSection,
    n_train: usize,
    n_test: usize,
    network: NetworkKind,
    codeword_size: usize,
    plan: &'a TrainPlan,
}

/// One fully specified training run.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub run_id: String,
    pub network: NetworkKind,
    pub plan: TrainPlan,
}

pub struct RunOutput {
    pub pair: TrainedPair,
    pub report: ExperimentReport,
}

/// Identifies a run by everything that determines its outcome.
pub fn run_hash(cfg: &ExperimentConfig, spec: &RunSpec, n_train: usize, n_test: usize) -> Result<String> {
    Ok(config_hash(&HashedRun {
        channel: &cfg.channel,
        n_train,
        n_test,
        network: spec.network,
        codeword_size: cfg.codeword_size()?,
        plan: &spec.plan,
    }))
}

/// Trains `spec` and evaluates it on `test`. A teacher, when given, is
/// frozen; plain runs use it only to report the codeword gap.
pub fn execute(
    cfg: &ExperimentConfig,
    spec: &RunSpec,
    train: &Dataset,
    test: &Dataset,
    teacher: Option<&Teacher>,
) -> Result<RunOutput> {
    let m = cfg.codeword_size()?;
    let plan = &spec.plan;
    let started = Instant::now();
    let pair = match (spec.network, plan.pipeline) {
        (NetworkKind::Teacher, Pipeline::Plain) => train_teacher(plan, train, m)?,
        (NetworkKind::Teacher, _) => {
            return Err(Error::config("network", "the teacher is trained with the plain pipeline only"))
        }
        (NetworkKind::Student, Pipeline::Plain) => train_student_plain(plan, train, m)?,
        (NetworkKind::Student, Pipeline::CodewordMimic) => {
            let t = teacher.ok_or_else(|| Error::config("teacher", "the cm pipeline needs --teacher"))?;
            train_student_cm(plan, train, test, &t.encoder, m)?
        }
        (NetworkKind::Student, Pipeline::VanillaKd) => {
            let t = teacher.ok_or_else(|| Error::config("teacher", "the kd pipeline needs --teacher"))?;
            let dec = t.decoder.as_ref().ok_or_else(|| Error::config("teacher", "the kd pipeline needs a teacher decoder"))?;
            train_student_kd(plan, train, &t.encoder, dec, m)?
        }
    };
    let wall = started.elapsed().as_secs_f64();

    let recon = reconstruct(&pair.encoder, &pair.decoder, test, EVAL_CHUNK)?;
    let score = nmse(test.all().data(), &recon, test.sample_len())?;
    let mse_cm_end = match (pair.mse_cm_end, teacher) {
        (Some(v), _) => Some(v),
        (None, Some(t)) if spec.network == NetworkKind::Student => Some(codeword_mse(&t.encoder, &pair.encoder, test)?),
        _ => None,
    };
    let method = match spec.network {
        NetworkKind::Teacher => Method::Teacher,
        NetworkKind::Student => Method::from_pipeline(plan.pipeline),
    };
    let report = ExperimentReport {
        run_id: spec.run_id.clone(),
        method,
        plan: plan.clone(),
        config_hash: run_hash(cfg, spec, train.len(), test.len())?,
        codeword_size: m,
        dims: cfg.dims(),
        nmse: [(cfg.scenario_name(), score)].into_iter().collect(),
        mse_cm_mid: pair.mse_cm_mid,
        mse_cm_end,
        complexity: count_complexity(pair.encoder.spec()),
        history: pair.history.clone(),
        wall_clock_s: Some(wall),
        seed: plan.seed,
    };
    Ok(RunOutput { pair, report })
}

fn write_timing(path: &Path, report: &ExperimentReport) -> Result<()> {
    let timing = serde_json::json!({ "run_id": report.run_id, "wall_clock_s": report.wall_clock_s });
    write_file(path, serde_json::to_string_pretty(&timing).expect("timing json") + "\n")
}

fn describe(report: &ExperimentReport) -> String {
    let mut s = format!("{}:", report.run_id);
    for (scenario, n) in &report.nmse {
        s += &format!(" NMSE[{scenario}] {} dB", fmt_db(n));
    }
    if let Some(v) = report.mse_cm_mid {
        s += &format!(" MSE_cm_mid {v:.3e}");
    }
    if let Some(v) = report.mse_cm_end {
        s += &format!(" MSE_cm_end {v:.3e}");
    }
    s
}

fn fmt_db(n: &Nmse) -> String {
    if n.db == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{:.2}", n.db)
    }
}

pub fn run_name(network: NetworkKind, plan: &TrainPlan) -> String {
    match (network, plan.pipeline) {
        (NetworkKind::Teacher, _) => format!("teacher-s{}", plan.seed),
        (_, Pipeline::Plain) => format!("plain-s{}", plan.seed),
        (_, Pipeline::VanillaKd) => format!("kd-{}-s{}", scheduler_tag(plan.alpha_scheduler), plan.seed),
        (_, Pipeline::CodewordMimic) => format!(
            "cm-tcm{}-{}-s{}",
            plan.mimic_epochs,
            scheduler_tag(plan.alpha_scheduler),
            plan.seed
        ),
    }
}

fn scheduler_tag(kind: SchedulerKind) -> &'static str {
    match kind {
        SchedulerKind::Const => "const",
        SchedulerKind::Linear => "linear",
        SchedulerKind::Cosine => "cosine",
    }
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let pipeline: Pipeline = args.pipeline.into();
    let network = cfg.model.network;
    if pipeline != Pipeline::Plain && args.teacher.is_none() {
        let name = if pipeline == Pipeline::VanillaKd { "kd" } else { "cm" };
        return Err(Error::config("teacher", format!("the {name} pipeline needs --teacher DIR")));
    }
    if network == NetworkKind::Teacher && pipeline != Pipeline::Plain {
        return Err(Error::config("network", "the teacher is trained with the plain pipeline only"));
    }
    let seed = args.seed.unwrap_or(cfg.seeds[0]);
    let plan =
        if network == NetworkKind::Teacher { cfg.teacher_plan(seed)? } else { cfg.train_plan(pipeline, seed)? };
    let teacher = match &args.teacher {
        Some(dir) => Some(Teacher::load(dir, pipeline == Pipeline::VanillaKd)?),
        None => None,
    };
    let (train_set, test_set) = load_data(&cfg, &args.config, args.data.as_deref())?;
    let spec = RunSpec { run_id: run_name(network, &plan), network, plan };
    log::info!("training {} on {} samples", spec.run_id, train_set.len());
    let out = execute(&cfg, &spec, &train_set, &test_set, teacher.as_ref())?;

    create_dir(&args.out)?;
    save_checkpoint(args.out.join(ENCODER_FILE), &out.pair.encoder)?;
    save_checkpoint(args.out.join(DECODER_FILE), &out.pair.decoder)?;
    write_file(&args.out.join(REPORT_FILE), out.report.to_json() + "\n")?;
    write_timing(&args.out.join(TIMING_FILE), &out.report)?;
    println!("{}", describe(&out.report));
    println!("{}", out.report.complexity.summary_line());
    Ok(())
}

/// Runs of a proportion or scheduler grid, seeds outermost.
pub fn grid_runs(cfg: &ExperimentConfig, grid: Grid) -> Result<Vec<RunSpec>> {
    let t = cfg.train.epochs;
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let base = cfg.train_plan(Pipeline::CodewordMimic, seed)?;
        let plans: Vec<TrainPlan> = match grid {
            Grid::Proportions => {
                let mut splits: Vec<usize> = [0, 1, 2, 3, 5, 10].iter().map(|&tenths| t * tenths / 10).collect();
                // Short runs round several proportions to the same split.
                splits.dedup();
                splits.into_iter().map(|mimic_epochs| TrainPlan { mimic_epochs, ..base.clone() }).collect()
            }
            Grid::Schedulers => SchedulerKind::ALL
                .iter()
                .map(|&alpha_scheduler| TrainPlan { alpha_scheduler, ..base.clone() })
                .collect(),
        };
        for plan in plans {
            plan.validate()?;
            runs.push(RunSpec { run_id: run_name(NetworkKind::Student, &plan), network: NetworkKind::Student, plan });
        }
    }
    Ok(runs)
}

/// Trains every run, `jobs` at a time, and returns reports in input order.
pub fn run_grid(
    cfg: &ExperimentConfig,
    runs: &[RunSpec],
    train: &Dataset,
    test: &Dataset,
    teacher: &Teacher,
    jobs: usize,
) -> Result<Vec<ExperimentReport>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<ExperimentReport>>>> = Mutex::new((0..runs.len()).map(|_| None).collect());
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(spec) = runs.get(i) else { break };
        log::info!("grid run {}/{}: {}", i + 1, runs.len(), spec.run_id);
        let r = execute(cfg, spec, train, test, Some(teacher)).map(|o| o.report);
        if let Ok(rep) = &r {
            log::info!("{}", describe(rep));
        }
        let failed = r.is_err();
        results.lock().expect("grid results lock")[i] = Some(r);
        if failed {
            // Stop handing out work; running cells finish on their own.
            next.store(runs.len(), Ordering::Relaxed);
        }
    };
    std::thread::scope(|s| {
        for _ in 1..jobs.max(1) {
            s.spawn(worker);
        }
        worker();
    });
    results.into_inner().expect("grid results lock").into_iter().flatten().collect()
}

pub fn ablate(args: &AblateArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let dir = args.teacher.as_ref().ok_or_else(|| Error::config("teacher", "ablation grids need --teacher DIR"))?;
    let runs = grid_runs(&cfg, args.grid)?;
    let teacher = Teacher::load(dir, false)?;
    let (train_set, test_set) = load_data(&cfg, &args.config, args.data.as_deref())?;
    let reports = run_grid(&cfg, &runs, &train_set, &test_set, &teacher, args.jobs)?;

    let runs_dir = args.out.join("runs");
    create_dir(&runs_dir)?;
    for r in &reports {
        write_file(&runs_dir.join(format!("{}.json", r.run_id)), r.to_json() + "\n")?;
        write_timing(&runs_dir.join(format!("{}.timing.json", r.run_id)), r)?;
    }
    let layout = match args.grid {
        Grid::Proportions => TableLayout::Table2,
        Grid::Schedulers => TableLayout::Table3,
    };
    let table = render_table(&reports, layout);
    write_table(&args.out, layout_stem(layout), &table)?;
    print!("{}", table.text());
    Ok(())
}

fn layout_stem(layout: TableLayout) -> &'static str {
    match layout {
        TableLayout::Table1 => "table1",
        TableLayout::Table2 => "table2",
        TableLayout::Table3 => "table3",
    }
}

/// Writes `<stem>.txt`, `<stem>.csv` and `<stem>.json` into `dir`.
pub fn write_table(dir: &Path, stem: &str, table: &RenderedTable) -> Result<()> {
    create_dir(dir)?;
    write_file(&dir.join(format!("{stem}.txt")), table.text())?;
    write_file(&dir.join(format!("{stem}.csv")), table.csv())?;
    let json = serde_json::to_string_pretty(&table.json()).expect("table json") + "\n";
    write_file(&dir.join(format!("{stem}.json")), json)
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let encoder = load_checkpoint(&args.encoder)?;
    let decoder = load_checkpoint(&args.decoder)?;
    let data = load_dataset(&args.data)?;
    let (es, ds) = (encoder.spec(), decoder.spec());
    if es.role != Role::Encoder || ds.role != Role::Decoder {
        return Err(Error::config("role", "--encoder and --decoder must hold an encoder and a decoder"));
    }
    if es.codeword_size != ds.codeword_size {
        return Err(Error::config(
            "codeword_size",
            format!("encoder M = {} but decoder M = {}", es.codeword_size, ds.codeword_size),
        ));
    }
    for spec in [es, ds] {
        if (spec.dims.nc, spec.dims.nt) != (data.dims.nc, data.dims.nt) {
            return Err(Error::config(
                "dims",
                format!(
                    "model expects Nc x Nt = {}x{}, dataset is {}x{}",
                    spec.dims.nc, spec.dims.nt, data.dims.nc, data.dims.nt
                ),
            ));
        }
    }
    let recon = reconstruct(&encoder, &decoder, &data, EVAL_CHUNK)?;
    let score = nmse(data.all().data(), &recon, data.sample_len())?;
    println!("samples: {}", data.len());
    println!("NMSE: {} dB (linear {:.6e}, excluded {})", fmt_db(&score), score.linear, score.excluded);
    if let Some(path) = &args.teacher_encoder {
        let teacher = load_checkpoint(path)?;
        let ts = teacher.spec();
        if ts.role != Role::Encoder || ts.codeword_size != es.codeword_size || ts.dims != es.dims {
            return Err(Error::config(
                "teacher_encoder",
                format!("teacher encoder M = {} does not match encoder M = {}", ts.codeword_size, es.codeword_size),
            ));
        }
        println!("codeword MSE vs teacher: {:.6e}", codeword_mse(&teacher, &encoder, &data)?);
    }
    println!("{}", count_complexity(es).summary_line());
    Ok(())
}

pub fn table(args: &TableArgs) -> Result<()> {
    let mut files = Vec::new();
    for p in &args.reports {
        if p.is_dir() {
            files.extend(report_files(p)?);
        } else {
            files.push(p.clone());
        }
    }
    let reports = files
        .iter()
        .map(|p| {
            serde_json::from_str::<ExperimentReport>(&read_file(p)?).map_err(|e| Error::Format {
                what: "report",
                offset: 0,
                reason: format!("{}: {e}", p.display()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let table = render_table(&reports, args.layout);
    if let Some(dir) = &args.out {
        write_table(dir, layout_stem(args.layout), &table)?;
    }
    print!("{}", table.text());
    Ok(())
}

/// Report files in `dir`, sorted by name.
pub fn report_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && !p.to_string_lossy().ends_with(".timing.json"))
        .collect();
    files.sort();
    Ok(files)
}
