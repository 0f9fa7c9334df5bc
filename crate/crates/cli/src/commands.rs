use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use mrbt::gridworld::{ExpertOptions, SpaceConfig, SpaceName, TaskSpace};
use mrbt::pipeline::{run_pipeline, ChatGenerator, Generator, MockGenerator, MrbtSpecFile, DEFAULT_MAX_ITERS};
use mrbt::schema::EnvSchema;
use mrbt::template::{structure_metrics, SubtaskSpec, HRM_REFERENCE_K3};
use mrbt::trainer::{self, AblationMode, Algorithm, PolicyFile, RunManifest, TrainConfig, TrainReport, TrainSpec};
use mrbt::verifier::{
    collect_demos, test_with_demonstrations, verdict_table, DemoConfig, DemoPolicy, VerdictResult, Verifier,
    VerifyConfig, VerifyVerdict,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{parse_mode, Resolved};
use crate::outdir::{self, Prepared};
use crate::CliError;

const OK: u8 = 0;
const FAILED: u8 = 1;
const INCONCLUSIVE: u8 = 2;

#[derive(Debug, Default, clap::Args)]
pub struct VerifyOverrides {
    /// Verifier search timeout in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    /// Trajectory length bound.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Distinct witnesses required by the non-triviality checks.
    #[arg(long)]
    pub n_distinct: Option<usize>,
}

impl VerifyOverrides {
    fn resolve(&self, cfg: &Resolved) -> Result<VerifyConfig, CliError> {
        let mut v = cfg.file.verify;
        if let Some(t) = self.timeout {
            v.timeout_secs = t;
        }
        if let Some(h) = self.horizon {
            v.horizon = h;
        }
        if let Some(n) = self.n_distinct {
            v.n_distinct = n;
        }
        v.validate()?;
        Ok(v)
    }
}

#[derive(Debug, clap::Args)]
pub struct GenerateArgs {
    /// `mock` (replays a spec file) or `chat` (HTTP chat endpoint).
    #[arg(long)]
    pub generator: Option<String>,
    /// Spec file the mock generator replays; defaults to --spec, then the
    /// reference spec of the space.
    #[arg(long)]
    pub mock_spec: Option<PathBuf>,
    /// Maximum generate/verify rounds.
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[command(flatten)]
    pub verify: VerifyOverrides,
}

#[derive(Debug, clap::Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub verify: VerifyOverrides,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// Reward mode: task, procedure, rbt, mrbt or all. Repeatable.
    #[arg(long = "mode", value_delimiter = ',')]
    pub modes: Vec<String>,
    /// Training seed. Repeatable.
    #[arg(long = "seed", value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Environment steps per seed.
    #[arg(long)]
    pub steps: Option<u64>,
    /// tabular_q or policy_gradient_small.
    #[arg(long)]
    pub algorithm: Option<String>,
    /// Enable key slips.
    #[arg(long)]
    pub stochastic: bool,
    /// Key slip probability per carry step.
    #[arg(long)]
    pub flip_prob: Option<f64>,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    /// Policy file written by `train`.
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    /// Reward mode; defaults to the mode the policy was trained under.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub stochastic: bool,
    #[arg(long)]
    pub flip_prob: Option<f64>,
}

#[derive(Debug, clap::Args)]
pub struct MetricsArgs {
    /// Number of subtasks; defaults to the size of the spec.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, clap::Args)]
pub struct DemoTestArgs {
    /// Use an expert that drops the key once its door is open.
    #[arg(long)]
    pub drop_key: bool,
    /// Demonstrations of each kind.
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub verify: VerifyOverrides,
}

struct Loaded {
    name: SpaceName,
    space_cfg: SpaceConfig,
    space: Arc<TaskSpace>,
    spec: MrbtSpecFile,
    subtasks: Vec<SubtaskSpec>,
}

impl Loaded {
    fn schema(&self) -> &Arc<EnvSchema> {
        self.space.schema()
    }
}

fn space_name(cfg: &Resolved, spec: Option<&MrbtSpecFile>) -> Result<SpaceName, CliError> {
    if let Some(n) = cfg.space {
        return Ok(n);
    }
    spec.and_then(MrbtSpecFile::space_name)
        .ok_or_else(|| CliError::Invalid("no task space given; pass --space or --spec".into()))
}

fn load(cfg: &Resolved, spec_path: Option<&Path>) -> Result<Loaded, CliError> {
    let file = spec_path.map(MrbtSpecFile::read).transpose()?;
    let name = space_name(cfg, file.as_ref())?;
    let spec = file.unwrap_or_else(|| MrbtSpecFile::reference(name));
    let space_cfg = cfg.space_config(name);
    let space = Arc::new(TaskSpace::new(&space_cfg)?);
    let subtasks = spec.to_subtasks(&space)?;
    Ok(Loaded {
        name,
        space_cfg,
        space,
        spec,
        subtasks,
    })
}

fn spec_text(spec: &MrbtSpecFile) -> Result<String, CliError> {
    Ok(spec.to_toml_string()?)
}

fn verdict_code(verdicts: &[VerifyVerdict]) -> u8 {
    if verdicts.iter().any(|v| v.result.failed()) {
        FAILED
    } else if verdicts.iter().any(|v| matches!(v.result, VerdictResult::Inconclusive(_))) {
        INCONCLUSIVE
    } else {
        OK
    }
}

fn subtask_label(v: &VerifyVerdict) -> String {
    v.subtask_index.map_or("all subtasks".into(), |i| format!("subtask {}", i + 1))
}

fn failure_lines(verdicts: &[VerifyVerdict]) -> String {
    let mut out = String::new();
    for v in verdicts {
        let tag = if v.result.failed() {
            "FAIL"
        } else if matches!(v.result, VerdictResult::Inconclusive(_)) {
            "INCONCLUSIVE"
        } else {
            continue;
        };
        let _ = writeln!(out, "{tag} {}, {}: {}", v.spec.title(), subtask_label(v), v.result.label());
    }
    out
}

fn counts(verdicts: &[VerifyVerdict]) -> (usize, usize, usize) {
    let passed = verdicts.iter().filter(|v| v.result.passed()).count();
    let failed = verdicts.iter().filter(|v| v.result.failed()).count();
    (passed, failed, verdicts.len() - passed - failed)
}

#[derive(Serialize, Deserialize)]
struct VerdictRow {
    spec: String,
    subtask: Option<usize>,
    result: VerdictResult,
    wall_time_secs: f64,
    counterexample: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct VerdictFile {
    exit_code: u8,
    summary: String,
    rows: Vec<VerdictRow>,
}

/// Writes the table, counterexamples and `verdicts.json` into `dir`.
fn write_verdicts(dir: &Path, verdicts: &[VerifyVerdict], k: usize, schema: &EnvSchema, summary: &str) -> Result<String, CliError> {
    let report = format!("{}{}", verdict_table(verdicts, k), failure_lines(verdicts));
    outdir::write(&dir.join("verdicts.txt"), &report)?;
    let mut rows = Vec::new();
    for v in verdicts {
        let mut counterexample = None;
        if let (true, Some(trace)) = (v.result.failed(), &v.trace) {
            let slug = v.spec.title().to_lowercase().replace(' ', "-");
            let name = match v.subtask_index {
                Some(i) => format!("counterexample-{slug}-{}.txt", i + 1),
                None => format!("counterexample-{slug}.txt"),
            };
            let body = format!("{}, {}\n{}", v.spec.title(), subtask_label(v), trace.render(schema));
            outdir::write(&dir.join(&name), &body)?;
            counterexample = Some(name);
        }
        rows.push(VerdictRow {
            spec: v.spec.title().to_string(),
            subtask: v.subtask_index.map(|i| i + 1),
            result: v.result,
            wall_time_secs: v.wall_time_secs,
            counterexample,
        });
    }
    let file = VerdictFile {
        exit_code: verdict_code(verdicts),
        summary: summary.to_string(),
        rows,
    };
    outdir::write(&dir.join("verdicts.json"), &serde_json::to_string_pretty(&file)?)?;
    Ok(report)
}

/// Prints the saved report of a reused run and returns its exit code.
fn replay_verdicts(dir: &Path, stage: &str) -> Result<u8, CliError> {
    print!("{}", outdir::read(&dir.join("verdicts.txt"))?);
    let file: VerdictFile = serde_json::from_str(&outdir::read(&dir.join("verdicts.json"))?)?;
    println!("{stage}: {} (reused {}; --force to rerun)", file.summary, dir.display());
    Ok(file.exit_code)
}

pub fn verify(cfg: &Resolved, args: &VerifyArgs) -> Result<u8, CliError> {
    let loaded = load(cfg, cfg.spec.as_deref())?;
    let vcfg = args.verify.resolve(cfg)?;
    let inputs = json!({
        "space": loaded.space_cfg,
        "spec": spec_text(&loaded.spec)?,
        "verify": vcfg,
    })
    .to_string();
    let dir = match outdir::prepare(cfg.out.as_deref(), "verify", loaded.name.as_str(), &inputs, cfg.force)? {
        Prepared::Reuse(dir) => return replay_verdicts(&dir, "verify"),
        Prepared::Fresh(dir) => dir,
    };
    let started = Instant::now();
    let verdicts = Verifier::new(&loaded.space, vcfg)
        .with_subtask_labels(&loaded.subtasks)
        .verify_all(&loaded.subtasks);
    let (passed, failed, inconclusive) = counts(&verdicts);
    let summary = format!(
        "{} {}x{}, {} subtasks: {passed} passed, {failed} failed, {inconclusive} inconclusive in {:.1}s",
        loaded.name,
        loaded.space.size(),
        loaded.space.size(),
        loaded.subtasks.len(),
        started.elapsed().as_secs_f64()
    );
    let report = write_verdicts(&dir, &verdicts, loaded.subtasks.len(), loaded.schema(), &summary)?;
    outdir::seal(&dir, "verify", &inputs)?;
    print!("{report}");
    println!("verify: {summary} -> {}", dir.display());
    Ok(verdict_code(&verdicts))
}

pub fn generate(cfg: &Resolved, args: &GenerateArgs) -> Result<u8, CliError> {
    let gen_cfg = &cfg.file.generator;
    let kind = args
        .generator
        .clone()
        .or_else(|| gen_cfg.kind.clone())
        .unwrap_or_else(|| "mock".into());
    let max_iters = args.max_iters.or(gen_cfg.max_iters).unwrap_or(DEFAULT_MAX_ITERS);
    let vcfg = args.verify.resolve(cfg)?;
    let mock_path = args.mock_spec.clone().or_else(|| gen_cfg.mock_spec.clone()).or_else(|| cfg.spec.clone());

    let (name, mut generator, source): (SpaceName, Box<dyn Generator>, String) = match kind.as_str() {
        "mock" => {
            let file = mock_path.as_deref().map(MrbtSpecFile::read).transpose()?;
            let name = space_name(cfg, file.as_ref())?;
            let file = file.unwrap_or_else(|| MrbtSpecFile::reference(name));
            let text = spec_text(&file)?;
            (name, Box::new(MockGenerator::from_spec(&file)), text)
        }
        "chat" => {
            let name = space_name(cfg, None)?;
            let g = ChatGenerator::from_env()?;
            let id = g.id();
            (name, Box::new(g), id)
        }
        other => return Err(CliError::Invalid(format!("unknown generator `{other}` (expected mock or chat)"))),
    };
    let space_cfg = cfg.space_config(name);
    let space = TaskSpace::new(&space_cfg)?;
    let inputs = json!({
        "space": space_cfg,
        "generator": kind,
        "source": source,
        "max_iters": max_iters,
        "verify": vcfg,
    })
    .to_string();
    let dir = match outdir::prepare(cfg.out.as_deref(), "generate", name.as_str(), &inputs, cfg.force)? {
        Prepared::Reuse(dir) => return replay_verdicts(&dir, "generate"),
        Prepared::Fresh(dir) => dir,
    };
    let started = Instant::now();
    let outcome = run_pipeline(&space, generator.as_mut(), &vcfg, max_iters)?;
    let spec_path = dir.join("spec.toml");
    outcome.spec.write(&spec_path)?;
    let mut transcript = String::new();
    for (req, response) in &outcome.transcript {
        let _ = writeln!(transcript, "=== request: {} ===", req.expected);
        for m in &req.messages {
            let _ = writeln!(transcript, "[{:?}]\n{}", m.role, m.content);
        }
        let _ = writeln!(transcript, "=== response ===\n{response}\n");
    }
    outdir::write(&dir.join("transcript.txt"), &transcript)?;
    let (passed, failed, inconclusive) = counts(&outcome.verdicts);
    let summary = format!(
        "{name}, {} subtasks, {} after {} iteration(s): {passed} passed, {failed} failed, {inconclusive} inconclusive in {:.1}s",
        outcome.spec.subtasks.len(),
        if outcome.verified { "verified" } else { "not verified" },
        outcome.iterations,
        started.elapsed().as_secs_f64()
    );
    let report = write_verdicts(
        &dir,
        &outcome.verdicts,
        outcome.spec.subtasks.len(),
        space.schema(),
        &summary,
    )?;
    outdir::seal(&dir, "generate", &inputs)?;
    print!("{report}");
    println!("generate: {summary} -> {}", spec_path.display());
    Ok(verdict_code(&outcome.verdicts))
}

fn resolve_modes(cfg: &Resolved, args: &TrainArgs) -> Result<Vec<AblationMode>, CliError> {
    let raw: Vec<String> = if !args.modes.is_empty() {
        args.modes.clone()
    } else if let Some(m) = &cfg.file.mode {
        m.split(',').map(|s| s.trim().to_string()).collect()
    } else {
        vec!["mrbt".into()]
    };
    let mut modes = Vec::new();
    for m in raw {
        let add: Vec<AblationMode> = if m.eq_ignore_ascii_case("all") {
            AblationMode::ALL.to_vec()
        } else {
            vec![parse_mode(&m)?]
        };
        for a in add {
            if !modes.contains(&a) {
                modes.push(a);
            }
        }
    }
    Ok(modes)
}

fn check_flip_prob(p: Option<f64>) -> Result<(), CliError> {
    match p {
        Some(p) if !(0.0..=1.0).contains(&p) => Err(CliError::Invalid(format!("flip probability {p} is outside [0, 1]"))),
        _ => Ok(()),
    }
}

fn train_summary(report: &TrainReport, secs: f64) -> String {
    let per_seed: Vec<String> = report.runs.iter().map(|r| format!("{:.2}", r.final_success())).collect();
    format!(
        "{} {}: {} seed(s) x {} steps, final success {:.3} [{}], {} mask violations, {:.1}s",
        report.space,
        report.mode,
        report.runs.len(),
        report.config.total_steps,
        report.mean_final_success(),
        per_seed.join(" "),
        report.mask_violations(),
        secs
    )
}

pub fn train(cfg: &Resolved, args: &TrainArgs) -> Result<u8, CliError> {
    let loaded = load(cfg, cfg.spec.as_deref())?;
    let modes = resolve_modes(cfg, args)?;
    check_flip_prob(args.flip_prob)?;
    let mut tcfg: TrainConfig = cfg.file.train.clone();
    if !args.seeds.is_empty() {
        tcfg.seeds = args.seeds.clone();
    } else if let Some(s) = &cfg.file.seeds {
        tcfg.seeds = s.clone();
    }
    if let Some(n) = args.steps {
        tcfg.total_steps = n;
    }
    if let Some(a) = &args.algorithm {
        tcfg.algorithm = a.parse::<Algorithm>().map_err(CliError::Invalid)?;
    }
    tcfg.dynamics = cfg.dynamics(tcfg.dynamics, args.stochastic, args.flip_prob);
    tcfg.validate()?;
    let spec = TrainSpec::from_spec_file(&loaded.spec, &loaded.space)?;
    let tag = format!("{}-{}", loaded.name, modes.iter().map(|m| m.as_str()).collect::<Vec<_>>().join("+"));
    let inputs = json!({
        "space": loaded.space_cfg,
        "spec": spec_text(&loaded.spec)?,
        "modes": modes,
        "train": tcfg,
    })
    .to_string();
    let dir = match outdir::prepare(cfg.out.as_deref(), "train", &tag, &inputs, cfg.force)? {
        Prepared::Reuse(dir) => {
            let manifests: Vec<RunManifest> = serde_json::from_str(&outdir::read(&dir.join("manifest.json"))?)?;
            for m in &manifests {
                let per_seed: Vec<String> = m.final_success.iter().map(|(_, s)| format!("{s:.2}")).collect();
                println!(
                    "train: {} {}: final success [{}], {} mask violations (reused {}; --force to rerun)",
                    m.space.name,
                    m.mode,
                    per_seed.join(" "),
                    m.mask_violations,
                    dir.display()
                );
            }
            return Ok(OK);
        }
        Prepared::Fresh(dir) => dir,
    };

    let spec_arg = cfg.spec.as_deref();
    let mut reports = Vec::new();
    let mut manifests = Vec::new();
    for mode in modes {
        let started = Instant::now();
        let report = trainer::train(&loaded.space, &spec, mode, &tcfg)?;
        let secs = started.elapsed().as_secs_f64();
        let mut manifest = RunManifest::new(&loaded.space_cfg, spec_arg, &report, secs);
        for run in &report.runs {
            let name = format!("policy-{}-seed{}.json", mode.as_str(), run.seed);
            PolicyFile {
                space: loaded.space_cfg.clone(),
                mode,
                seed: run.seed,
                policy: run.policy.clone(),
            }
            .write(&dir.join(&name))?;
            manifest.outputs.push(name);
        }
        manifest.outputs.push("metrics.csv".into());
        println!("train: {}", train_summary(&report, secs));
        manifests.push(manifest);
        reports.push(report);
    }
    let csv_path = dir.join("metrics.csv");
    let csv_file = std::fs::File::create(&csv_path).map_err(|e| CliError::io(&csv_path, e))?;
    let refs: Vec<&TrainReport> = reports.iter().collect();
    trainer::write_metrics_csv(&refs, csv_file)?;
    outdir::write(&dir.join("manifest.json"), &serde_json::to_string_pretty(&manifests)?)?;
    outdir::seal(&dir, "train", &inputs)?;
    println!("train: wrote {} mode(s) to {}", reports.len(), dir.display());
    Ok(OK)
}

pub fn eval(cfg: &Resolved, args: &EvalArgs) -> Result<u8, CliError> {
    let mut file = PolicyFile::read(&args.policy)?;
    check_flip_prob(args.flip_prob)?;
    let space = Arc::new(TaskSpace::new(&file.space)?);
    let spec_file = match cfg.spec.as_deref() {
        Some(p) => MrbtSpecFile::read(p)?,
        None => MrbtSpecFile::reference(space.name()),
    };
    let spec = TrainSpec::from_spec_file(&spec_file, &space)?;
    let mode = match &args.mode {
        Some(m) => parse_mode(m)?,
        None => file.mode,
    };
    let mut dynamics = cfg.dynamics(Default::default(), args.stochastic, args.flip_prob);
    dynamics.rng_seed = args.seed;
    if args.episodes == 0 {
        return Err(CliError::Invalid("--episodes must be positive".into()));
    }
    let rate = trainer::evaluate(&mut file.policy, &space, &spec, mode, args.episodes, dynamics)?;
    println!(
        "eval: {} {} (trained seed {}): success {rate:.3} over {} episodes{}",
        space.name(),
        mode,
        file.seed,
        args.episodes,
        if dynamics.stochastic { ", stochastic" } else { "" }
    );
    Ok(OK)
}

pub fn metrics(cfg: &Resolved, args: &MetricsArgs) -> Result<u8, CliError> {
    let k = match args.k {
        Some(k) => k,
        None => {
            let file = cfg.spec.as_deref().map(MrbtSpecFile::read).transpose()?;
            match (file, cfg.space) {
                (Some(f), _) => f.subtasks.len(),
                (None, Some(name)) => MrbtSpecFile::reference(name).subtasks.len(),
                (None, None) => return Err(CliError::Invalid("pass --k, --spec or --space".into())),
            }
        }
    };
    if k == 0 {
        return Err(CliError::Invalid("k must be positive".into()));
    }
    let m = structure_metrics(k);
    let hrm = if k == 3 {
        format!("{} states, {} edges", HRM_REFERENCE_K3.0, HRM_REFERENCE_K3.1)
    } else {
        "n/a".into()
    };
    println!(
        "MRBT: {} behaviors, {} states, {} edges; HRM(ref): {hrm}",
        m.behaviors, m.rm_states, m.rm_edges
    );
    Ok(OK)
}

pub fn demo_test(cfg: &Resolved, args: &DemoTestArgs) -> Result<u8, CliError> {
    let loaded = load(cfg, cfg.spec.as_deref())?;
    let vcfg = args.verify.resolve(cfg)?;
    let opts = ExpertOptions {
        drop_key_after_door: args.drop_key,
        ..ExpertOptions::default()
    };
    let experts = collect_demos(&loaded.space, DemoPolicy::Expert(opts), args.n, args.seed);
    let randoms = collect_demos(
        &loaded.space,
        DemoPolicy::Random { horizon: vcfg.horizon },
        args.n,
        args.seed.wrapping_add(1),
    );
    let demo_cfg = DemoConfig {
        n: args.n,
        n_distinct: vcfg.n_distinct,
    };
    let report = test_with_demonstrations(&loaded.subtasks, loaded.schema(), &experts, &randoms, &demo_cfg)?;
    print!("{}", verdict_table(&report.verdicts, loaded.subtasks.len()));
    for (v, n) in report.verdicts.iter().zip(&report.violations) {
        if v.result.failed() {
            let detail = if *n > 0 {
                format!("{n}/{} demonstrations violate it", experts.len())
            } else {
                v.result.label()
            };
            println!("FAIL {}, {}: {detail}", v.spec.title(), subtask_label(v));
        }
    }
    for i in 0..loaded.subtasks.len() {
        println!(
            "subtask {} action prior: {}",
            i + 1,
            loaded.schema().mask_names(report.subtask_prior(i)).join(", ")
        );
    }
    let (passed, failed, inconclusive) = counts(&report.verdicts);
    println!(
        "demo-test: {} with {} expert{} and {} random demos: {passed} passed, {failed} failed, {inconclusive} inconclusive",
        loaded.name,
        experts.len(),
        if args.drop_key { " (key-dropping)" } else { "" },
        randoms.len()
    );
    Ok(verdict_code(&report.verdicts))
}
