use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use advfield::attack::{fit_bank, AttackConfig};
use advfield::baseline::{attack_dataset, baselines, BaselineParams};
use advfield::cloud::AttackClasses;
use advfield::dataset::Dataset;
use advfield::eval::augment::{train_det_augmented, train_seg_augmented};
use advfield::eval::fields::{analyze_fields, field_stats_csv};
use advfield::eval::report::{run_eval, EvalOptions, Metric};
use advfield::field::AnchorMode;
use advfield::io::{load_bank, save_bank, KeyValues};
use advfield::sim::{generate_dataset, make_splits, Domain, SceneConfig, SplitSizes};
use advfield::victim::checkpoint::{load_victim, save_victim};
use advfield::victim::det::{train_det, DetTrainConfig};
use advfield::victim::seg::{train_seg, SegTrainConfig};
use advfield::victim::{TrainLog, Victim};

const MANIFEST_FORMAT: &str = "advfield-manifest";

#[derive(Parser, Debug)]
#[command(name = "advfield", version, about = "Adversarial vector fields for LiDAR point clouds")]
struct Cli {
    /// Worker threads (default: logical cores).
    #[arg(long, global = true, env = "ADVFIELD_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic scenes.
    Simulate(SimulateArgs),
    /// Train a segmentation or detection victim.
    TrainVictim(TrainArgs),
    /// Fit a bank of vector fields against a victim.
    Attack(AttackArgs),
    /// Run a sample-specific baseline attack and write the attacked dataset.
    BaselineAttack(BaselineArgs),
    /// Evaluate a victim and write CSV reports.
    Eval(EvalArgs),
    /// Per-field activity and direction statistics of a bank.
    AnalyzeFields(AnalyzeArgs),
    /// Re-execute the command recorded in a manifest.
    Rerun(RerunArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// normal, rare, damaged, or `splits` for train/val/ood splits.
    #[arg(long, default_value = "normal")]
    domain: String,
    /// Scene count; for `splits`, the train size (val and each ood split get a quarter).
    #[arg(long, default_value_t = 200)]
    scenes: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    task: String,
    #[arg(long)]
    data: PathBuf,
    /// Default 12 for seg, 20 for det.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Detected class (det only).
    #[arg(long, default_value = "car")]
    class: String,
    #[arg(long)]
    augment_bank: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AttackArgs {
    #[arg(long, default_value = "untargeted")]
    mode: String,
    #[arg(long, default_value = "car")]
    class: String,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    victim: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Held-out scenes whose metric is traced per iteration.
    #[arg(long)]
    probe: Option<PathBuf>,
    #[arg(long = "G")]
    groups: Option<usize>,
    #[arg(long = "N", default_value_t = 6)]
    variants: usize,
    #[arg(long, default_value_t = 0.3)]
    eps: f64,
    #[arg(long, default_value_t = 0.3)]
    psi: f64,
    #[arg(long, default_value_t = 50)]
    iters: usize,
    /// Default 0.05 for detection, 0.01 otherwise.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// gt or axis-aligned.
    #[arg(long, default_value = "gt")]
    boxes: String,
    #[arg(long, default_value_t = 0.0)]
    drop_boxes: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    /// l2, chamfer, remove or generate.
    #[arg(long)]
    kind: String,
    #[arg(long, default_value = "untargeted")]
    mode: String,
    #[arg(long, default_value = "car")]
    class: String,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    victim: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    eps: f64,
    #[arg(long, default_value_t = 0.3)]
    psi: f64,
    #[arg(long, default_value_t = 50)]
    iters: usize,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    /// Share of points removed or generated.
    #[arg(long, default_value_t = 0.1)]
    fraction: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    victim: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "miou")]
    metrics: String,
    /// Bank for attacked rows and ASR.
    #[arg(long)]
    bank: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Seed of the random intensity corruptions.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    bank: PathBuf,
    /// Seed the bank was initialized with.
    #[arg(long, default_value_t = 0)]
    init_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RerunArgs {
    manifest: PathBuf,
    /// Write outputs here instead of the recorded location.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn attack_classes(data: &Dataset, class: &str, target: Option<&str>) -> Result<AttackClasses> {
    let adv = data.classes.id(class)?;
    let tgt = target.map(|t| data.classes.id(t)).transpose()?;
    Ok(AttackClasses::new(adv, tgt)?)
}

fn objective_for(mode: &str) -> Result<&'static str> {
    match mode {
        "untargeted" => Ok("untargeted"),
        "targeted" => Ok("targeted"),
        "detection" => Ok("detection"),
        other => bail!(advfield::Error::InvalidArgument(format!("unknown mode `{other}`"))),
    }
}

fn train_log_csv(log: &TrainLog) -> String {
    let mut s = String::from("epoch,loss,accuracy\n");
    for (i, (l, a)) in log.epoch_loss.iter().zip(&log.epoch_accuracy).enumerate() {
        s.push_str(&format!("{i},{l},{a}\n"));
    }
    s
}

/// Sidecar path next to a file output.
fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn simulate(a: &SimulateArgs, seeds: &mut Vec<(String, u64)>) -> Result<()> {
    let cfg = SceneConfig::default();
    seeds.push(("scene_base".into(), a.seed));
    if a.domain == "splits" {
        let q = (a.scenes / 4).max(1);
        let sizes = SplitSizes { train: a.scenes, val: q, ood_rare: q, ood_damaged: q };
        let splits = make_splits(a.seed, sizes, &cfg)?;
        for (name, d) in splits.named() {
            d.write(&a.out.join(name))?;
        }
    } else {
        let domain = Domain::parse(&a.domain)?;
        generate_dataset(a.seed..a.seed + a.scenes as u64, domain, &cfg)?.write(&a.out)?;
    }
    Ok(())
}

fn train_victim(a: &TrainArgs, seeds: &mut Vec<(String, u64)>) -> Result<()> {
    let data = Dataset::read(&a.data)?;
    let bank = a.augment_bank.as_deref().map(load_bank).transpose()?;
    seeds.push(("train".into(), a.seed));
    let (victim, log) = match a.task.as_str() {
        "seg" => {
            let cfg = SegTrainConfig { epochs: a.epochs.unwrap_or(12), lr: a.lr, seed: a.seed, ..Default::default() };
            let (net, log) = match &bank {
                Some(b) => train_seg_augmented(&data, b, &cfg, a.k)?,
                None => train_seg(&data, &cfg, None)?,
            };
            (Victim::Seg(net), log)
        }
        "det" => {
            let cfg = DetTrainConfig { epochs: a.epochs.unwrap_or(20), lr: a.lr, seed: a.seed, ..Default::default() };
            let (head, log) = match &bank {
                Some(b) => train_det_augmented(&data, b, &cfg, a.k)?,
                None => train_det(&data, data.classes.id(&a.class)?, &cfg, None)?,
            };
            (Victim::Det(head), log)
        }
        other => bail!(advfield::Error::InvalidArgument(format!("unknown task `{other}` (seg or det)"))),
    };
    if bank.is_some() {
        log::info!("augmentation skipped {} scenes without an eligible object", log.augment_skipped);
    }
    save_victim(&victim, &data.classes, &a.out)?;
    write_text(&sidecar(&a.out, ".train.csv"), &train_log_csv(&log))
}

fn attack(a: &AttackArgs, seeds: &mut Vec<(String, u64)>) -> Result<()> {
    let data = Dataset::read(&a.data)?;
    let (victim, _) = load_victim(&a.victim)?;
    let objective = objective_for(&a.mode)?;
    let classes = attack_classes(&data, &a.class, a.target.as_deref())?;
    let mut cfg = AttackConfig::new(objective, classes, &a.class, AnchorMode::parse(&a.boxes)?)?;
    if let Some(g) = a.groups {
        cfg.groups = g;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    cfg.variants = a.variants;
    cfg.epsilon = a.eps;
    cfg.psi = a.psi;
    cfg.iterations = a.iters;
    cfg.k = a.k;
    cfg.batch = a.batch;
    cfg.seed = a.seed;
    cfg.drop_fraction = a.drop_boxes;
    cfg.validate()?;
    seeds.push(("bank_init".into(), a.seed));
    let probe = a.probe.as_deref().map(Dataset::read).transpose()?;
    let bank = cfg.new_bank(&a.class)?;
    let (bank, trace) = fit_bank(bank, &data, &victim, &cfg, probe.as_ref())?;
    save_bank(&bank, &a.out)?;
    trace.write_csv(&sidecar(&a.out, ".trace.csv"))?;
    Ok(())
}

fn baseline_attack(a: &BaselineArgs) -> Result<()> {
    let data = Dataset::read(&a.data)?;
    let (victim, _) = load_victim(&a.victim)?;
    let objective = objective_for(&a.mode)?;
    let mut params = BaselineParams::new(objective, attack_classes(&data, &a.class, a.target.as_deref())?);
    params.epsilon = a.eps;
    params.psi = a.psi;
    params.iterations = a.iters;
    params.lambda = a.lambda;
    params.fraction = a.fraction;
    if let Some(lr) = a.lr {
        params.lr = lr;
    }
    params.validate()?;
    let reg = baselines();
    let attacked = attack_dataset(reg.get(&a.kind)?, &victim, &data, &params)?;
    attacked.write(&a.out)?;
    Ok(())
}

fn eval(a: &EvalArgs, seeds: &mut Vec<(String, u64)>) -> Result<()> {
    let data = Dataset::read(&a.data)?;
    let (victim, _) = load_victim(&a.victim)?;
    let bank = a.bank.as_deref().map(load_bank).transpose()?;
    seeds.push(("corruption".into(), a.seed));
    let opts = EvalOptions { metrics: Metric::parse_list(&a.metrics)?, seed: a.seed, bank: bank.as_ref(), k: a.k };
    let summary = run_eval(&victim, &data, &opts, &a.out)?;
    print!("{summary}");
    Ok(())
}

fn analyze(a: &AnalyzeArgs, seeds: &mut Vec<(String, u64)>) -> Result<()> {
    let bank = load_bank(&a.bank)?;
    seeds.push(("bank_init".into(), a.init_seed));
    let stats = analyze_fields(&bank, a.init_seed)?;
    write_text(&a.out, &field_stats_csv(&stats))
}

/// Output path of a parsed command, and whether it is a directory.
fn output_of(cmd: &Command) -> Option<(&Path, bool)> {
    match cmd {
        Command::Simulate(a) => Some((&a.out, true)),
        Command::TrainVictim(a) => Some((&a.out, false)),
        Command::Attack(a) => Some((&a.out, false)),
        Command::BaselineAttack(a) => Some((&a.out, true)),
        Command::Eval(a) => Some((&a.out, true)),
        Command::AnalyzeFields(a) => Some((&a.out, false)),
        Command::Rerun(_) => None,
    }
}

fn manifest_path(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join("manifest.txt")
    } else {
        sidecar(out, ".manifest")
    }
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// Every argument of the subcommand with its effective value, defaults included.
fn resolved_config(sub: &ArgMatches) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for id in sub.ids() {
        let name = id.as_str();
        if let Ok(Some(vals)) = sub.try_get_raw(name) {
            let vals: Vec<String> = vals.map(|v| v.to_string_lossy().into_owned()).collect();
            out.push((name.to_string(), vals.join(" ")));
        }
    }
    out
}

#[derive(Debug)]
struct Invocation {
    args: Vec<String>,
    cli: Cli,
    config: Vec<(String, String)>,
}

fn parse(args: Vec<String>) -> std::result::Result<Invocation, clap::Error> {
    let argv = std::iter::once(OsString::from("advfield")).chain(args.iter().map(OsString::from));
    let matches = Cli::command().try_get_matches_from(argv)?;
    let cli = Cli::from_arg_matches(&matches)?;
    let config = matches.subcommand().map(|(_, sub)| resolved_config(sub)).unwrap_or_default();
    Ok(Invocation { args, cli, config })
}

fn execute(inv: &Invocation) -> Result<()> {
    let start = Instant::now();
    let mut seeds = Vec::new();
    match &inv.cli.command {
        Command::Simulate(a) => simulate(a, &mut seeds)?,
        Command::TrainVictim(a) => train_victim(a, &mut seeds)?,
        Command::Attack(a) => attack(a, &mut seeds)?,
        Command::BaselineAttack(a) => baseline_attack(a)?,
        Command::Eval(a) => eval(a, &mut seeds)?,
        Command::AnalyzeFields(a) => analyze(a, &mut seeds)?,
        Command::Rerun(r) => return rerun(r),
    }
    let (out, is_dir) = output_of(&inv.cli.command).expect("every non-rerun command has an output");
    let mut m = KeyValues::new();
    m.set("format", MANIFEST_FORMAT);
    m.set("version", env!("CARGO_PKG_VERSION"));
    m.set("git_describe", git_describe());
    m.set("command", inv.args.iter().find(|a| !a.starts_with('-')).map_or("", |s| s.as_str()));
    m.set("threads", rayon::current_num_threads());
    m.set("wall_time_s", format!("{:.3}", start.elapsed().as_secs_f64()));
    for (k, v) in &seeds {
        m.set(&format!("seed.{k}"), v);
    }
    for (k, v) in &inv.config {
        m.set(&format!("config.{k}"), v);
    }
    m.set("argc", inv.args.len());
    for (i, a) in inv.args.iter().enumerate() {
        m.set(&format!("arg.{i}"), a);
    }
    let path = manifest_path(out, is_dir);
    m.write(&path)?;
    log::info!("manifest written to {}", path.display());
    Ok(())
}

/// Recorded argument list, with `--threads` dropped and `--out` optionally replaced.
fn recorded_args(m: &KeyValues, out: Option<&Path>) -> Result<Vec<String>> {
    if m.get("format") != Some(MANIFEST_FORMAT) {
        bail!(advfield::Error::Format("not an advfield manifest".into()));
    }
    let n: usize = m.parse_key("argc")?;
    let raw: Vec<String> = (0..n).map(|i| m.require(&format!("arg.{i}")).map(str::to_string)).collect::<advfield::Result<_>>()?;
    let mut args = Vec::with_capacity(raw.len());
    let mut it = raw.into_iter();
    while let Some(a) = it.next() {
        if a == "--threads" {
            it.next();
        } else if a.starts_with("--threads=") {
        } else if out.is_some() && a == "--out" {
            it.next();
        } else if out.is_some() && a.starts_with("--out=") {
        } else {
            args.push(a);
        }
    }
    if let Some(o) = out {
        args.push("--out".into());
        args.push(o.to_string_lossy().into_owned());
    }
    Ok(args)
}

fn rerun(r: &RerunArgs) -> Result<()> {
    let m = KeyValues::read(&r.manifest)?;
    let args = recorded_args(&m, r.out.as_deref())?;
    let inv = parse(args).map_err(|e| anyhow!(advfield::Error::Format(format!("manifest arguments: {e}"))))?;
    if matches!(inv.cli.command, Command::Rerun(_)) {
        bail!(advfield::Error::Format("a manifest cannot record a rerun".into()));
    }
    execute(&inv)
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<advfield::Error>() {
        Some(err) if err.is_numeric() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let inv = match parse(std::env::args().skip(1).collect()) {
        Ok(inv) => inv,
        Err(e) => e.exit(),
    };
    if let Some(n) = inv.cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(&inv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rerun_args_drop_threads_and_swap_out() {
        let mut m = KeyValues::new();
        m.set("format", MANIFEST_FORMAT);
        let args = ["--threads", "4", "eval", "--victim", "v", "--out", "a", "--data", "d"];
        m.set("argc", args.len());
        for (i, a) in args.iter().enumerate() {
            m.set(&format!("arg.{i}"), a);
        }
        let got = recorded_args(&m, Some(Path::new("b"))).unwrap();
        assert_eq!(got, ["eval", "--victim", "v", "--data", "d", "--out", "b"]);
    }

    #[test]
    fn config_includes_defaults() {
        let inv = parse(["attack", "--victim", "v", "--data", "d", "--out", "o", "--G", "360"].map(String::from).to_vec()).unwrap();
        let get = |k: &str| inv.config.iter().find(|(n, _)| n == k).map(|(_, v)| v.as_str());
        assert_eq!(get("groups"), Some("360"));
        assert_eq!(get("eps"), Some("0.3"));
        assert_eq!(get("variants"), Some("6"));
    }

    #[test]
    fn unknown_flag_is_a_usage_error() {
        let e = parse(["eval", "--bogus"].map(String::from).to_vec()).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn numeric_errors_map_to_three() {
        assert_eq!(exit_code(&anyhow!(advfield::Error::Numeric("nan".into()))), 3);
        assert_eq!(exit_code(&anyhow!(advfield::Error::InvalidArgument("x".into()))), 2);
    }
}
