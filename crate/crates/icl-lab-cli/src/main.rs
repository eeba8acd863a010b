//! Command-line front end: train models, evaluate them against the
//! baselines, emit CSV reports and SVG plots, and run the built-in
//! verification suite.
//!
//! Configuration is flat `key=value` text (same syntax the checkpoints
//! embed); command-line flags override config-file values, and the
//! `ICL_LAB_SEED` environment variable overrides the default seed when
//! neither a flag nor the config sets one. Every run prints its resolved
//! configuration and seed.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use icl_lab::checkpoint::Checkpoint;
use icl_lab::data::{cifar_pool, synthetic_pool, ImagePool};
use icl_lab::error::Error;
use icl_lab::eval::{baselines_only, evaluate, EvalOptions};
use icl_lab::report::{read_csv, render_svg, write_csv};
use icl_lab::tasks::FunctionClass;
use icl_lab::train::{loss_history_csv, train_loop, Experiment, TrainConfig};

const USAGE: &str = "\
usage: icl-lab <command> [flags]

commands:
  train     --experiment {e1,e2,e3,e4} [--config PATH] [--steps N]
            [--data PATH | --synthetic] [--seed N] [--batch-size N]
            [--lr F] [--checkpoint-every N] [--synthetic-size N]
            [--out DIR] [--threads N]
                train a model; writes DIR/checkpoint.ckpt and DIR/loss.csv

  eval      --checkpoint PATH [--class {linear,convlinear,cnn,vit}]
            [--tasks N] [--data PATH | --synthetic] [--synthetic-size N]
            [--seed N] [--gd] [--gd-steps N] [--gd-lr F]
            [--out PATH] [--threads N]
                per-context-length errors of the model and baselines

  baselines --class {linear,convlinear,cnn,vit} [--d N] [--k-mult N]
            [--tasks N] [--data PATH | --synthetic] [--synthetic-size N]
            [--seed N] [--gd] [--gd-steps N] [--gd-lr F]
            [--out PATH] [--threads N]
                baseline columns only, no model required

  plot      --in report.csv --out plot.svg
                render a report as a log-scale SVG line plot

  selftest
                run gradient checks and kernel/solver oracle suites

The ICL_LAB_SEED environment variable overrides the default seed (42) when
no --seed flag or config-file seed is given.";

enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("{msg}\n\n{USAGE}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(args: &[String]) -> Result<(), CliError> {
    let Some(cmd) = args.first() else {
        return Err(usage("missing command"));
    };
    let rest = &args[1..];
    match cmd.as_str() {
        "train" => cmd_train(rest),
        "eval" => cmd_eval(rest),
        "baselines" => cmd_baselines(rest),
        "plot" => cmd_plot(rest),
        "selftest" => cmd_selftest(rest),
        other => Err(usage(format!("unknown command '{other}'"))),
    }
}

/// Parse `--flag value` pairs (plus valueless booleans). Every flag must be
/// in `allowed`; booleans are listed in `bools`.
fn parse_flags(
    args: &[String],
    allowed: &[&str],
    bools: &[&str],
) -> Result<HashMap<String, String>, CliError> {
    let mut map = HashMap::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(name) = arg.strip_prefix("--") else {
            return Err(usage(format!("unexpected argument '{arg}'")));
        };
        if !allowed.contains(&name) {
            return Err(usage(format!("unknown flag '--{name}'")));
        }
        if bools.contains(&name) {
            map.insert(name.to_string(), "true".to_string());
        } else {
            let Some(value) = it.next() else {
                return Err(usage(format!("flag '--{name}' needs a value")));
            };
            map.insert(name.to_string(), value.clone());
        }
    }
    Ok(map)
}

fn parse_num<T: std::str::FromStr>(
    flags: &HashMap<String, String>,
    key: &str,
) -> Result<Option<T>, CliError> {
    match flags.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse::<T>()
            .map(Some)
            .map_err(|_| usage(format!("invalid value for '--{key}': '{v}'"))),
    }
}

/// Seed from the --seed flag, else ICL_LAB_SEED, else the default 42.
fn resolve_seed(flags: &HashMap<String, String>) -> Result<u64, CliError> {
    if let Some(s) = parse_num::<u64>(flags, "seed")? {
        return Ok(s);
    }
    if let Ok(env) = std::env::var("ICL_LAB_SEED") {
        return env
            .parse::<u64>()
            .map_err(|_| usage(format!("ICL_LAB_SEED must be an integer, got '{env}'")));
    }
    Ok(42)
}

fn configure_threads(flags: &HashMap<String, String>) -> Result<(), CliError> {
    if let Some(n) = parse_num::<usize>(flags, "threads")? {
        if n == 0 {
            return Err(usage("'--threads' must be at least 1"));
        }
        icl_lab::par::configure_threads(n);
    }
    Ok(())
}

/// Pool contents are independent of the run seed so train and eval runs see
/// the same 80/20 split by default.
const POOL_SEED: u64 = 1_000_003;

fn build_pool(flags: &HashMap<String, String>) -> Result<ImagePool, CliError> {
    let synthetic = flags.contains_key("synthetic");
    let data = flags.get("data");
    if synthetic && data.is_some() {
        return Err(usage("'--data' and '--synthetic' are mutually exclusive"));
    }
    if let Some(path) = data {
        Ok(cifar_pool(Path::new(path))?)
    } else {
        let size = parse_num::<usize>(flags, "synthetic-size")?.unwrap_or(4096);
        if size < 52 {
            return Err(usage(
                "'--synthetic-size' must be at least 52 (41-pair prompts on an 80/20 split)",
            ));
        }
        Ok(synthetic_pool(size, POOL_SEED))
    }
}

fn pool_description(flags: &HashMap<String, String>) -> String {
    match flags.get("data") {
        Some(p) => format!("cifar10:{p}"),
        None => format!(
            "synthetic(n={}, seed={POOL_SEED})",
            flags.get("synthetic-size").cloned().unwrap_or_else(|| "4096".into())
        ),
    }
}

fn cmd_train(args: &[String]) -> Result<(), CliError> {
    let flags = parse_flags(
        args,
        &[
            "experiment",
            "config",
            "steps",
            "data",
            "synthetic",
            "synthetic-size",
            "seed",
            "batch-size",
            "lr",
            "checkpoint-every",
            "out",
            "threads",
        ],
        &["synthetic"],
    )?;
    configure_threads(&flags)?;

    let config_text = match flags.get("config") {
        Some(p) => Some(std::fs::read_to_string(p).map_err(Error::Io)?),
        None => None,
    };

    // Precedence: experiment flag > config file > (required).
    let flag_experiment = flags
        .get("experiment")
        .map(|e| {
            Experiment::parse(e)
                .ok_or_else(|| usage(format!("invalid value for '--experiment': '{e}'")))
        })
        .transpose()?;
    let mut cfg = match (&config_text, flag_experiment) {
        (Some(text), Some(exp)) => {
            // Flag wins: re-parse the config on top of the flag experiment's
            // defaults, dropping any experiment line from the file.
            let filtered: String = text
                .lines()
                .filter(|l| l.trim().split_once('=').map(|(k, _)| k.trim()) != Some("experiment"))
                .map(|l| format!("{l}\n"))
                .collect();
            TrainConfig::from_kv(&format!("experiment={}\n{filtered}", exp.name()))?
        }
        (Some(text), None) => TrainConfig::from_kv(text)?,
        (None, Some(exp)) => TrainConfig::for_experiment(exp),
        (None, None) => {
            return Err(usage("train needs '--experiment' (or a config file that sets it)"))
        }
    };
    if let Some(steps) = parse_num::<usize>(&flags, "steps")? {
        cfg.total_steps = steps;
    }
    if let Some(bs) = parse_num::<usize>(&flags, "batch-size")? {
        cfg.batch_size = bs;
    }
    if let Some(lr) = parse_num::<f64>(&flags, "lr")? {
        cfg.lr = lr;
    }
    if let Some(every) = parse_num::<usize>(&flags, "checkpoint-every")? {
        cfg.checkpoint_every = every;
    }
    // Seed precedence: flag > config-file seed > env > default.
    let config_has_seed = config_text.as_deref().is_some_and(|t| {
        t.lines()
            .any(|l| l.trim().split_once('=').is_some_and(|(k, _)| k.trim() == "seed"))
    });
    if let Some(s) = parse_num::<u64>(&flags, "seed")? {
        cfg.seed = s;
    } else if !config_has_seed {
        cfg.seed = resolve_seed(&flags)?;
    }

    let pool = build_pool(&flags)?;
    let out_dir = PathBuf::from(flags.get("out").cloned().unwrap_or_else(|| "out".into()));
    std::fs::create_dir_all(&out_dir).map_err(Error::Io)?;

    println!("resolved config:");
    print!("{}", cfg.to_kv());
    println!("data={}", pool_description(&flags));
    println!("out={}", out_dir.display());
    println!("seed={}", cfg.seed);

    let started = std::time::Instant::now();
    let ckpt = train_loop(&cfg, &pool, Some(&out_dir))?;
    let ckpt_path = out_dir.join("checkpoint.ckpt");
    ckpt.save(&ckpt_path)?;
    std::fs::write(out_dir.join("loss.csv"), loss_history_csv(&ckpt.loss_history))
        .map_err(Error::Io)?;

    let last = ckpt.loss_history.last().map(|r| r.loss).unwrap_or(f32::NAN);
    println!(
        "trained {} steps in {:.1}s; final loss {last:.6}; wrote {} and {}",
        ckpt.step,
        started.elapsed().as_secs_f64(),
        ckpt_path.display(),
        out_dir.join("loss.csv").display()
    );
    Ok(())
}

fn eval_options(
    flags: &HashMap<String, String>,
    experiment: &str,
    digest: u64,
) -> Result<EvalOptions, CliError> {
    let mut opts = EvalOptions {
        experiment: experiment.to_string(),
        config_digest: digest,
        ..Default::default()
    };
    if let Some(t) = parse_num::<usize>(flags, "tasks")? {
        if t == 0 {
            return Err(usage("'--tasks' must be at least 1"));
        }
        opts.n_tasks = t;
    }
    opts.seed = resolve_seed(flags)?;
    opts.gd = flags.contains_key("gd");
    if let Some(s) = parse_num::<usize>(flags, "gd-steps")? {
        opts.gd_steps = s;
    }
    if let Some(lr) = parse_num::<f64>(flags, "gd-lr")? {
        opts.gd_lr = lr;
    }
    Ok(opts)
}

fn print_report_summary(report: &icl_lab::eval::EvalReport) {
    let last = report.rows.last().expect("non-empty report");
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4e}"));
    println!(
        "at m={}: model {}  least-squares {:.4e}  3nn {:.4e}  mean {:.4e}",
        last.context_len,
        fmt(last.model_mse),
        last.ls_mse,
        last.knn_mse,
        last.mean_mse
    );
}

fn cmd_eval(args: &[String]) -> Result<(), CliError> {
    let flags = parse_flags(
        args,
        &[
            "checkpoint",
            "class",
            "tasks",
            "data",
            "synthetic",
            "synthetic-size",
            "seed",
            "gd",
            "gd-steps",
            "gd-lr",
            "out",
            "threads",
        ],
        &["synthetic", "gd"],
    )?;
    configure_threads(&flags)?;

    let ckpt_path = flags
        .get("checkpoint")
        .ok_or_else(|| usage("eval needs '--checkpoint'"))?;
    let ckpt = Checkpoint::load(Path::new(ckpt_path))?;
    let (model, store, _) = ckpt.restore_model()?;

    let class = match flags.get("class") {
        Some(c) => FunctionClass::parse(c)
            .ok_or_else(|| usage(format!("invalid value for '--class': '{c}'")))?,
        None => ckpt.config.experiment.target_class(),
    };
    let opts = eval_options(&flags, ckpt.config.experiment.name(), ckpt.config.digest())?;
    let pool = build_pool(&flags)?;
    let out = PathBuf::from(flags.get("out").cloned().unwrap_or_else(|| "report.csv".into()));

    println!("resolved config:");
    println!("checkpoint={ckpt_path} (step {}, d={}, n={})", ckpt.step, ckpt.d, ckpt.n);
    println!("class={}", class.name());
    println!("tasks={}", opts.n_tasks);
    println!("gd={}", opts.gd);
    println!("data={}", pool_description(&flags));
    println!("out={}", out.display());
    println!("seed={}", opts.seed);

    let report = evaluate(&model, &store, class, ckpt.d, ckpt.n, &pool, &opts);
    write_csv(&report, &out)?;
    print_report_summary(&report);
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_baselines(args: &[String]) -> Result<(), CliError> {
    let flags = parse_flags(
        args,
        &[
            "class",
            "d",
            "k-mult",
            "tasks",
            "data",
            "synthetic",
            "synthetic-size",
            "seed",
            "gd",
            "gd-steps",
            "gd-lr",
            "out",
            "threads",
        ],
        &["synthetic", "gd"],
    )?;
    configure_threads(&flags)?;

    let class = flags
        .get("class")
        .ok_or_else(|| usage("baselines needs '--class'"))?;
    let class = FunctionClass::parse(class)
        .ok_or_else(|| usage(format!("invalid value for '--class': '{class}'")))?;
    let d = parse_num::<usize>(&flags, "d")?.unwrap_or(8);
    if !(1..=8).contains(&d) {
        return Err(usage("'--d' must be in 1..=8"));
    }
    let k_mult = parse_num::<usize>(&flags, "k-mult")?.unwrap_or(5);
    let n = k_mult * d + 1;
    let opts = eval_options(&flags, "baselines", 0)?;
    let pool = build_pool(&flags)?;
    let out = PathBuf::from(flags.get("out").cloned().unwrap_or_else(|| "baselines.csv".into()));

    println!("resolved config:");
    println!("class={}", class.name());
    println!("d={d}");
    println!("n={n}");
    println!("tasks={}", opts.n_tasks);
    println!("gd={}", opts.gd);
    println!("data={}", pool_description(&flags));
    println!("out={}", out.display());
    println!("seed={}", opts.seed);

    let report = baselines_only(class, d, n, &pool, &opts);
    write_csv(&report, &out)?;
    print_report_summary(&report);
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_plot(args: &[String]) -> Result<(), CliError> {
    let flags = parse_flags(args, &["in", "out"], &[])?;
    let input = flags.get("in").ok_or_else(|| usage("plot needs '--in'"))?;
    let out = flags.get("out").ok_or_else(|| usage("plot needs '--out'"))?;
    let report = read_csv(Path::new(input))?;
    render_svg(&report, Path::new(out))?;
    println!(
        "plotted {} rows ({} / {}) to {out}",
        report.rows.len(),
        report.experiment,
        report.class.name()
    );
    Ok(())
}

fn cmd_selftest(args: &[String]) -> Result<(), CliError> {
    let flags = parse_flags(args, &["threads"], &[])?;
    configure_threads(&flags)?;
    let stdout = std::io::stdout();
    match icl_lab::selftest::run_all(stdout.lock()).map_err(Error::Io)? {
        Ok(()) => {
            println!("selftest: all checks passed");
            Ok(())
        }
        Err(failed) => Err(CliError::Runtime(Error::Train(format!(
            "selftest failed: {}",
            failed.join(", ")
        )))),
    }
}
