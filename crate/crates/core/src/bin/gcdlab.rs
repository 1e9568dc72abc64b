use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use gcdlab::experiments::{run, write_report, CommandKind, ExperimentConfig, InstanceSource, OUT_ENV};
use gcdlab::io::{save_instance, InstanceFile, InstanceKind, RecipeSpec};
use gcdlab::Error;

#[derive(Parser)]
#[command(name = "gcdlab", version, about = "Exact gcd/lcm tuple censuses, extremal constructions and bound checks")]
struct Cli {
    /// JSON experiment config; command-line flags override its fields
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory (defaults to $GCDLAB_OUT; stdout when neither is set)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Exit with status 4 when any bound verdict is `violated`
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Option<Cmd>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build extremal instances (optionally over a D or L sweep)
    Construct(RunArgs),
    /// Count qualifying tuples
    Census(RunArgs),
    /// Compare censuses against every applicable upper bound
    Verify(RunArgs),
    /// Random 0/1 sweep of the divisor large-sieve forms
    SieveSweep(RunArgs),
    /// Localize at primes, scan purity, search for dominated measures
    Concentrate(RunArgs),
    /// s-wise gcd census and bound
    Swise(RunArgs),
}

#[derive(Args, Default)]
struct RunArgs {
    /// Instance JSON file
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long, value_parser = ["gcd", "lcm"])]
    kind: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    /// Scales X_i; a single value is repeated k times
    #[arg(long, value_delimiter = ',')]
    x: Vec<u64>,
    #[arg(long)]
    d: Option<u64>,
    #[arg(long)]
    l: Option<u64>,
    /// Target density, e.g. 1/100
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    c_small: Option<f64>,
    #[arg(long)]
    c_large: Option<f64>,

    #[arg(long, value_delimiter = ',')]
    sweep_d: Vec<u64>,
    #[arg(long, value_delimiter = ',')]
    sweep_l: Vec<u64>,
    #[arg(long, value_delimiter = ',')]
    sweep_delta: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    sweep_x: Vec<u64>,
    #[arg(long, value_delimiter = ',')]
    primes: Vec<u64>,
    /// Sieve sweep exponents e with X = 2^e
    #[arg(long, value_delimiter = ',')]
    exponents: Vec<u32>,

    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    p0: Option<u64>,
    #[arg(long)]
    tail_threshold: Option<f64>,
    #[arg(long)]
    implied_constant: Option<f64>,
    #[arg(long)]
    lambda_k: Option<f64>,

    /// Cross-check against enumeration
    #[arg(long)]
    brute: bool,
    #[arg(long)]
    brute_cap: Option<u64>,
    #[arg(long)]
    s: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    lemma_k: Vec<usize>,
    /// Run the purity scan (enumerates every qualifying tuple)
    #[arg(long)]
    structure: bool,
    /// Write the (single) instance to this path as explicit sets
    #[arg(long)]
    save_instance: Option<PathBuf>,
}

impl Cmd {
    fn split(self) -> (CommandKind, RunArgs) {
        match self {
            Cmd::Construct(a) => (CommandKind::Construct, a),
            Cmd::Census(a) => (CommandKind::Census, a),
            Cmd::Verify(a) => (CommandKind::Verify, a),
            Cmd::SieveSweep(a) => (CommandKind::SieveSweep, a),
            Cmd::Concentrate(a) => (CommandKind::Concentrate, a),
            Cmd::Swise(a) => (CommandKind::Swise, a),
        }
    }
}

fn inline_instance(a: &RunArgs) -> Result<Option<InstanceFile>, Error> {
    let Some(kind) = a.kind.as_deref() else {
        if a.k.is_some() || !a.x.is_empty() || a.d.is_some() || a.l.is_some() {
            return Err(Error::usage("inline instance needs --kind"));
        }
        return Ok(None);
    };
    let kind = if kind == "gcd" { InstanceKind::Gcd } else { InstanceKind::Lcm };
    let k = a.k.ok_or_else(|| Error::usage("inline instance needs --k"))?;
    let scales = match a.x.len() {
        0 => return Err(Error::usage("inline instance needs --x")),
        1 => vec![a.x[0]; k],
        _ => a.x.clone(),
    };
    Ok(Some(InstanceFile {
        kind,
        k,
        scales,
        threshold: a.d,
        budget: a.l,
        sets: None,
        recipe: Some(RecipeSpec {
            delta: a.delta.clone(),
            c_small: a.c_small,
            c_large: a.c_large,
        }),
    }))
}

fn apply(config: &mut ExperimentConfig, a: &RunArgs) -> Result<(), Error> {
    if let Some(path) = &a.instance {
        config.instance = Some(InstanceSource::File { path: path.clone() });
    } else if let Some(f) = inline_instance(a)? {
        config.instance = Some(InstanceSource::Inline(f));
    }
    let sw = &mut config.sweep;
    for (dst, src) in [(&mut sw.d, &a.sweep_d), (&mut sw.l, &a.sweep_l), (&mut sw.x, &a.sweep_x), (&mut sw.p, &a.primes)] {
        if !src.is_empty() {
            *dst = src.clone();
        }
    }
    if !a.sweep_delta.is_empty() {
        sw.delta = a.sweep_delta.clone();
    }
    if !a.exponents.is_empty() {
        sw.exponents = a.exponents.clone();
    }
    let c = &mut config.constants;
    if let Some(v) = a.epsilon {
        c.epsilon = v;
    }
    if a.p0.is_some() {
        c.p0 = a.p0;
    }
    if let Some(v) = a.tail_threshold {
        c.tail_threshold = v;
    }
    if let Some(v) = a.implied_constant {
        c.implied_constant = v;
    }
    if a.lambda_k.is_some() {
        c.lambda_k = a.lambda_k;
    }
    if a.c_small.is_some() {
        c.c_small = a.c_small;
    }
    if a.c_large.is_some() {
        c.c_large = a.c_large;
    }
    config.brute |= a.brute;
    if let Some(v) = a.brute_cap {
        config.brute_cap = v;
    }
    if a.s.is_some() {
        config.s = a.s;
    }
    if a.trials.is_some() {
        config.trials = a.trials;
    }
    if !a.lemma_k.is_empty() {
        config.lemma_k = a.lemma_k.clone();
    }
    config.structure |= a.structure;
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::CapExceeded { .. } => 3,
        _ => 2,
    }
}

fn fail(e: Error) -> ExitCode {
    let body = json!({ "error": e.kind(), "message": e.to_string() });
    eprintln!("{body}");
    ExitCode::from(exit_code(&e))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(Error::usage(e.to_string().trim().to_string())),
    };
    let mut config = match &cli.config {
        Some(path) => match ExperimentConfig::load(path) {
            Ok(c) => c,
            Err(e) => return fail(e),
        },
        None => match &cli.command {
            Some(_) => ExperimentConfig::new(CommandKind::Census),
            None => return fail(Error::usage("give a subcommand or --config")),
        },
    };
    let mut save = None;
    if let Some(cmd) = cli.command {
        let (kind, args) = cmd.split();
        if cli.config.is_some() && kind != config.command {
            return fail(Error::usage(format!(
                "subcommand {} does not match config command {}",
                kind.as_str(),
                config.command.as_str()
            )));
        }
        config.command = kind;
        if let Err(e) = apply(&mut config, &args) {
            return fail(e);
        }
        save = args.save_instance;
    }
    if cli.seed.is_some() {
        config.seed = cli.seed;
    }
    if let Some(w) = cli.workers {
        config.workers = w.max(1);
    }
    config.strict |= cli.strict;
    let out = cli
        .out
        .or(config.out.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from));

    if let Some(path) = save {
        let built = config
            .instance
            .as_ref()
            .ok_or_else(|| Error::usage("--save-instance needs an instance"))
            .and_then(|s| s.file())
            .and_then(|f| f.build())
            .and_then(|inst| save_instance(&inst, &path));
        if let Err(e) = built {
            return fail(e);
        }
    }

    let report = match run(&config) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    match &out {
        Some(dir) => match write_report(&report, dir) {
            Ok(paths) => {
                let mut stdout = std::io::stdout().lock();
                for p in paths {
                    let _ = writeln!(stdout, "{}", p.display());
                }
                let _ = writeln!(stdout, "determinism_hash {}", report.determinism_hash);
            }
            Err(e) => return fail(e),
        },
        None => {
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            let _ = writeln!(std::io::stdout().lock(), "{text}");
        }
    }
    if config.strict && report.violations > 0 {
        eprintln!("{}", json!({ "error": "violation", "violations": report.violations }));
        return ExitCode::from(4);
    }
    ExitCode::SUCCESS
}
