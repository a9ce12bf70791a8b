mod commands;
mod log;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use hypernas::model::ParamGroup;
use hypernas::trainer::{Paradigm, CHECKPOINT_VERSION};
use hypernas::Error;

#[derive(Parser)]
#[command(name = "hypernas", version, about = "Dual-task architecture performance predictor")]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and a labelled bench.
    Genbench(GenbenchArgs),
    /// Train a predictor and write a checkpoint.
    Train(TrainArgs),
    /// Rank-correlation evaluation over seeded splits.
    Eval(EvalArgs),
    /// Evaluate dual-task training across preference factors q.
    Sweep(SweepArgs),
    /// Evolutionary search with a trained predictor or an oracle table.
    Search(SearchArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct Common {
    /// TOML file with settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Builtin profile name or profile file.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenbenchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    count: Option<usize>,
    /// Pixel noise standard deviation.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    classes: Option<usize>,
    /// Ground-truth training epochs.
    #[arg(long)]
    gt_epochs: Option<usize>,
    #[arg(long)]
    gt_lr: Option<f64>,
}

#[derive(Args, Default)]
struct ModelArgs {
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    gcn_layers: Option<usize>,
    #[arg(long)]
    hyper_hidden: Option<usize>,
    #[arg(long)]
    hyper_layers: Option<usize>,
    /// cell-feature or position-embedding.
    #[arg(long)]
    encoding: Option<String>,
}

#[derive(Args, Default)]
struct TrainingArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    #[arg(long)]
    accumulate_every: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Comma-separated epochs at which the learning rate halves.
    #[arg(long, value_delimiter = ',')]
    lr_halve_epochs: Option<Vec<usize>>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Preference factor.
    #[arg(long)]
    q: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    bench: Option<PathBuf>,
    /// Auxiliary training images (AUXD).
    #[arg(long)]
    aux: Option<PathBuf>,
    /// dual, pred-only or hyper-only.
    #[arg(long)]
    paradigm: Option<Paradigm>,
    /// Number of training pairs M drawn from the bench.
    #[arg(long)]
    train_size: Option<usize>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    training: TrainingArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    bench: Option<PathBuf>,
    #[arg(long)]
    aux: Option<PathBuf>,
    /// Held-out images for generated-weight accuracy.
    #[arg(long)]
    aux_val: Option<PathBuf>,
    /// trained, oracle or anti-oracle.
    #[arg(long)]
    predictor: Option<String>,
    #[arg(long, value_delimiter = ',')]
    paradigms: Option<Vec<Paradigm>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    train_size: Option<usize>,
    /// "all" or a record count.
    #[arg(long)]
    test_size: Option<String>,
    #[arg(long)]
    export_embeddings: bool,
    #[arg(long)]
    hyper_eval_archs: Option<usize>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    training: TrainingArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Comma-separated q values.
    #[arg(long, value_delimiter = ',')]
    qs: Option<Vec<f64>>,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    common: Common,
    /// Trained predictor used as fitness.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Use the bench accuracies as fitness.
    #[arg(long)]
    oracle: bool,
    #[arg(long)]
    bench: Option<PathBuf>,
    #[arg(long)]
    population: Option<usize>,
    #[arg(long)]
    generations: Option<usize>,
    #[arg(long)]
    mutation_rate: Option<f64>,
    #[arg(long)]
    tournament: Option<usize>,
    #[arg(long)]
    elitism: Option<usize>,
    /// Cap on predictor queries.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    no_cache: bool,
    #[arg(long)]
    top_k: Option<usize>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    common: Common,
    /// Restrict to these groups (encoder, hypernet, regressor, task).
    #[arg(long = "param-group", value_delimiter = ',')]
    param_groups: Option<Vec<ParamGroup>>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    paradigm: Option<Paradigm>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    aux: Option<PathBuf>,
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
    #[command(flatten)]
    model: ModelArgs,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn apply_model(m: &mut hypernas::model::ModelConfig, a: ModelArgs) -> hypernas::Result<()> {
    set(&mut m.dim, a.dim);
    set(&mut m.gcn_layers, a.gcn_layers);
    set(&mut m.hyper_hidden, a.hyper_hidden);
    set(&mut m.hyper_layers, a.hyper_layers);
    if let Some(e) = a.encoding {
        m.encoding = serde_json::from_value(serde_json::Value::String(e.clone()))
            .map_err(|_| Error::Config(format!("--encoding {e:?}: expected cell-feature or position-embedding")))?;
    }
    Ok(())
}

fn apply_training(t: &mut hypernas::trainer::TrainConfig, a: TrainingArgs) {
    set(&mut t.epochs, a.epochs);
    if a.steps_per_epoch.is_some() {
        t.steps_per_epoch = a.steps_per_epoch;
    }
    set(&mut t.accumulate_every, a.accumulate_every);
    set(&mut t.lr, a.lr);
    set(&mut t.lr_halve_epochs, a.lr_halve_epochs);
    set(&mut t.batch_size, a.batch_size);
    set(&mut t.q, a.q);
}

fn resolve_eval(a: EvalArgs, base: settings::Eval) -> hypernas::Result<settings::Eval> {
    let mut s = base;
    set(&mut s.profile, a.common.profile);
    set(&mut s.out, a.common.out);
    if let Some(seed) = a.common.seed {
        s.seeds = vec![seed];
    }
    set(&mut s.bench, a.bench);
    if a.aux.is_some() {
        s.aux = a.aux;
    }
    if a.aux_val.is_some() {
        s.aux_val = a.aux_val;
    }
    if let Some(p) = a.predictor {
        s.predictor = serde_json::from_value(serde_json::Value::String(p.clone()))
            .map_err(|_| Error::Config(format!("--predictor {p:?}: expected trained, oracle or anti-oracle")))?;
    }
    set(&mut s.paradigms, a.paradigms);
    set(&mut s.seeds, a.seeds);
    set(&mut s.train_size, a.train_size);
    set(&mut s.test_size, a.test_size);
    s.export_embeddings |= a.export_embeddings;
    set(&mut s.hyper_eval_archs, a.hyper_eval_archs);
    apply_model(&mut s.model, a.model)?;
    apply_training(&mut s.train, a.training);
    Ok(s)
}

fn run(cli: Cli) -> hypernas::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("--threads {n}: {e}")))?;
    }
    match cli.command {
        Command::Genbench(a) => {
            let mut s: settings::Genbench = settings::load(a.common.config.as_deref())?;
            set(&mut s.profile, a.common.profile);
            set(&mut s.seed, a.common.seed);
            set(&mut s.out, a.common.out);
            set(&mut s.count, a.count);
            set(&mut s.dataset.noise, a.noise);
            set(&mut s.dataset.classes, a.classes);
            set(&mut s.ground_truth.epochs, a.gt_epochs);
            set(&mut s.ground_truth.lr, a.gt_lr);
            commands::genbench(s)
        }
        Command::Train(a) => {
            let mut s: settings::Train = settings::load(a.common.config.as_deref())?;
            set(&mut s.profile, a.common.profile);
            set(&mut s.seed, a.common.seed);
            set(&mut s.out, a.common.out);
            set(&mut s.bench, a.bench);
            set(&mut s.aux, a.aux);
            set(&mut s.train.paradigm, a.paradigm);
            if a.train_size.is_some() {
                s.train.train_size = a.train_size;
            }
            apply_model(&mut s.model, a.model)?;
            apply_training(&mut s.train, a.training);
            commands::train(s)
        }
        Command::Eval(a) => {
            let base = settings::load(a.common.config.as_deref())?;
            commands::eval(resolve_eval(a, base)?)
        }
        Command::Sweep(a) => {
            let mut s: settings::Sweep = settings::load(a.eval.common.config.as_deref())?;
            set(&mut s.qs, a.qs);
            s.eval = resolve_eval(a.eval, s.eval)?;
            commands::sweep(s)
        }
        Command::Search(a) => {
            let mut s: settings::Search = settings::load(a.common.config.as_deref())?;
            set(&mut s.profile, a.common.profile);
            set(&mut s.evo.seed, a.common.seed);
            set(&mut s.out, a.common.out);
            if a.checkpoint.is_some() {
                s.checkpoint = a.checkpoint;
            }
            s.oracle |= a.oracle;
            if a.bench.is_some() {
                s.bench = a.bench;
            }
            set(&mut s.evo.population, a.population);
            set(&mut s.evo.generations, a.generations);
            set(&mut s.evo.mutation_rate, a.mutation_rate);
            set(&mut s.evo.tournament, a.tournament);
            set(&mut s.evo.elitism, a.elitism);
            if a.budget.is_some() {
                s.evo.budget = a.budget;
            }
            s.evo.cache &= !a.no_cache;
            set(&mut s.evo.top_k, a.top_k);
            commands::search(s)
        }
        Command::Gradcheck(a) => {
            let mut s: settings::Gradcheck = settings::load(a.common.config.as_deref())?;
            set(&mut s.profile, a.common.profile);
            set(&mut s.seed, a.common.seed);
            if a.common.out.is_some() {
                s.out = a.common.out;
            }
            if let Some(g) = a.param_groups {
                s.param_groups = g.iter().map(|g| g.as_str().to_string()).collect();
            }
            set(&mut s.h, a.h);
            set(&mut s.tolerance, a.tolerance);
            set(&mut s.samples, a.samples);
            set(&mut s.batch, a.batch);
            set(&mut s.paradigm, a.paradigm);
            set(&mut s.q, a.q);
            if a.aux.is_some() {
                s.aux = a.aux;
            }
            if a.inject_fault.is_some() {
                s.inject_fault = a.inject_fault;
            }
            apply_model(&mut s.model, a.model)?;
            commands::gradcheck(s)
        }
    }
}

fn long_version() -> &'static str {
    let text = format!(
        "{}\ncheckpoint format: HNCK v{CHECKPOINT_VERSION}\naux dataset format: AUXD\nbench format: JSON lines v1",
        env!("CARGO_PKG_VERSION")
    );
    Box::leak(text.into_boxed_str())
}

fn main() -> ExitCode {
    let matches = Cli::command().long_version(long_version()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if e.is_config() { 2 } else { 3 };
            log::error(&e.to_string(), code);
            eprintln!("error: {e}");
            ExitCode::from(code)
        }
    }
}
