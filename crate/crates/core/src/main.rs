use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use rfpuf::devicegen::{read_fleet, sample_fleet, write_fleet, ParamSpec, TxProfile};
use rfpuf::harness::{run_experiment, write_tables, ExperimentConfig, ExperimentKind, RxMode, Table};
use rfpuf::neural::{apply_compensator, build_batch, train_compensator, train_with_classes, feature_matrix, MlpModel, TrainParams};
use rfpuf::pipeline::{extract_fleet, extract_loopback_fleet, LinkConfig, Purpose};
use rfpuf::pufmetrics::{compute_distances, far_frr_curve, false_detection_probability, summary_text};
use rfpuf::randomness::{nist_subset, NistConfig};
use rfpuf::rxchain::RxProfile;
use rfpuf::seed::{derive_seed, Stream};
use rfpuf::{Error, Result};

/// RF-PUF simulation lab.
///
/// Settings are resolved in order: built-in defaults, then the `--config`
/// file, then command-line flags.
#[derive(Parser, Debug)]
#[command(name = "rfpuf", version, about)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Config file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Transmitter counts, comma separated.
    #[arg(long, global = true, value_name = "LIST")]
    ntx: Option<String>,
    /// Hidden layer sizes, comma separated.
    #[arg(long, global = true, value_name = "LIST")]
    hidden: Option<String>,
    /// Training iterations per device, comma separated.
    #[arg(long, global = true, value_name = "LIST")]
    iters: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a transmitter fleet and write it as CSV.
    Fleet,
    /// Train a classifier and save it.
    Train {
        /// Fleet CSV; sampled from the seed when omitted.
        #[arg(long)]
        fleet: Option<PathBuf>,
    },
    /// Evaluate a saved classifier.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        fleet: Option<PathBuf>,
    },
    /// Run one experiment sweep (or `all`) and write its CSVs.
    Experiment {
        /// fig6a, fig6b, fig6c, fig6d, fig6ef, fig7, fig10 or all
        #[arg(value_parser = parse_kinds)]
        kind: Kinds,
    },
    /// Randomness tests on a bit file, or the fleet bitstream when no file is given.
    Nist {
        /// Text file of 0/1 characters; whitespace is ignored.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Distance statistics for a fleet.
    Report,
}

#[derive(Debug, Clone)]
struct Kinds(Vec<ExperimentKind>);

fn parse_kinds(s: &str) -> std::result::Result<Kinds, String> {
    if s == "all" {
        return Ok(Kinds(ExperimentKind::ALL.to_vec()));
    }
    s.parse().map(|k| Kinds(vec![k])).map_err(|_| {
        let names: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
        format!("expected one of {} or all", names.join(", "))
    })
}

fn resolve_config(g: &Global) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.set("master_seed", &s.to_string())?;
    }
    if let Some(o) = &g.out {
        cfg.set("output_path", &o.to_string_lossy())?;
    }
    for (key, v) in [("n_tx", &g.ntx), ("n_hidden", &g.hidden), ("n_train_iterations", &g.iters)] {
        if let Some(v) = v {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn link(cfg: &ExperimentConfig) -> LinkConfig {
    let mut link = LinkConfig {
        frame_bits: cfg.frame_bits,
        ..LinkConfig::default()
    };
    link.spec.eb_n0_db.std_dev = cfg.ebn0_sigma_db[0];
    link.rx.matched_filter = cfg.rrc_enabled;
    link
}

fn fleet_for(cfg: &ExperimentConfig, path: Option<&Path>) -> Result<Vec<TxProfile>> {
    match path {
        Some(p) => read_fleet(p),
        None => sample_fleet(cfg.n_tx[0], &ParamSpec::table_one(), cfg.master_seed),
    }
}

fn out_dir(cfg: &ExperimentConfig) -> Result<&Path> {
    std::fs::create_dir_all(&cfg.output_path)?;
    Ok(&cfg.output_path)
}

fn cmd_fleet(cfg: &ExperimentConfig) -> Result<()> {
    let fleet = fleet_for(cfg, None)?;
    let path = out_dir(cfg)?.join("fleet.csv");
    write_fleet(&path, &fleet)?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_train(cfg: &ExperimentConfig, fleet: Option<&Path>) -> Result<()> {
    let fleet = fleet_for(cfg, fleet)?;
    let link = link(cfg);
    let batch = build_batch(&fleet, &RxProfile::ideal(), cfg.n_train_iterations[0], &link, cfg.master_seed, Purpose::Train)?;
    let hp = TrainParams {
        hidden: cfg.n_hidden[0],
        max_epochs: cfg.max_epochs,
        target_error: cfg.target_error,
        ..TrainParams::default()
    };
    let (model, report) =
        train_with_classes(feature_matrix(&batch.rows).view(), &batch.labels, fleet.len(), &hp, cfg.master_seed)?;
    let path = out_dir(cfg)?.join("model.txt");
    model.save(&path)?;
    println!(
        "epochs = {}\nloss = {:.6e}\ntraining_error = {:.6e}\nstop = {:?}\nmodel = {}",
        report.epochs,
        report.loss,
        report.training_error,
        report.stop,
        path.display()
    );
    Ok(())
}

fn cmd_eval(cfg: &ExperimentConfig, model: &Path, fleet: Option<&Path>) -> Result<()> {
    if !model.exists() {
        return Err(Error::MissingFile(model.to_path_buf()));
    }
    let model = MlpModel::load(model)?;
    let fleet = fleet_for(cfg, fleet)?;
    if model.output_dim != fleet.len() {
        return Err(Error::DimensionMismatch {
            expected: model.output_dim,
            got: fleet.len(),
        });
    }
    let link = link(cfg);
    let seed = cfg.master_seed;
    let per_device = cfg.n_eval_frames.div_ceil(fleet.len());
    let rx = match cfg.rx_mode {
        RxMode::Ideal => RxProfile::ideal(),
        _ => RxProfile::sample(&link.spec, derive_seed(seed, 0, Stream::RxProfile))?,
    };
    let mut batch = extract_fleet(&fleet, &rx, &link, seed, Purpose::Eval, 0..per_device).check_rejection()?;
    if cfg.rx_mode == RxMode::Compensated {
        let (ideal, other) = extract_loopback_fleet(
            &fleet,
            &rx,
            &link,
            seed,
            Purpose::Loopback,
            0..cfg.n_train_iterations[0],
        );
        let comp = train_compensator(&ideal.check_rejection()?.rows, &other.rows)?;
        batch.rows = batch.rows.iter().map(|fv| apply_compensator(&comp, fv)).collect();
    }
    let det = false_detection_probability(&model, &batch.rows, &batch.labels)?;
    let thresholds: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let genuine = (batch.rows.as_slice(), batch.labels.as_slice());
    let curve = far_frr_curve(&model, genuine, genuine, &thresholds, seed)?;
    print!("{}", summary_text(None, Some(&det), Some(&curve)));
    if batch.rejected > 0 {
        println!("rejected_frames = {}", batch.rejected);
    }
    Ok(())
}

fn cmd_experiment(cfg: &ExperimentConfig, kinds: &[ExperimentKind]) -> Result<()> {
    for &k in kinds {
        info!("running {}", k.name());
        let res = run_experiment(k, cfg)?;
        for p in write_tables(&cfg.output_path, &res.tables, &res.config)? {
            println!("{}", p.display());
        }
    }
    Ok(())
}

fn read_bits(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    text.chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            other => Err(Error::Parse {
                context: path.display().to_string(),
                message: format!("unexpected character '{other}'"),
            }),
        })
        .collect()
}

fn cmd_nist(cfg: &ExperimentConfig, input: Option<&Path>) -> Result<()> {
    let Some(input) = input else {
        return cmd_experiment(cfg, &[ExperimentKind::Fig7]);
    };
    let bits = read_bits(input)?;
    let report = nist_subset(&bits, &NistConfig::default())?;
    let mut t = Table::new("nist", &["test", "passed", "evaluated", "skipped", "pass_rate"]);
    for s in &report.tests {
        t.push(vec![
            s.name.to_string(),
            s.passed.to_string(),
            s.evaluated.to_string(),
            s.skipped.to_string(),
            s.pass_rate().map_or("skipped".into(), |r| format!("{r:.4}")),
        ]);
    }
    print!("{}", t.to_csv_string(cfg));
    Ok(())
}

fn cmd_report(cfg: &ExperimentConfig) -> Result<()> {
    let fleet = fleet_for(cfg, None)?;
    let d = compute_distances(&fleet, cfg.evals_per_device, &link(cfg), cfg.master_seed)?;
    let text = summary_text(Some(&d), None, None);
    std::fs::write(out_dir(cfg)?.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn run(cli: &Cli, cfg: &ExperimentConfig) -> Result<()> {
    match &cli.cmd {
        Command::Fleet => cmd_fleet(cfg),
        Command::Train { fleet } => cmd_train(cfg, fleet.as_deref()),
        Command::Eval { model, fleet } => cmd_eval(cfg, model, fleet.as_deref()),
        Command::Experiment { kind } => cmd_experiment(cfg, &kind.0),
        Command::Nist { input } => cmd_nist(cfg, input.as_deref()),
        Command::Report => cmd_report(cfg),
    }
}

fn fail(e: &Error) {
    let msg = e.to_string().replace(['\n', '\r'], " ");
    eprintln!("error: kind={} message={msg}", e.kind());
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: kind=invalid_parameter message=thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let cfg = match resolve_config(&cli.global) {
        Ok(c) => c,
        Err(e) => {
            fail(&e);
            return ExitCode::from(2);
        }
    };
    match run(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            fail(&e);
            ExitCode::from(1)
        }
    }
}
