//! Sweeps behind each figure. Every sweep point is run for several
//! independent replicates and summarized by the median.

use log::{info, warn};

use super::config::{ExperimentConfig, ExperimentKind, RxMode};
use super::output::{fmt_f, Table};
use crate::devicegen::{sample_fleet, TxProfile};
use crate::error::{Error, Result};
use crate::neural::{
    apply_compensator, build_batch, feature_matrix, train_compensator, train_with_classes, CompensatorModel, MlpModel,
    TrainParams,
};
use crate::pipeline::{extract_fleet, extract_loopback_fleet, ChallengeMode, FeatureBatch, LinkConfig, Purpose};
use crate::pufmetrics::{distances_from_geo, evaluate_geo_means, median, wilson, PufDistances};
use crate::randomness::{nist_subset, prng_bits, puf_records, NistConfig, NistReport, PUF_BITS_PER_VALUE};
use crate::rxchain::RxProfile;
use crate::seed::{derive_seed, Stream};

/// Outcome of one train/evaluate cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRun {
    pub errors: usize,
    pub frames: usize,
    pub rejected: usize,
    pub epochs: usize,
    pub train_loss: f64,
}

impl DetectionRun {
    pub fn rate(&self) -> f64 {
        self.errors as f64 / self.frames as f64
    }
}

/// One sweep point: its coordinates and one result per replicate.
#[derive(Debug)]
pub struct Point {
    pub labels: Vec<(String, String)>,
    pub seeds: Vec<u64>,
    pub runs: Vec<Result<DetectionRun>>,
}

impl Point {
    fn new(labels: &[(&str, String)]) -> Self {
        Point {
            labels: labels.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            seeds: Vec::new(),
            runs: Vec::new(),
        }
    }

    pub fn label(&self, key: &str) -> Option<&str> {
        self.labels.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Median error rate over successful replicates; NaN if none succeeded.
    pub fn median_rate(&self) -> f64 {
        let r: Vec<f64> = self.runs.iter().flatten().map(DetectionRun::rate).collect();
        if r.is_empty() {
            f64::NAN
        } else {
            median(&r)
        }
    }

    fn file_stem(&self, kind: ExperimentKind) -> String {
        let mut s = kind.name().to_string();
        for (k, v) in &self.labels {
            s.push('_');
            s.push_str(k);
            s.push_str(&v.replace('.', "p"));
        }
        s
    }
}

#[derive(Debug)]
pub struct ExperimentResult {
    pub kind: ExperimentKind,
    /// The configuration the experiment ran with (sweep defaults filled in).
    pub config: ExperimentConfig,
    pub points: Vec<Point>,
    pub distances: Vec<PufDistances>,
    pub nist: Option<(NistReport, NistReport)>,
    pub tables: Vec<Table>,
}

impl ExperimentResult {
    /// The point whose labels include every `(key, value)` given.
    pub fn point(&self, want: &[(&str, &str)]) -> Option<&Point> {
        self.points
            .iter()
            .find(|p| want.iter().all(|(k, v)| p.label(k) == Some(*v)))
    }
}

fn replicate_seed(cfg: &ExperimentConfig, r: usize) -> u64 {
    derive_seed(cfg.master_seed, r as u64, Stream::Replicate)
}

fn link_for(cfg: &ExperimentConfig, sigma_db: f64, rrc: bool) -> LinkConfig {
    let mut link = LinkConfig {
        frame_bits: cfg.frame_bits,
        ..LinkConfig::default()
    };
    link.spec.eb_n0_db.std_dev = sigma_db;
    link.rx.matched_filter = rrc;
    link
}

fn train_params(cfg: &ExperimentConfig, hidden: usize) -> TrainParams {
    TrainParams {
        hidden,
        max_epochs: cfg.max_epochs,
        target_error: cfg.target_error,
        ..TrainParams::default()
    }
}

/// Evaluation frames per device so that the total reaches `n_eval`.
fn eval_iterations(n_eval: usize, n_tx: usize) -> usize {
    n_eval.div_ceil(n_tx)
}

fn train_on(batch: &FeatureBatch, classes: usize, hp: &TrainParams, seed: u64) -> Result<(MlpModel, crate::neural::TrainReport)> {
    train_with_classes(feature_matrix(&batch.rows).view(), &batch.labels, classes, hp, seed)
}

/// Counts misclassified and rejected evaluation frames.
fn score(model: &MlpModel, batch: &FeatureBatch, comp: Option<&CompensatorModel>) -> Result<(usize, usize)> {
    let wrong = if batch.rows.is_empty() {
        0
    } else {
        let rows: Vec<_> = match comp {
            Some(c) => batch.rows.iter().map(|fv| apply_compensator(c, fv)).collect(),
            None => batch.rows.clone(),
        };
        model
            .predict_batch(feature_matrix(&rows).view())?
            .iter()
            .zip(&batch.labels)
            .filter(|((p, _), l)| p != *l)
            .count()
    };
    Ok((wrong + batch.rejected, batch.total()))
}

/// Trains on ideal-receiver frames and evaluates through the receiver that
/// `mode` selects.
struct Trial<'a> {
    fleet: &'a [TxProfile],
    link: LinkConfig,
    iterations: usize,
    eval_per_device: usize,
    seed: u64,
}

impl Trial<'_> {
    fn train_batch(&self) -> Result<FeatureBatch> {
        build_batch(self.fleet, &RxProfile::ideal(), self.iterations, &self.link, self.seed, Purpose::Train)
    }

    fn eval_batch(&self, rx: &RxProfile) -> FeatureBatch {
        extract_fleet(self.fleet, rx, &self.link, self.seed, Purpose::Eval, 0..self.eval_per_device)
    }

    fn receiver(&self) -> Result<RxProfile> {
        RxProfile::sample(&self.link.spec, derive_seed(self.seed, 0, Stream::RxProfile))
    }

    /// Least-squares compensator fitted on loopback pairs.
    fn compensator(&self, rx: &RxProfile) -> Result<CompensatorModel> {
        let (ideal, other) =
            extract_loopback_fleet(self.fleet, rx, &self.link, self.seed, Purpose::Loopback, 0..self.iterations);
        let ideal = ideal.check_rejection()?;
        train_compensator(&ideal.rows, &other.rows)
    }

    fn run(&self, hp: &TrainParams, mode: RxMode) -> Result<DetectionRun> {
        let train = self.train_batch()?;
        let (model, report) = train_on(&train, self.fleet.len(), hp, self.seed)?;
        let (errors, frames, rejected) = match mode {
            RxMode::Ideal => {
                let ev = self.eval_batch(&RxProfile::ideal());
                let (e, f) = score(&model, &ev, None)?;
                (e, f, ev.rejected)
            }
            RxMode::Nonideal | RxMode::Compensated => {
                let rx = self.receiver()?;
                let comp = match mode {
                    RxMode::Compensated => Some(self.compensator(&rx)?),
                    _ => None,
                };
                let ev = self.eval_batch(&rx);
                let (e, f) = score(&model, &ev, comp.as_ref())?;
                (e, f, ev.rejected)
            }
        };
        Ok(DetectionRun {
            errors,
            frames,
            rejected,
            epochs: report.epochs,
            train_loss: report.loss,
        })
    }
}

fn run_point(point: &mut Point, seed: u64, f: impl FnOnce() -> Result<DetectionRun>) {
    let r = f();
    match &r {
        Ok(d) => info!("{:?} seed {seed}: {}/{} errors", point.labels, d.errors, d.frames),
        Err(e) => warn!("{:?} seed {seed} failed: {e}", point.labels),
    }
    point.seeds.push(seed);
    point.runs.push(r);
}

const RUN_HEADER: [&str; 11] = [
    "replicate",
    "seed",
    "errors",
    "frames",
    "rejected",
    "p_false_detection",
    "ci95_low",
    "ci95_high",
    "epochs",
    "train_loss",
    "status",
];

fn point_table(kind: ExperimentKind, p: &Point) -> Table {
    let mut header: Vec<&str> = p.labels.iter().map(|(k, _)| k.as_str()).collect();
    header.extend(RUN_HEADER);
    let mut t = Table::new(p.file_stem(kind), &header);
    let labels: Vec<String> = p.labels.iter().map(|(_, v)| v.clone()).collect();
    for (i, (seed, run)) in p.seeds.iter().zip(&p.runs).enumerate() {
        let mut row = labels.clone();
        row.push(i.to_string());
        row.push(seed.to_string());
        match run {
            Ok(d) => {
                let ci = wilson(d.errors, d.frames);
                row.extend([
                    d.errors.to_string(),
                    d.frames.to_string(),
                    d.rejected.to_string(),
                    fmt_f(d.rate()),
                    fmt_f(ci.ci_low),
                    fmt_f(ci.ci_high),
                    d.epochs.to_string(),
                    fmt_f(d.train_loss),
                    "ok".into(),
                ]);
            }
            Err(e) => {
                row.extend(std::iter::repeat_n(String::new(), 8));
                row.push(format!("failed:{}", e.kind()));
            }
        }
        t.push(row);
    }
    let mut row = labels;
    row.extend(["median".to_string(), String::new()]);
    let ok: Vec<&DetectionRun> = p.runs.iter().flatten().collect();
    let med_errors = median(&ok.iter().map(|d| d.errors as f64).collect::<Vec<_>>());
    row.extend([
        if ok.is_empty() { String::new() } else { fmt_f(med_errors) },
        String::new(),
        String::new(),
        fmt_f(p.median_rate()),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        format!("{}/{} ok", ok.len(), p.runs.len()),
    ]);
    t.push(row);
    t
}

fn summary_table(kind: ExperimentKind, points: &[Point]) -> Table {
    let Some(first) = points.first() else {
        return Table::new(format!("{}_summary", kind.name()), &["median_p_false_detection"]);
    };
    let mut header: Vec<&str> = first.labels.iter().map(|(k, _)| k.as_str()).collect();
    header.extend(["median_p_false_detection", "min_p_false_detection", "max_p_false_detection", "replicates_ok"]);
    let mut t = Table::new(format!("{}_summary", kind.name()), &header);
    for p in points {
        let rates: Vec<f64> = p.runs.iter().flatten().map(DetectionRun::rate).collect();
        let mut row: Vec<String> = p.labels.iter().map(|(_, v)| v.clone()).collect();
        row.push(fmt_f(p.median_rate()));
        row.push(fmt_f(rates.iter().copied().fold(f64::NAN, f64::min)));
        row.push(fmt_f(rates.iter().copied().fold(f64::NAN, f64::max)));
        row.push(format!("{}/{}", rates.len(), p.runs.len()));
        t.push(row);
    }
    t
}

fn fleet_or_err(n: usize, link: &LinkConfig, seed: u64) -> Result<Vec<TxProfile>> {
    sample_fleet(n, &link.spec, seed)
}

/// Error rate against the number of transmitters. Smaller fleets are the
/// leading devices of the largest one.
fn fig6a(cfg: &ExperimentConfig) -> Vec<Point> {
    let link = link_for(cfg, cfg.ebn0_sigma_db[0], cfg.rrc_enabled);
    let hp = train_params(cfg, cfg.n_hidden[0]);
    let max_n = *cfg.n_tx.iter().max().unwrap();
    let mut points: Vec<Point> = cfg.n_tx.iter().map(|n| Point::new(&[("n_tx", n.to_string())])).collect();
    for r in 0..cfg.replicates {
        let seed = replicate_seed(cfg, r);
        let fleet = fleet_or_err(max_n, &link, seed);
        for (p, &n) in points.iter_mut().zip(&cfg.n_tx) {
            run_point(p, seed, || {
                let fleet = fleet.as_ref().map_err(clone_err)?;
                Trial {
                    fleet: &fleet[..n],
                    link: link.clone(),
                    iterations: cfg.n_train_iterations[0],
                    eval_per_device: eval_iterations(cfg.n_eval_frames, n),
                    seed,
                }
                .run(&hp, cfg.rx_mode)
            });
        }
    }
    points
}

/// Error rate against hidden-layer width; training and evaluation frames are
/// shared across widths.
fn fig6b(cfg: &ExperimentConfig) -> Vec<Point> {
    let link = link_for(cfg, cfg.ebn0_sigma_db[0], cfg.rrc_enabled);
    let n = cfg.n_tx[0];
    let mut points: Vec<Point> = cfg.n_hidden.iter().map(|h| Point::new(&[("n_hidden", h.to_string())])).collect();
    for r in 0..cfg.replicates {
        let seed = replicate_seed(cfg, r);
        let data = (|| -> Result<(FeatureBatch, FeatureBatch)> {
            let fleet = fleet_or_err(n, &link, seed)?;
            let trial = Trial {
                fleet: &fleet,
                link: link.clone(),
                iterations: cfg.n_train_iterations[0],
                eval_per_device: eval_iterations(cfg.n_eval_frames, n),
                seed,
            };
            Ok((trial.train_batch()?, trial.eval_batch(&RxProfile::ideal())))
        })();
        for (p, &h) in points.iter_mut().zip(&cfg.n_hidden) {
            run_point(p, seed, || {
                let (train, eval) = data.as_ref().map_err(clone_err)?;
                let (model, rep) = train_on(train, n, &train_params(cfg, h), seed)?;
                let (errors, frames) = score(&model, eval, None)?;
                Ok(DetectionRun {
                    errors,
                    frames,
                    rejected: eval.rejected,
                    epochs: rep.epochs,
                    train_loss: rep.loss,
                })
            });
        }
    }
    points
}

/// Error rate against the number of training iterations, each with a fresh
/// challenge, plus a fixed-challenge arm at the largest count.
fn fig6c(cfg: &ExperimentConfig) -> Vec<Point> {
    let link = link_for(cfg, cfg.ebn0_sigma_db[0], cfg.rrc_enabled);
    let fixed_link = LinkConfig {
        challenge: ChallengeMode::Fixed,
        ..link.clone()
    };
    let n = cfg.n_tx[0];
    let hp = train_params(cfg, cfg.n_hidden[0]);
    let max_iter = *cfg.n_train_iterations.iter().max().unwrap();
    let mut points: Vec<Point> = cfg
        .n_train_iterations
        .iter()
        .map(|i| Point::new(&[("challenge", "fresh".into()), ("n_train_iterations", i.to_string())]))
        .collect();
    points.push(Point::new(&[("challenge", "fixed".into()), ("n_train_iterations", max_iter.to_string())]));
    let iters: Vec<(usize, &LinkConfig)> = cfg
        .n_train_iterations
        .iter()
        .map(|&i| (i, &link))
        .chain([(max_iter, &fixed_link)])
        .collect();
    for r in 0..cfg.replicates {
        let seed = replicate_seed(cfg, r);
        let fleet = fleet_or_err(n, &link, seed);
        for (p, &(it, l)) in points.iter_mut().zip(&iters) {
            run_point(p, seed, || {
                let fleet = fleet.as_ref().map_err(clone_err)?;
                Trial {
                    fleet,
                    link: l.clone(),
                    iterations: it,
                    eval_per_device: eval_iterations(cfg.n_eval_frames, n),
                    seed,
                }
                .run(&hp, RxMode::Ideal)
            });
        }
    }
    points
}

/// Error rate against the spread of Eb/N0, with and without the receive
/// matched filter.
fn fig6d(cfg: &ExperimentConfig) -> Vec<Point> {
    let n = cfg.n_tx[0];
    let hp = train_params(cfg, cfg.n_hidden[0]);
    let arms: Vec<(f64, bool)> = cfg
        .ebn0_sigma_db
        .iter()
        .flat_map(|&s| [(s, true), (s, false)])
        .collect();
    let mut points: Vec<Point> = arms
        .iter()
        .map(|(s, rrc)| Point::new(&[("ebn0_sigma_db", s.to_string()), ("rrc", rrc.to_string())]))
        .collect();
    for r in 0..cfg.replicates {
        let seed = replicate_seed(cfg, r);
        for (p, &(sigma, rrc)) in points.iter_mut().zip(&arms) {
            run_point(p, seed, || {
                let link = link_for(cfg, sigma, rrc);
                let fleet = fleet_or_err(n, &link, seed)?;
                Trial {
                    fleet: &fleet,
                    link,
                    iterations: cfg.n_train_iterations[0],
                    eval_per_device: eval_iterations(cfg.n_eval_frames, n),
                    seed,
                }
                .run(&hp, RxMode::Ideal)
            });
        }
    }
    points
}

/// Receiver-signature compensation: the same trained model scored through
/// the ideal receiver, a sampled non-ideal one, and the compensated one.
fn fig10(cfg: &ExperimentConfig) -> Vec<Point> {
    let link = link_for(cfg, cfg.ebn0_sigma_db[0], cfg.rrc_enabled);
    let hp = train_params(cfg, cfg.n_hidden[0]);
    let modes = [RxMode::Ideal, RxMode::Nonideal, RxMode::Compensated];
    let mut points = Vec::new();
    for &n in &cfg.n_tx {
        for m in modes {
            points.push(Point::new(&[("n_tx", n.to_string()), ("rx_mode", m.name().into())]));
        }
    }
    for r in 0..cfg.replicates {
        let seed = replicate_seed(cfg, r);
        for (chunk, &n) in points.chunks_mut(modes.len()).zip(&cfg.n_tx) {
            let shared = (|| -> Result<_> {
                let fleet = fleet_or_err(n, &link, seed)?;
                let trial = Trial {
                    fleet: &fleet,
                    link: link.clone(),
                    iterations: cfg.n_train_iterations[0],
                    eval_per_device: eval_iterations(cfg.n_eval_frames, n),
                    seed,
                };
                let train = trial.train_batch()?;
                let (model, rep) = train_on(&train, n, &hp, seed)?;
                let rx = trial.receiver()?;
                let comp = trial.compensator(&rx)?;
                let ideal = trial.eval_batch(&RxProfile::ideal());
                let other = trial.eval_batch(&rx);
                Ok((model, rep, comp, ideal, other))
            })();
            for (p, m) in chunk.iter_mut().zip(modes) {
                run_point(p, seed, || {
                    let (model, rep, comp, ideal, other) = shared.as_ref().map_err(clone_err)?;
                    let (batch, c) = match m {
                        RxMode::Ideal => (ideal, None),
                        RxMode::Nonideal => (other, None),
                        RxMode::Compensated => (other, Some(comp)),
                    };
                    let (errors, frames) = score(model, batch, c)?;
                    Ok(DetectionRun {
                        errors,
                        frames,
                        rejected: batch.rejected,
                        epochs: rep.epochs,
                        train_loss: rep.loss,
                    })
                });
            }
        }
    }
    points
}

/// Errors are not `Clone`; shared failures are re-raised by kind and text.
fn clone_err(e: &Error) -> Error {
    match e {
        Error::InvalidParameter(s) => Error::InvalidParameter(s.clone()),
        Error::EstimationFailure(s) => Error::EstimationFailure(s.clone()),
        Error::InsufficientData(s) => Error::InsufficientData(s.clone()),
        Error::DimensionMismatch { expected, got } => Error::DimensionMismatch {
            expected: *expected,
            got: *got,
        },
        Error::EmptyClass(c) => Error::EmptyClass(*c),
        Error::ExcessiveRejection { rejected, total, limit } => Error::ExcessiveRejection {
            rejected: *rejected,
            total: *total,
            limit: *limit,
        },
        Error::Parse { context, message } => Error::Parse {
            context: context.clone(),
            message: message.clone(),
        },
        Error::MissingFile(p) => Error::MissingFile(p.clone()),
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), io.to_string())),
    }
}

const HISTOGRAM_DECADES: (i32, i32) = (0, 6);
const BINS_PER_DECADE: usize = 5;

/// Log-spaced histogram of intra and inter distances. The first bin collects
/// everything below 1 ppm.
fn distance_histogram(name: String, d: &PufDistances) -> Table {
    let (lo, hi) = HISTOGRAM_DECADES;
    let nb = (hi - lo) as usize * BINS_PER_DECADE;
    let edge = |i: usize| 10f64.powf(lo as f64 + i as f64 / BINS_PER_DECADE as f64);
    let bin = |v: f64| -> usize {
        if v < edge(0) {
            0
        } else {
            (((v.log10() - lo as f64) * BINS_PER_DECADE as f64).floor() as usize + 1).min(nb + 1)
        }
    };
    let mut intra = vec![0usize; nb + 2];
    let mut inter = vec![0usize; nb + 2];
    d.d_intra.iter().for_each(|&v| intra[bin(v)] += 1);
    d.d_inter.iter().for_each(|&v| inter[bin(v)] += 1);
    let mut t = Table::new(name, &["bin_low_ppm", "bin_high_ppm", "intra_count", "inter_count"]);
    for i in 0..nb + 2 {
        let low = if i == 0 { 0.0 } else { edge(i - 1) };
        let high = if i == nb + 1 { f64::INFINITY } else { edge(i) };
        t.push(vec![
            fmt_f(low),
            if high.is_finite() { fmt_f(high) } else { "inf".into() },
            intra[i].to_string(),
            inter[i].to_string(),
        ]);
    }
    t
}

fn fig6ef(cfg: &ExperimentConfig) -> Result<(Vec<PufDistances>, Vec<Table>)> {
    let link = link_for(cfg, cfg.ebn0_sigma_db[0], cfg.rrc_enabled);
    let n = cfg.n_tx[0];
    let mut summary = Table::new(
        "fig6ef_summary",
        &[
            "replicate",
            "seed",
            "n_tx",
            "evals_per_device",
            "identifiability",
            "median_d_intra_ppm",
            "median_d_inter_ppm",
            "worst_case_d_intra_ppm",
            "worst_case_d_inter_ppm",
            "status",
        ],
    );
    let mut all = Vec::new();
    let mut tables = Vec::new();
    for r in 0..cfg.replicates {
        let seed = replicate_seed(cfg, r);
        let res = fleet_or_err(n, &link, seed).and_then(|fleet| {
            let g = evaluate_geo_means(&fleet, cfg.evals_per_device, &link, seed)?;
            distances_from_geo(&g, seed)
        });
        let head = vec![r.to_string(), seed.to_string(), n.to_string(), cfg.evals_per_device.to_string()];
        match res {
            Ok(d) => {
                let mut row = head;
                row.extend([
                    fmt_f(d.identifiability),
                    fmt_f(d.median_intra()),
                    fmt_f(d.median_inter()),
                    fmt_f(d.worst_case_d_intra),
                    fmt_f(d.worst_case_d_inter),
                    "ok".into(),
                ]);
                summary.push(row);
                tables.push(distance_histogram(format!("fig6ef_histogram_replicate{r}"), &d));
                all.push(d);
            }
            Err(e) => {
                warn!("distance replicate {r} failed: {e}");
                let mut row = head;
                row.extend(std::iter::repeat_n(String::new(), 5));
                row.push(format!("failed:{}", e.kind()));
                summary.push(row);
            }
        }
    }
    tables.insert(0, summary);
    Ok((all, tables))
}

fn fig7(cfg: &ExperimentConfig) -> Result<((NistReport, NistReport), Vec<Table>)> {
    let link = link_for(cfg, cfg.ebn0_sigma_db[0], cfg.rrc_enabled);
    let seed = replicate_seed(cfg, 0);
    let bits = puf_records(cfg.nist_fleets, cfg.nist_devices, &link, seed)?;
    let nist_cfg = NistConfig {
        record_bits: cfg.nist_devices * PUF_BITS_PER_VALUE as usize,
        ..NistConfig::default()
    };
    let puf = nist_subset(&bits, &nist_cfg)?;
    let baseline = nist_subset(&prng_bits(bits.len(), seed), &nist_cfg)?;
    let mut t = Table::new(
        "fig7_summary",
        &[
            "test",
            "puf_pass_rate",
            "prng_pass_rate",
            "puf_passed",
            "puf_evaluated",
            "puf_skipped",
            "prng_passed",
            "prng_evaluated",
            "prng_skipped",
        ],
    );
    let rate = |r: Option<f64>| r.map(fmt_f).unwrap_or_else(|| "skipped".into());
    for (a, b) in puf.tests.iter().zip(&baseline.tests) {
        t.push(vec![
            a.name.to_string(),
            rate(a.pass_rate()),
            rate(b.pass_rate()),
            a.passed.to_string(),
            a.evaluated.to_string(),
            a.skipped.to_string(),
            b.passed.to_string(),
            b.evaluated.to_string(),
            b.skipped.to_string(),
        ]);
    }
    Ok(((puf, baseline), vec![t]))
}

/// Runs one experiment. Failures at individual sweep points are recorded in
/// the tables and do not stop the run.
pub fn run_experiment(kind: ExperimentKind, cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let cfg = cfg.resolved_for(kind);
    info!("running {}", kind.name());
    let mut result = ExperimentResult {
        kind,
        config: cfg.clone(),
        points: Vec::new(),
        distances: Vec::new(),
        nist: None,
        tables: Vec::new(),
    };
    match kind {
        ExperimentKind::Fig6ef => {
            let (d, t) = fig6ef(&cfg)?;
            result.distances = d;
            result.tables = t;
        }
        ExperimentKind::Fig7 => {
            let (r, t) = fig7(&cfg)?;
            result.nist = Some(r);
            result.tables = t;
        }
        _ => {
            result.points = match kind {
                ExperimentKind::Fig6a => fig6a(&cfg),
                ExperimentKind::Fig6b => fig6b(&cfg),
                ExperimentKind::Fig6c => fig6c(&cfg),
                ExperimentKind::Fig6d => fig6d(&cfg),
                ExperimentKind::Fig10 => fig10(&cfg),
                _ => unreachable!(),
            };
            result.tables.push(summary_table(kind, &result.points));
            result
                .tables
                .extend(result.points.iter().map(|p| point_table(kind, p)));
        }
    }
    Ok(result)
}
