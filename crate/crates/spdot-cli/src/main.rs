//! Command-line surface: dataset generation, transport runs, training,
//! evaluation, distance tables, and the gradient-verification suite.
//!
//! Exit codes: 0 success, 1 runtime failure (including failed verification),
//! 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use spdot::data::{
    diagonal_minimal_rows, distance_table, load_dataset, make_banded_dataset, sample_spd_gaussian,
    save_dataset, segment_means, BandedConfig, BandedMode, Domain, GaussianSpec, SpdDataset,
    SpdSample,
};
use spdot::gradcheck::{run_full_suite, GRAD_TOL};
use spdot::mat::Mat;
use spdot::net::{DotModel, DEFAULT_EPSILON};
use spdot::ot::{
    affine_recovery_trials, barycentric_map_lem, bimap_recovery_trials, corollary_identity_plan,
    cost_matrix_lem, solve_emd, CostKind, DiscreteMeasure,
};
use spdot::spd::{coords_to_sym, sym_coord_len};
use spdot::train::{train, BiMapParam, PseudoLabelSource, TrainConfig, TrainMode};

#[derive(Parser)]
#[command(name = "spdot", version, about = "Optimal transport and domain adaptation on SPD matrices")]
struct Cli {
    /// Seed for every randomized step (default 42).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress the summary JSON on stdout.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic source/target dataset pair.
    Gen(GenArgs),
    /// Solve the discrete transport problem between two datasets.
    Transport(TransportArgs),
    /// Train the SPD network with one of the adaptation objectives.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Compute the per-segment distance table between two datasets.
    Disttable(DisttableArgs),
    /// Run the finite-difference gradient verification suite.
    Gradcheck(GradcheckArgs),
}

#[derive(clap::Args)]
struct GenArgs {
    /// Matrix dimension.
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Number of samples per domain (per band, for banded datasets).
    #[arg(long, default_value_t = 50)]
    count: usize,
    /// Log-domain standard deviation of the sample cloud.
    #[arg(long, default_value_t = 0.4)]
    sigma: f64,
    /// Congruence shift defining the target domain, row-major `a,b;c,d`.
    #[arg(long)]
    shift_w: Option<String>,
    /// Number of classes (centers spread along the first symmetric direction).
    #[arg(long, default_value_t = 1)]
    classes: usize,
    /// Log-domain distance between adjacent class centers.
    #[arg(long, default_value_t = 2.0)]
    class_sep: f64,
    /// Build a banded dataset with this many segments instead of a plain pair.
    #[arg(long)]
    bands: Option<usize>,
    /// Log-domain radius of the band centers.
    #[arg(long, default_value_t = 3.0)]
    band_separation: f64,
    /// Log-domain magnitude of the source-to-target band shift.
    #[arg(long, default_value_t = 0.3)]
    band_shift: f64,
    /// Displace bands cyclically instead of within-band (negative control).
    #[arg(long)]
    adversarial: bool,
    /// Output directory for source.jsonl and target.jsonl.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum CostFlag {
    /// Squared log-Euclidean distances.
    Squared,
    /// Raw log-Euclidean distances.
    Unsquared,
}

#[derive(clap::Args)]
struct TransportArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Ground-cost convention.
    #[arg(long, value_enum, default_value_t = CostFlag::Squared)]
    cost: CostFlag,
    /// Also run the randomized affine/congruence recovery self-check.
    #[arg(long)]
    verify_affine: bool,
    /// Output directory for plan.csv and mapped.jsonl.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Objective: mda, cda, mda+cda, or deepjdot.
    #[arg(long, value_parser = TrainMode::parse)]
    mode: TrainMode,
    /// Flat key=value config file; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    alpha1: Option<f64>,
    #[arg(long)]
    alpha2: Option<f64>,
    #[arg(long)]
    alpha3: Option<f64>,
    #[arg(long)]
    jd_alpha1: Option<f64>,
    #[arg(long)]
    jd_alpha2: Option<f64>,
    /// Epochs between pseudo-label refreshes.
    #[arg(long)]
    refresh: Option<usize>,
    /// Bi-Map parameterization: stiefel or free.
    #[arg(long, value_parser = BiMapParam::parse)]
    bimap: Option<BiMapParam>,
    /// Pseudo-label source: mdm or network.
    #[arg(long, value_parser = PseudoLabelSource::parse)]
    pseudo: Option<PseudoLabelSource>,
    /// Bi-Map output dimension (defaults to the input dimension).
    #[arg(long)]
    dout: Option<usize>,
    /// Rectification threshold.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Weight initialization: identity or random.
    #[arg(long, value_parser = parse_init)]
    init: Option<InitKind>,
    /// Output directory for model.bin, history.csv, config.txt.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum InitKind {
    Identity,
    Random,
}

fn parse_init(text: &str) -> Result<InitKind, String> {
    match text {
        "identity" => Ok(InitKind::Identity),
        "random" => Ok(InitKind::Random),
        other => Err(format!("unknown init {other:?} (expected identity or random)")),
    }
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(clap::Args)]
struct DisttableArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct GradcheckArgs {
    /// Number of random seeds to sweep.
    #[arg(long, default_value_t = 50)]
    seeds: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let seed = cli.seed.unwrap_or(42);
    let quiet = cli.quiet;
    let outcome = match cli.command {
        Command::Gen(args) => cmd_gen(args, seed, quiet),
        Command::Transport(args) => cmd_transport(args, seed, quiet),
        Command::Train(args) => cmd_train(args, cli.seed, quiet),
        Command::Eval(args) => cmd_eval(args, quiet),
        Command::Disttable(args) => cmd_disttable(args, quiet),
        Command::Gradcheck(args) => cmd_gradcheck(args, quiet),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

type CmdResult = Result<ExitCode, Box<dyn std::error::Error>>;

fn emit(quiet: bool, value: &serde_json::Value) {
    if !quiet {
        println!("{value}");
    }
}

fn cmd_gen(args: GenArgs, seed: u64, quiet: bool) -> CmdResult {
    std::fs::create_dir_all(&args.out)?;
    let source_path = args.out.join("source.jsonl");
    let target_path = args.out.join("target.jsonl");

    let (source, target) = if let Some(bands) = args.bands {
        let cfg = BandedConfig {
            dim: args.dim,
            num_bands: bands,
            per_band_count: args.count,
            sigma: args.sigma,
            band_separation: args.band_separation,
            within_band_shift: args.band_shift,
            mode: if args.adversarial { BandedMode::CrossBand } else { BandedMode::WithinBand },
            seed,
        };
        make_banded_dataset(&cfg)?
    } else {
        generate_pair(&args, seed)?
    };

    save_dataset(&source_path, &source)?;
    save_dataset(&target_path, &target)?;
    emit(
        quiet,
        &json!({
            "source": source_path,
            "target": target_path,
            "dim": source.dim(),
            "count_source": source.len(),
            "count_target": target.len(),
            "classes": source.num_classes(),
            "segments": source.num_segments(),
            "seed": seed,
        }),
    );
    Ok(ExitCode::SUCCESS)
}

/// A labeled Gaussian cloud (class centers spaced along the first symmetric
/// direction) and its congruence-shifted copy.
fn generate_pair(
    args: &GenArgs,
    seed: u64,
) -> Result<(SpdDataset, SpdDataset), Box<dyn std::error::Error>> {
    if args.classes == 0 || args.count < args.classes {
        return Err(format!(
            "need at least one sample per class ({} samples, {} classes)",
            args.count, args.classes
        )
        .into());
    }
    let shift = match &args.shift_w {
        Some(text) => {
            let w = Mat::parse(text)?;
            if w.rows() != args.dim || w.cols() != args.dim {
                return Err(format!(
                    "shift matrix is {}x{}, expected {}x{}",
                    w.rows(),
                    w.cols(),
                    args.dim,
                    args.dim
                )
                .into());
            }
            Some(w)
        }
        None => None,
    };

    let coords = sym_coord_len(args.dim);
    let mut source_samples = Vec::new();
    let mut target_samples = Vec::new();
    for class in 0..args.classes {
        let count = args.count / args.classes + usize::from(class < args.count % args.classes);
        let offset = args.class_sep * (class as f64 - (args.classes as f64 - 1.0) / 2.0);
        let mut center_coords = vec![0.0; coords];
        center_coords[0] = offset;
        let center = coords_to_sym(args.dim, &center_coords)?.exp()?;
        let spec = GaussianSpec::new(center, args.sigma, count, seed.wrapping_add(class as u64))?;
        let drawn = sample_spd_gaussian(&spec);
        let shifted = match &shift {
            Some(w) => spdot::data::apply_bimap_shift(w, &drawn)?,
            None => drawn.clone(),
        };
        for s in drawn {
            source_samples.push(SpdSample {
                matrix: s,
                label: class,
                domain: Domain::Source,
                segment: 0,
            });
        }
        for s in shifted {
            target_samples.push(SpdSample {
                matrix: s,
                label: class,
                domain: Domain::Target,
                segment: 0,
            });
        }
    }
    Ok((
        SpdDataset::new(source_samples, args.dim, args.classes, 1)?,
        SpdDataset::new(target_samples, args.dim, args.classes, 1)?,
    ))
}

fn write_csv(path: &Path, mat: &Mat) -> std::io::Result<()> {
    let mut out = String::new();
    for i in 0..mat.rows() {
        let row: Vec<String> = (0..mat.cols()).map(|j| mat[(i, j)].to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)
}

/// Samples of one plottable cloud: (label, segment, matrix) triples.
type Cloud = Vec<(usize, usize, spdot::SpdMatrix)>;

/// Plot-ready export: one row per sample with its eigenvalue pair/tuple and
/// its isometric log coordinates, tagged by cloud.
fn write_points_csv(path: &Path, dim: usize, clouds: &[(&str, Cloud)]) -> std::io::Result<()> {
    let coords = sym_coord_len(dim);
    let mut out = String::from("cloud,index,label,segment");
    for k in 0..dim {
        out.push_str(&format!(",eig{}", k + 1));
    }
    for k in 0..coords {
        out.push_str(&format!(",logc{}", k + 1));
    }
    out.push('\n');
    for (name, samples) in clouds {
        for (index, (label, segment, matrix)) in samples.iter().enumerate() {
            out.push_str(&format!("{name},{index},{label},{segment}"));
            for eig in matrix.eigenvalues() {
                out.push_str(&format!(",{eig}"));
            }
            for c in spdot::spd::sym_to_coords(&matrix.log()) {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
    }
    std::fs::write(path, out)
}

fn dataset_cloud(data: &SpdDataset) -> Cloud {
    data.samples()
        .iter()
        .map(|s| (s.label, s.segment, s.matrix.clone()))
        .collect()
}

fn cmd_transport(args: TransportArgs, seed: u64, quiet: bool) -> CmdResult {
    std::fs::create_dir_all(&args.out)?;
    let source = load_dataset(&args.source)?;
    let target = load_dataset(&args.target)?;
    let sources = source.matrices();
    let targets = target.matrices();
    let kind = match args.cost {
        CostFlag::Squared => CostKind::Squared,
        CostFlag::Unsquared => CostKind::Unsquared,
    };
    let cost = cost_matrix_lem(&sources, &targets, kind)?;
    let mu = DiscreteMeasure::uniform(sources.len());
    let nu = DiscreteMeasure::uniform(targets.len());
    let plan = solve_emd(&mu, &nu, &cost)?;

    let plan_path = args.out.join("plan.csv");
    write_csv(&plan_path, plan.mat())?;

    // New coordinates for the target samples: plan-weighted log-means of the
    // sources.
    let mapped = barycentric_map_lem(&plan, &sources)?;
    let mapped_samples: Vec<SpdSample> = mapped
        .into_iter()
        .zip(target.samples())
        .map(|(matrix, orig)| SpdSample {
            matrix,
            label: orig.label,
            domain: Domain::Target,
            segment: orig.segment,
        })
        .collect();
    let mapped_data = SpdDataset::new(
        mapped_samples,
        target.dim(),
        target.num_classes(),
        target.num_segments(),
    )?;
    let mapped_path = args.out.join("mapped.jsonl");
    save_dataset(&mapped_path, &mapped_data)?;

    // Point clouds for external plotting: log coordinates and eigenvalues of
    // the source, target, and mapped samples.
    let points_path = args.out.join("points.csv");
    write_points_csv(
        &points_path,
        source.dim(),
        &[
            ("source", dataset_cloud(&source)),
            ("target", dataset_cloud(&target)),
            ("mapped", dataset_cloud(&mapped_data)),
        ],
    )?;

    let row_err = plan
        .row_sums()
        .iter()
        .zip(mu.weights())
        .map(|(h, w)| (h - w).abs())
        .fold(0.0f64, f64::max);
    let col_err = plan
        .col_sums()
        .iter()
        .zip(nu.weights())
        .map(|(h, w)| (h - w).abs())
        .fold(0.0f64, f64::max);

    // Numeric facts, shared by the stdout summary and the on-disk one. The
    // stdout version additionally carries the artifact paths.
    let mut summary = json!({
        "objective": plan.objective(&cost),
        "rows": plan.rows(),
        "cols": plan.cols(),
        "max_row_marginal_error": row_err,
        "max_col_marginal_error": col_err,
        "identity_coupling": plan.is_identity_coupling(),
        "cost": match kind { CostKind::Squared => "squared", CostKind::Unsquared => "unsquared" },
    });

    let mut failed = false;
    if args.verify_affine {
        let affine = affine_recovery_trials(20, 3, 8, seed)?;
        let bimap = bimap_recovery_trials(20, 2, 6, seed)?;
        failed = !(affine.all_pass && bimap.all_pass);
        summary["verify_affine"] = json!({
            "affine": {
                "trials": affine.trials,
                "worst_plan_deviation": affine.worst_plan_deviation,
                "worst_map_error": affine.worst_map_error,
                "pass": affine.all_pass,
            },
            "bimap": {
                "trials": bimap.trials,
                "worst_plan_deviation": bimap.worst_plan_deviation,
                "worst_map_error": bimap.worst_map_error,
                "pass": bimap.all_pass,
            },
            "pass": !failed,
        });
    }
    // The summary (objective value included) also lands next to the plan,
    // path-free so that equal runs into different directories agree byte for
    // byte.
    std::fs::write(args.out.join("summary.json"), format!("{summary}\n"))?;
    summary["plan"] = json!(plan_path);
    summary["mapped"] = json!(mapped_path);
    summary["points"] = json!(points_path);
    emit(quiet, &summary);
    Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn cmd_train(args: TrainArgs, cli_seed: Option<u64>, quiet: bool) -> CmdResult {
    std::fs::create_dir_all(&args.out)?;
    let source = load_dataset(&args.source)?;
    let target = load_dataset(&args.target)?;

    let mut cfg = match &args.config {
        Some(path) => TrainConfig::from_kv(&std::fs::read_to_string(path)?)?,
        None => TrainConfig::default(),
    };
    cfg.mode = args.mode;
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.alpha1 {
        cfg.weights.alpha1 = v;
    }
    if let Some(v) = args.alpha2 {
        cfg.weights.alpha2 = v;
    }
    if let Some(v) = args.alpha3 {
        cfg.weights.alpha3 = v;
    }
    if let Some(v) = args.jd_alpha1 {
        cfg.weights.jd_alpha1 = v;
    }
    if let Some(v) = args.jd_alpha2 {
        cfg.weights.jd_alpha2 = v;
    }
    if let Some(v) = args.refresh {
        cfg.refresh_period = v;
    }
    if let Some(v) = args.bimap {
        cfg.bimap_param = v;
    }
    if let Some(v) = args.pseudo {
        cfg.pseudo_labels = v;
    }
    if let Some(seed) = cli_seed {
        cfg.seed = seed;
    }
    cfg.validate()?;

    let dim = source.dim();
    let d_out = args.dout.unwrap_or(dim);
    let epsilon = args.epsilon.unwrap_or(DEFAULT_EPSILON);
    let init = args
        .init
        .unwrap_or(if d_out == dim { InitKind::Identity } else { InitKind::Random });
    let model = match init {
        InitKind::Identity => {
            if d_out != dim {
                return Err(
                    format!("identity init requires dout == dim ({d_out} vs {dim})").into()
                );
            }
            DotModel::with_identity_bimap(dim, source.num_classes(), epsilon)?
        }
        InitKind::Random => {
            DotModel::seeded_random(dim, d_out, source.num_classes(), epsilon, cfg.seed)?
        }
    };

    let labeled = source.labeled();
    let target_mats = target.matrices();
    let target_labels = target.labels();
    let (trained, history) = train(&model, &labeled, &target_mats, Some(&target_labels), &cfg)?;

    let model_path = args.out.join("model.bin");
    trained.save(&model_path)?;
    let history_path = args.out.join("history.csv");
    std::fs::write(&history_path, history.to_csv())?;
    let config_path = args.out.join("config.txt");
    std::fs::write(&config_path, cfg.to_kv())?;

    // Embedded point clouds under the trained model, for external plotting.
    let embed_cloud = |data: &SpdDataset| -> Result<Cloud, Box<dyn std::error::Error>> {
        data.samples()
            .iter()
            .map(|s| {
                let (_, cache) = trained.forward(&s.matrix)?;
                Ok((s.label, s.segment, cache.embedding))
            })
            .collect()
    };
    let points_path = args.out.join("points.csv");
    write_points_csv(
        &points_path,
        trained.d_out(),
        &[
            ("embedded_source", embed_cloud(&source)?),
            ("embedded_target", embed_cloud(&target)?),
        ],
    )?;

    let last = history.epochs.last();
    emit(
        quiet,
        &json!({
            "model": model_path,
            "history": history_path,
            "config": config_path,
            "points": points_path,
            "epochs": history.epochs.len(),
            "final": last.map(|e| json!({
                "ce": e.ce,
                "mda": e.mda,
                "cda": e.cda,
                "total": e.total,
                "source_acc": e.source_acc,
                "target_acc": e.target_acc,
            })),
        }),
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: EvalArgs, quiet: bool) -> CmdResult {
    let model = DotModel::load(&args.model)?;
    let data = load_dataset(&args.data)?;
    let mut per_class: Vec<(usize, usize)> = vec![(0, 0); data.num_classes()];
    let mut correct = 0usize;
    for s in data.samples() {
        let predicted = model.predict(&s.matrix)?;
        per_class[s.label].0 += 1;
        if predicted == s.label {
            per_class[s.label].1 += 1;
            correct += 1;
        }
    }
    let total = data.len();
    emit(
        quiet,
        &json!({
            "accuracy": if total > 0 { correct as f64 / total as f64 } else { f64::NAN },
            "correct": correct,
            "total": total,
            "per_class": per_class
                .iter()
                .enumerate()
                .map(|(label, (count, correct))| json!({
                    "label": label,
                    "count": count,
                    "correct": correct,
                }))
                .collect::<Vec<_>>(),
        }),
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_disttable(args: DisttableArgs, quiet: bool) -> CmdResult {
    let source = load_dataset(&args.source)?;
    let target = load_dataset(&args.target)?;
    let table = distance_table(&source, &target)?;
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    write_csv(&args.out, &table)?;
    let rows = diagonal_minimal_rows(&table);
    let identity = corollary_identity_plan(&segment_means(&source)?, &segment_means(&target)?)?;
    emit(
        quiet,
        &json!({
            "table": args.out,
            "rows": table.rows(),
            "diagonal_minimal": rows,
            "all_diagonal_minimal": rows.iter().all(|&b| b),
            "band_mean_identity_plan": identity,
        }),
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: GradcheckArgs, quiet: bool) -> CmdResult {
    let report = run_full_suite(args.seeds)?;
    let pass = report.pass();
    emit(
        quiet,
        &json!({
            "cases": report.cases.len(),
            "max_rel_error": report.max_rel_error(),
            "tolerance": GRAD_TOL,
            "worst_case": report.worst_case().map(|c| c.name.clone()),
            "pass": pass,
        }),
    );
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
