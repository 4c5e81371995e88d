use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use modgap::bench::{precision_replay, streaming_throughput};
use modgap::diagnostics::{diagnose, sample_complexity_curve, CurveData, DiagnoseOptions};
use modgap::error::{Error, ErrorClass};
use modgap::frame::{build_frame, DEFAULT_ENERGY, decompose_gap, gamma_noise_angle, ReferenceFrame};
use modgap::io::{self, AnyEmbeddings, EmbReader, EmbeddingSet, Format, Payload, Provenance, StatsArtifact};
use modgap::linalg::norm;
use modgap::moments::{MomentAccumulator, ModalityStats, DEFAULT_SHRINK};
use modgap::oracle::{gap_necessity_ablation, run_toy_training, SimConfig};
use modgap::realign::{
    anchor_only_batch, blockwise_batch, DEFAULT_BLOCK_FLOOR, DEFAULT_C3_SIGMA, DEFAULT_EPS, c3_batch, estimate_blockwise, estimate_realign, substitution_operator, AlignmentStats,
};
use modgap::spectral::{condition_number, sym_eig, DEFAULT_EIG_FLOOR};
use modgap::verify::{run_suite, Suite};

const THREADS_ENV: &str = "MODGAP_THREADS";
/// Rows per shard when accumulating moments; fixed so results do not
/// depend on the thread count.
const SHARD_ROWS: usize = 16_384;

#[derive(Parser, Debug)]
#[command(name = "modgap", version, about = "Modality-gap geometry and training-free embedding alignment")]
struct Cli {
    /// Worker threads (default: $MODGAP_THREADS, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Streaming mean / trace / covariance of one embedding file.
    Stats(StatsArgs),
    /// Reference frame (U, V) from two modalities' covariances.
    Frame(FrameArgs),
    /// Mean gap split into β (in U) and γ (in V) plus residual spectra.
    Decompose(DecomposeArgs),
    /// Fit and/or apply an alignment operator.
    Align(AlignArgs),
    /// Gap, cosine-distribution, kNN-mixing and spectrum diagnostics.
    Diagnose(DiagnoseArgs),
    /// Toy dual-encoder training with geometric trace.
    Simulate(SimulateArgs),
    /// Run self-check suites.
    Verify(VerifyArgs),
    /// Held-out gap after ReAlign versus calibration size.
    SampleCurve(CurveArgs),
    /// Streaming throughput, state size and accumulator precision.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Skip the d×d scatter (mean and trace only).
    #[arg(long)]
    no_cov: bool,
    /// Shrink the covariance toward (tr/d)·I; bare `--shrink` uses 0.05.
    #[arg(long, num_args = 0..=1)]
    shrink: Option<Option<f64>>,
}

#[derive(Args, Debug)]
struct FrameArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Spectral energy kept in U.
    #[arg(long, default_value_t = DEFAULT_ENERGY)]
    energy: f64,
    /// Training step the frame is frozen at (recorded only).
    #[arg(long)]
    step: Option<u64>,
}

#[derive(Args, Debug)]
struct DecomposeArgs {
    /// Paired embeddings, row i of --a matched with row i of --b.
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    frame: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    Realign,
    Blockwise,
    C3,
    AnchorOnly,
}

#[derive(Args, Debug)]
struct AlignArgs {
    #[arg(long, value_enum)]
    method: Method,
    /// Previously fitted statistics artifact.
    #[arg(long, conflicts_with_all = ["calib_src", "calib_tgt"])]
    stats: Option<PathBuf>,
    /// Source-modality calibration embeddings (fit mode).
    #[arg(long, requires = "calib_tgt")]
    calib_src: Option<PathBuf>,
    /// Target-modality calibration embeddings (fit mode).
    #[arg(long, requires = "calib_src")]
    calib_tgt: Option<PathBuf>,
    /// Where to store fitted statistics.
    #[arg(long)]
    save_stats: Option<PathBuf>,
    /// Frame artifact (blockwise fit).
    #[arg(long)]
    frame: Option<PathBuf>,
    /// Energy threshold when blockwise fits its own frame.
    #[arg(long, default_value_t = DEFAULT_ENERGY)]
    energy: f64,
    /// Relative eigenvalue floor for blockwise whitening.
    #[arg(long, default_value_t = DEFAULT_BLOCK_FLOOR)]
    eig_floor: f64,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
    /// C³ noise scale.
    #[arg(long, default_value_t = DEFAULT_C3_SIGMA)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long, requires = "input")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DiagnoseArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Directory for CSV series (histograms, spectra).
    #[arg(long)]
    plots_dir: Option<PathBuf>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    no_smoothing: bool,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    mixing_sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// TOML config; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    trace: PathBuf,
    /// Overrides the config's data seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also run the gap-necessity ablation and write its JSON report here.
    #[arg(long)]
    ablation: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    ablation_seeds: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SuiteArg {
    Gradients,
    Span,
    Bounds,
    Coupling,
    All,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value = "all")]
    suite: SuiteArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CurveArgs {
    #[arg(long)]
    calib_src: PathBuf,
    #[arg(long)]
    calib_tgt: PathBuf,
    #[arg(long)]
    heldout_src: PathBuf,
    #[arg(long)]
    heldout_tgt: PathBuf,
    /// Comma-separated calibration sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "100000,500000,1000000")]
    sizes: Vec<u64>,
    #[arg(long, default_value_t = 64)]
    dims: usize,
    /// Rows replayed for the f32/f64 precision comparison (0 skips it).
    #[arg(long, default_value_t = 500_000)]
    precision_n: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Error carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Failure { code: 1, message: msg.into() }
    }

    fn numerical(msg: impl Into<String>) -> Self {
        Failure { code: 3, message: msg.into() }
    }

    fn at(stage: &'static str) -> impl Fn(Error) -> Failure {
        move |e| {
            let code = match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numerical => 3,
            };
            Failure {
                code,
                message: format!("{stage}: {e}"),
            }
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli, argv: &[String]) -> CliResult<()> {
    let threads = match cli.threads {
        Some(t) => Some(t),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.trim().parse().map_err(|_| Failure::usage(format!("{THREADS_ENV}={v} is not a thread count")))?),
            Err(_) => None,
        },
    };
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::usage(format!("thread pool: {e}")))?;
    }
    let mut prov = Prov::new(argv);
    match cli.command {
        Command::Stats(a) => cmd_stats(a, &mut prov),
        Command::Frame(a) => cmd_frame(a, &mut prov),
        Command::Decompose(a) => cmd_decompose(a, &mut prov),
        Command::Align(a) => cmd_align(a, &mut prov),
        Command::Diagnose(a) => cmd_diagnose(a, &mut prov),
        Command::Simulate(a) => cmd_simulate(a, &mut prov),
        Command::Verify(a) => cmd_verify(a, &mut prov),
        Command::SampleCurve(a) => cmd_curve(a, &mut prov),
        Command::Bench(a) => cmd_bench(a, &mut prov),
    }
}

/// Provenance collected while a command runs.
struct Prov {
    inner: Provenance,
}

impl Prov {
    fn new(argv: &[String]) -> Self {
        let mut inner = Provenance {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            ..Provenance::default()
        };
        inner.parameters.insert("argv".into(), json!(argv));
        Prov { inner }
    }

    fn digest(&mut self, path: &Path) -> CliResult<()> {
        let f = File::open(path).map_err(|e| Failure::at("digest")(Error::io(path, e)))?;
        let mut r = BufReader::with_capacity(1 << 20, f);
        let mut h = Sha256::new();
        let mut buf = vec![0u8; 1 << 20];
        loop {
            let n = r.read(&mut buf).map_err(|e| Failure::at("digest")(Error::io(path, e)))?;
            if n == 0 {
                break;
            }
            h.update(&buf[..n]);
        }
        self.inner.source_digests.insert(path.display().to_string(), hex::encode(h.finalize()));
        Ok(())
    }

    fn count(&mut self, label: &str, n: u64) {
        self.inner.sample_counts.insert(label.into(), n);
    }

    fn param(&mut self, key: &str, value: impl Serialize) {
        self.inner.parameters.insert(key.into(), json!(value));
    }
}

fn load(path: &Path, prov: &mut Prov, label: &str) -> CliResult<AnyEmbeddings> {
    prov.digest(path)?;
    let set = io::read_embeddings(path, Format::from_path(path)).map_err(Failure::at("read"))?;
    prov.count(label, set.rows() as u64);
    Ok(set)
}

fn load_f64(path: &Path, prov: &mut Prov, label: &str) -> CliResult<EmbeddingSet<f64>> {
    Ok(load(path, prov, label)?.into_f64())
}

fn load_artifact(path: &Path, prov: &mut Prov) -> CliResult<StatsArtifact> {
    prov.digest(path)?;
    io::load_artifact(path).map_err(Failure::at("load artifact"))
}

fn save(payload: Payload, prov: &Prov, path: &Path) -> CliResult<()> {
    let art = StatsArtifact::new(payload, prov.inner.clone());
    io::save_artifact(&art, path).map_err(Failure::at("write"))
}

fn write_json(path: &Path, prov: &Prov, report: impl Serialize) -> CliResult<()> {
    let doc = json!({ "provenance": prov.inner, "report": report });
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| Failure::numerical(format!("serialize report: {e}")))?;
    text.push('\n');
    io::write_atomic(path, text.as_bytes()).map_err(Failure::at("write"))
}

fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Failure::numerical(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::numerical(format!("csv: {e}")))?;
    io::write_atomic(path, &bytes).map_err(Failure::at("write"))
}

/// CSV series get a `<name>.provenance.json` sidecar.
fn write_csv_with_provenance<R: Serialize>(path: &Path, prov: &Prov, rows: impl IntoIterator<Item = R>) -> CliResult<()> {
    write_csv(path, rows)?;
    let mut side = path.as_os_str().to_owned();
    side.push(".provenance.json");
    let mut text = serde_json::to_string_pretty(&prov.inner).map_err(|e| Failure::numerical(e.to_string()))?;
    text.push('\n');
    io::write_atomic(Path::new(&side), text.as_bytes()).map_err(Failure::at("write"))
}

fn write_like(set: EmbeddingSet<f64>, like: &AnyEmbeddings, path: &Path) -> CliResult<()> {
    let fmt = Format::from_path(path);
    let out = match like {
        AnyEmbeddings::F32(_) => AnyEmbeddings::F32(set.cast()),
        AnyEmbeddings::F64(_) => AnyEmbeddings::F64(set),
    };
    io::write_any(&out, path, fmt).map_err(Failure::at("write"))
}

/// Shard-parallel accumulation with a fixed shard layout and in-order merge.
fn accumulate_set<T: modgap::scalar::Real>(set: &EmbeddingSet<T>, track_cov: bool) -> CliResult<MomentAccumulator> {
    let dims = set.dims();
    let shards: Vec<(usize, usize)> = (0..set.rows()).step_by(SHARD_ROWS).map(|s| (s, (s + SHARD_ROWS).min(set.rows()))).collect();
    let parts: Vec<_> = shards
        .par_iter()
        .map(|&(s, e)| {
            let mut acc = MomentAccumulator::<f64>::new(dims, track_cov);
            acc.accumulate(&set.slice_rows(s, e)).map_err(|err| match err {
                Error::NonFinite { row, col } => Error::NonFinite { row: row + s, col },
                other => other,
            })?;
            Ok(acc)
        })
        .collect::<modgap::error::Result<_>>()
        .map_err(Failure::at("accumulate"))?;
    let mut total = MomentAccumulator::<f64>::new(dims, track_cov);
    for p in &parts {
        total = total.merge(p).map_err(Failure::at("accumulate"))?;
    }
    Ok(total)
}

fn stats_of_path(path: &Path, track_cov: bool, prov: &mut Prov, label: &str) -> CliResult<ModalityStats<f64>> {
    prov.digest(path)?;
    let acc = match Format::from_path(path) {
        Format::Csv => {
            let set = io::read_embeddings(path, Format::Csv).map_err(Failure::at("read"))?.into_f64();
            accumulate_set(&set, track_cov)?
        }
        Format::Emb1 => {
            // stream: never hold more than one batch of rows
            let mut reader = EmbReader::open(path).map_err(Failure::at("read"))?;
            let mut total = MomentAccumulator::<f64>::new(reader.dims(), track_cov);
            let mut offset = 0usize;
            while let Some(batch) = reader.next_batch(SHARD_ROWS * 16).map_err(Failure::at("read"))? {
                let part = match &batch {
                    AnyEmbeddings::F32(s) => accumulate_set(s, track_cov),
                    AnyEmbeddings::F64(s) => accumulate_set(s, track_cov),
                }
                .map_err(|f| Failure {
                    message: shift_row(&f.message, offset),
                    ..f
                })?;
                offset += batch.rows();
                total = total.merge(&part).map_err(Failure::at("accumulate"))?;
            }
            total
        }
    };
    prov.count(label, acc.n());
    acc.finalize().map_err(Failure::at("finalize"))
}

fn shift_row(msg: &str, offset: usize) -> String {
    if offset == 0 {
        msg.to_string()
    } else {
        format!("{msg} (batch starting at row {offset})")
    }
}

fn cmd_stats(a: StatsArgs, prov: &mut Prov) -> CliResult<()> {
    let mut stats = stats_of_path(&a.input, !a.no_cov, prov, "input")?;
    if let Some(l) = a.shrink.map(|v| v.unwrap_or(DEFAULT_SHRINK)) {
        if a.no_cov {
            return Err(Failure::usage("--shrink needs the covariance (drop --no-cov)"));
        }
        stats = stats.with_shrinkage(l).map_err(Failure::at("shrink"))?;
        prov.param("shrink", l);
    }
    prov.param("track_covariance", !a.no_cov);
    save(Payload::ModalityStats(stats), prov, &a.out)
}

fn covariance_of(path: &Path, prov: &mut Prov, label: &str) -> CliResult<ModalityStats<f64>> {
    stats_of_path(path, true, prov, label)
}

fn cmd_frame(a: FrameArgs, prov: &mut Prov) -> CliResult<()> {
    let sa = covariance_of(&a.a, prov, "a")?;
    let sb = covariance_of(&a.b, prov, "b")?;
    let (ca, cb) = (sa.covariance.expect("tracked"), sb.covariance.expect("tracked"));
    let mut frame = build_frame(&ca, &cb, a.energy).map_err(Failure::at("frame"))?;
    frame.created_at_step = a.step;
    prov.param("energy", a.energy);
    save(Payload::ReferenceFrame(frame), prov, &a.out)
}

fn eigenvalues_desc(m: &modgap::linalg::Matrix<f64>) -> CliResult<Vec<f64>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let mut ev = sym_eig(m).map_err(Failure::at("eigen"))?.eigenvalues;
    ev.sort_by(|x, y| y.total_cmp(x));
    Ok(ev)
}

fn cmd_decompose(a: DecomposeArgs, prov: &mut Prov) -> CliResult<()> {
    let frame = load_artifact(&a.frame, prov)?.into_frame().map_err(Failure::at("load frame"))?;
    let x = load_f64(&a.a, prov, "a")?;
    let y = load_f64(&a.b, prov, "b")?;
    let gap = decompose_gap(&x, &y, &frame).map_err(Failure::at("decompose"))?;
    let su = eigenvalues_desc(&gap.sigma_u())?;
    let sv = eigenvalues_desc(&gap.sigma_v())?;
    let floor = DEFAULT_EIG_FLOOR;
    let angle = if frame.rank() < frame.dims() {
        Some(gamma_noise_angle(&gap.gamma, &gap.sigma_v()).map_err(Failure::at("gamma_noise_angle"))?)
    } else {
        None
    };
    let report = json!({
        "rank": frame.rank(),
        "dims": frame.dims(),
        "mean_gap_norm": norm(&gap.mean_gap),
        "beta_norm": norm(&gap.beta),
        "gamma_norm": norm(&gap.gamma),
        "beta": gap.beta,
        "gamma": gap.gamma,
        "sigma_u_eigenvalues": su,
        "sigma_v_eigenvalues": sv,
        "kappa_u": condition_number(&su, floor).ok(),
        "kappa_v": condition_number(&sv, floor).ok(),
        "gamma_noise_angle": angle,
    });
    write_json(&a.report, prov, report)
}

fn check_dims(context: &'static str, expected: usize, actual: usize) -> CliResult<()> {
    if expected != actual {
        return Err(Failure::at("align")(Error::dims(context, expected, actual)));
    }
    Ok(())
}

fn cmd_align(a: AlignArgs, prov: &mut Prov) -> CliResult<()> {
    prov.param("method", format!("{:?}", a.method).to_lowercase());
    // statistics: either fitted here or loaded
    let payload = match (&a.stats, &a.calib_src, &a.calib_tgt) {
        (Some(p), _, _) => load_artifact(p, prov)?.payload,
        (None, Some(cs), Some(ct)) => {
            let src = load_f64(cs, prov, "calib_src")?;
            let tgt = load_f64(ct, prov, "calib_tgt")?;
            check_dims("align calibration dims", src.dims(), tgt.dims())?;
            let payload = fit(&a, &src, &tgt, prov)?;
            if let Some(path) = &a.save_stats {
                save(payload.clone(), prov, path)?;
            }
            payload
        }
        _ => return Err(Failure::usage("align needs --stats or both --calib-src and --calib-tgt")),
    };
    let Some(input) = &a.input else {
        if a.save_stats.is_none() {
            return Err(Failure::usage("nothing to do: give --in/--out, --save-stats, or both"));
        }
        return Ok(());
    };
    let out = a.out.as_ref().ok_or_else(|| Failure::usage("--in needs --out"))?;
    let raw = load(input, prov, "input")?;
    let set = raw.clone().into_f64();
    let aligned = match (a.method, payload) {
        (Method::Realign, Payload::AlignmentStats(st)) => {
            check_dims("align input dims", st.dims, set.dims())?;
            substitution_operator(&set, &st)
        }
        (Method::AnchorOnly, Payload::AlignmentStats(st)) => {
            check_dims("align input dims", st.dims, set.dims())?;
            anchor_only_batch(&set, &st.mu_src, &st.mu_tgt)
        }
        (Method::C3, Payload::AlignmentStats(st)) => {
            check_dims("align input dims", st.dims, set.dims())?;
            prov.param("sigma", a.sigma);
            prov.param("seed", a.seed);
            c3_batch(&set, &st.mu_src, &st.mu_tgt, a.sigma, a.seed)
        }
        (Method::Blockwise, Payload::BlockwiseStats(st)) => {
            check_dims("align input dims", st.dims(), set.dims())?;
            if st.floor_triggered() {
                log::warn!("blockwise: eigenvalue floor raised {} U and {} V eigenvalues", st.floored_u, st.floored_v);
            }
            blockwise_batch(&set, &st)
        }
        (m, p) => {
            let name = m.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
            return Err(Failure::usage(format!("--method {name} cannot be applied with stats of kind {}", p.kind())));
        }
    }
    .map_err(Failure::at("align"))?;
    write_like(aligned, &raw, out)
}

fn fit(a: &AlignArgs, src: &EmbeddingSet<f64>, tgt: &EmbeddingSet<f64>, prov: &mut Prov) -> CliResult<Payload> {
    match a.method {
        Method::Blockwise => {
            let frame: ReferenceFrame<f64> = match &a.frame {
                Some(p) => load_artifact(p, prov)?.into_frame().map_err(Failure::at("load frame"))?,
                None => {
                    let cs = accumulate_set(src, true)?.finalize().map_err(Failure::at("fit"))?;
                    let ct = accumulate_set(tgt, true)?.finalize().map_err(Failure::at("fit"))?;
                    prov.param("energy", a.energy);
                    build_frame(&cs.covariance.expect("tracked"), &ct.covariance.expect("tracked"), a.energy).map_err(Failure::at("frame"))?
                }
            };
            prov.param("eig_floor", a.eig_floor);
            let st = estimate_blockwise(&frame, src, tgt, a.eig_floor).map_err(Failure::at("fit blockwise"))?;
            if st.floor_triggered() {
                log::warn!("blockwise: eigenvalue floor raised {} U and {} V eigenvalues", st.floored_u, st.floored_v);
            }
            Ok(Payload::BlockwiseStats(st))
        }
        _ => {
            let ss = accumulate_set(src, false)?.finalize().map_err(Failure::at("fit"))?;
            let ts = accumulate_set(tgt, false)?.finalize().map_err(Failure::at("fit"))?;
            prov.param("eps", a.eps);
            let st: AlignmentStats<f64> = if matches!(a.method, Method::Realign) {
                estimate_realign(&ss, &ts, src, a.eps).map_err(Failure::at("fit realign"))?
            } else {
                AlignmentStats::uncalibrated(ss.mean, ts.mean, ss.trace, ts.trace, a.eps).map_err(Failure::at("fit"))?
            };
            Ok(Payload::AlignmentStats(st))
        }
    }
}

fn cmd_diagnose(a: DiagnoseArgs, prov: &mut Prov) -> CliResult<()> {
    let x = load_f64(&a.a, prov, "a")?;
    let y = load_f64(&a.b, prov, "b")?;
    let mut opts = DiagnoseOptions {
        seed: a.seed,
        smoothing: !a.no_smoothing,
        ..DiagnoseOptions::default()
    };
    if let Some(v) = a.pairs {
        opts.num_pairs = v;
    }
    if let Some(v) = a.bins {
        opts.bins = v;
    }
    if let Some(v) = a.k {
        opts.mixing_k = v;
    }
    if let Some(v) = a.mixing_sample {
        opts.mixing_sample = v;
    }
    prov.param("options", json!({
        "num_pairs": opts.num_pairs, "bins": opts.bins, "smoothing": opts.smoothing,
        "mixing_k": opts.mixing_k, "mixing_sample": opts.mixing_sample, "seed": opts.seed,
    }));
    let report = diagnose(&x, &y, &opts).map_err(Failure::at("diagnose"))?;
    if let Some(dir) = &a.plots_dir {
        std::fs::create_dir_all(dir).map_err(|e| Failure::at("write")(Error::io(dir, e)))?;
        #[derive(Serialize)]
        struct HistRow {
            center: f64,
            mass_a: f64,
            mass_b: f64,
        }
        let centers = report.histogram_a.bin_centers();
        write_csv(
            &dir.join("cosine_histograms.csv"),
            centers.iter().enumerate().map(|(i, &c)| HistRow {
                center: c,
                mass_a: report.histogram_a.masses[i],
                mass_b: report.histogram_b.masses[i],
            }),
        )?;
        #[derive(Serialize)]
        struct SpecRow {
            index: usize,
            eigenvalue_a: Option<f64>,
            eigenvalue_b: Option<f64>,
        }
        let (ea, eb) = (&report.spectrum_a.eigenvalues, &report.spectrum_b.eigenvalues);
        write_csv(
            &dir.join("spectra.csv"),
            (0..ea.len().max(eb.len())).map(|i| SpecRow {
                index: i + 1,
                eigenvalue_a: ea.get(i).copied(),
                eigenvalue_b: eb.get(i).copied(),
            }),
        )?;
    }
    write_json(&a.report, prov, &report)
}

fn cmd_simulate(a: SimulateArgs, prov: &mut Prov) -> CliResult<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            prov.digest(p)?;
            let text = std::fs::read_to_string(p).map_err(|e| Failure::at("config")(Error::io(p, e)))?;
            SimConfig::from_toml(&text).map_err(Failure::at("config"))?
        }
        None => SimConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.data_seed = s;
    }
    cfg.validate().map_err(Failure::at("config"))?;
    prov.param("config", &cfg);
    let trace = run_toy_training(&cfg).map_err(Failure::at("simulate"))?;
    prov.param("t0", trace.t0);
    prov.param("rank", trace.rank);
    prov.param("gradient_covariance", &trace.gradient_covariance);
    write_csv_with_provenance(&a.trace, prov, &trace.rows)?;
    if let Some(path) = &a.ablation {
        let seeds: Vec<u64> = (0..a.ablation_seeds).collect();
        let report = gap_necessity_ablation(&cfg, &seeds).map_err(Failure::at("ablation"))?;
        write_json(path, prov, json!({ "ablation": report, "shared_encoder_ratio": report.shared_encoder_ratio() }))?;
    }
    Ok(())
}

fn cmd_verify(a: VerifyArgs, prov: &mut Prov) -> CliResult<()> {
    let suites: Vec<Suite> = match a.suite {
        SuiteArg::Gradients => vec![Suite::Gradients],
        SuiteArg::Span => vec![Suite::Span],
        SuiteArg::Bounds => vec![Suite::Bounds],
        SuiteArg::Coupling => vec![Suite::Coupling],
        SuiteArg::All => Suite::ALL.to_vec(),
    };
    prov.param("seed", a.seed);
    let mut checks = Vec::new();
    for s in suites {
        checks.extend(run_suite(s, a.seed).map_err(Failure::at("verify"))?);
    }
    println!("{:<10} {:<58} {:>8} {:>12} {:>13}  result", "suite", "check", "trials", "value", "threshold");
    for c in &checks {
        println!(
            "{:<10} {:<58} {:>8} {:>12.3e} {} {:>10.3e}  {}",
            c.suite.name(),
            c.name,
            c.trials,
            c.value,
            c.comparison,
            c.threshold,
            if c.passed { "pass" } else { "FAIL" }
        );
    }
    if let Some(path) = &a.report {
        write_json(path, prov, &checks)?;
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Failure::numerical(format!("verify: {failed} of {} checks failed", checks.len())));
    }
    Ok(())
}

fn cmd_curve(a: CurveArgs, prov: &mut Prov) -> CliResult<()> {
    let cs = load_f64(&a.calib_src, prov, "calib_src")?;
    let ct = load_f64(&a.calib_tgt, prov, "calib_tgt")?;
    let hs = load_f64(&a.heldout_src, prov, "heldout_src")?;
    let ht = load_f64(&a.heldout_tgt, prov, "heldout_tgt")?;
    prov.param("sizes", &a.sizes);
    prov.param("trials", a.trials);
    prov.param("seed", a.seed);
    let data = CurveData {
        calib_src: &cs,
        calib_tgt: &ct,
        heldout_src: &hs,
        heldout_tgt: &ht,
    };
    let points = sample_complexity_curve(&data, &a.sizes, a.trials, a.eps, a.seed).map_err(Failure::at("sample-curve"))?;
    #[derive(Serialize)]
    struct Row {
        n: usize,
        mean_gap: f64,
        std_gap: f64,
    }
    write_csv_with_provenance(
        &a.out,
        prov,
        points.iter().map(|p| Row {
            n: p.n,
            mean_gap: p.mean_gap,
            std_gap: p.std_gap,
        }),
    )
}

fn cmd_bench(a: BenchArgs, prov: &mut Prov) -> CliResult<()> {
    prov.param("seed", a.seed);
    let tp = streaming_throughput(&a.sizes, a.dims, a.seed).map_err(Failure::at("bench"))?;
    write_csv_with_provenance(&a.out, prov, &tp.rows)?;
    let mut summary: BTreeMap<&str, serde_json::Value> = BTreeMap::new();
    summary.insert("max_rate_deviation", json!(tp.max_rate_deviation));
    summary.insert("state_bytes_constant", json!(tp.state_bytes_constant));
    if a.precision_n > 0 {
        let p = precision_replay(a.precision_n, a.dims, a.seed).map_err(Failure::at("bench precision"))?;
        summary.insert("precision", json!(p));
    }
    let mut side = a.out.as_os_str().to_owned();
    side.push(".summary.json");
    write_json(Path::new(&side), prov, &summary)?;
    for r in &tp.rows {
        println!("n={:<9} {:>9.3} s  {:>8.1} ns/row  state {} B", r.n, r.seconds, r.ns_per_row, r.state_bytes);
    }
    println!("max ns/row deviation {:.1}%", 100.0 * tp.max_rate_deviation);
    if let Some(p) = summary.get("precision") {
        println!("precision {p}");
    }
    Ok(())
}
