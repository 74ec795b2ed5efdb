//! Command-line front end. Exit codes: 0 success, 1 validation or runtime
//! failure, 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use hadacodec::codec::Codec;
use hadacodec::colorimetry::{cmf_table, srgb8_to_linear, LinearRgb};
use hadacodec::dataset::{self, GenOptions};
use hadacodec::error::{Error, Result};
use hadacodec::eval;
use hadacodec::io::{self, Manifest};
use hadacodec::render::{self, ChannelImage, Mode, RenderJob, Scene};
use hadacodec::spectral::{wavelengths, SpectralCurve};
use hadacodec::training::{self, LambdaGrid, LossWeights, TrainConfig, TrainData};
use hadacodec::upsampler::{self, UpsampleTrainConfig, UpsamplerWeights};

#[derive(Parser)]
#[command(
    name = "hadacodec",
    version,
    about = "Hadamard spectral codes: dataset, training, rendering and evaluation"
)]
struct Cli {
    /// Log progress at info level.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize reflectance and illumination splits.
    GenDataset(GenDatasetArgs),
    /// Train a codec on a dataset directory.
    TrainCodec(TrainCodecArgs),
    /// Train one codec per loss-weight combination and rank them.
    GridSearch(GridSearchArgs),
    /// Train the RGB-to-latent network against a frozen codec.
    TrainUpsampler(TrainUpsamplerArgs),
    /// Encode a spectra CSV into latent codes.
    Encode(EncodeArgs),
    /// Decode latent codes back into spectra.
    Decode(DecodeArgs),
    /// Upsample an sRGB PPM texture to a latent raw image.
    Upsample(UpsampleArgs),
    /// Path trace a scene.
    Render(RenderArgs),
    /// Per-pixel MSE between two raw images.
    ErrorMap(ErrorMapArgs),
    /// Multi-bounce ΔE94 evaluation of a codec.
    EvalMultibounce(EvalArgs),
    /// ΔE76 and MSE colour report of a test image against ground truth.
    Report(ReportArgs),
    /// Write the colour matching functions, D65 and the weighting vectors.
    DumpCmf(DumpCmfArgs),
}

#[derive(Args)]
struct GenDatasetArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Measured Munsell reflectances (spectra CSV); a synthetic stand-in is
    /// used otherwise.
    #[arg(long)]
    munsell: Option<PathBuf>,
    /// Measured lamp SPDs (spectra CSV), e.g. an LSPDD export.
    #[arg(long = "lspdd", alias = "lamps")]
    lamps: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct TrainOpts {
    /// Key/value training config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lambda_e2e: Option<f64>,
    #[arg(long)]
    lambda_rec: Option<f64>,
    #[arg(long)]
    lambda_code: Option<f64>,
    #[arg(long)]
    lambda_col: Option<f64>,
    #[arg(long)]
    lambda_alg: Option<f64>,
}

#[derive(Args)]
struct TrainCodecArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 6)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss log.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Args)]
struct GridSearchArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 6)]
    k: usize,
    /// Ranked CSV.
    #[arg(long)]
    out: PathBuf,
    /// Ranges as start:step:stop or comma lists; defaults to the full grid.
    #[arg(long)]
    e2e: Option<String>,
    #[arg(long)]
    rec: Option<String>,
    #[arg(long)]
    code: Option<String>,
    #[arg(long)]
    col: Option<String>,
    #[arg(long)]
    alg: Option<String>,
    #[arg(long, default_value_t = 500)]
    pairs: usize,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Args)]
struct TrainUpsamplerArgs {
    /// Codec weights JSON, or `shipped:6` / `shipped:9`.
    #[arg(long)]
    codec: String,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    codec: String,
    /// Spectra CSV.
    #[arg(long = "in")]
    input: PathBuf,
    /// Codes CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    codec: String,
    /// Codes CSV.
    #[arg(long = "in")]
    input: PathBuf,
    /// Spectra CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct UpsampleArgs {
    /// Upsampler weights JSON; the shipped k=6 network otherwise.
    #[arg(long)]
    upsampler: Option<PathBuf>,
    /// sRGB PPM texture.
    #[arg(long = "in")]
    input: PathBuf,
    /// Latent raw image.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    /// Scene file, or `cornell` / `cornell-narrowband` for the bundled ones.
    #[arg(long, default_value = "cornell")]
    scene: String,
    #[arg(long, default_value = "spectral")]
    mode: String,
    /// Render latent mode as k/3 three-channel passes.
    #[arg(long)]
    multipass: bool,
    #[arg(long)]
    codec: Option<String>,
    #[arg(long, default_value_t = 128)]
    width: usize,
    #[arg(long, default_value_t = 128)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    spp: usize,
    #[arg(long, default_value_t = -1, allow_hyphen_values = true)]
    depth: i32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Raw channel image.
    #[arg(long)]
    out: PathBuf,
    /// Also write an 8-bit preview.
    #[arg(long)]
    ppm: Option<PathBuf>,
}

#[derive(Args)]
struct ErrorMapArgs {
    a: PathBuf,
    b: PathBuf,
    /// Codec for latent inputs.
    #[arg(long)]
    codec: Option<String>,
    /// Heat-map PPM.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    codec: String,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 500)]
    pairs: usize,
    #[arg(long, default_value_t = 3)]
    bounces: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    codec: Option<String>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct DumpCmfArgs {
    /// Output CSV; stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_codec(spec: &str) -> Result<Codec> {
    match spec.strip_prefix("shipped:") {
        Some(k) => Codec::shipped(
            k.parse()
                .map_err(|_| Error::Config(format!("bad shipped codec '{spec}'")))?,
        ),
        None => Codec::load(spec),
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn finish(mut m: Manifest, start: Instant, path: &Path) -> Result<()> {
    m.elapsed_seconds = start.elapsed().as_secs_f64();
    m.write(path)
}

fn dataset_inputs(m: &mut Manifest, dir: &Path) -> Result<()> {
    for f in dataset::DATASET_FILES {
        m.input(&dir.join(f))?;
    }
    Ok(())
}

fn train_setup(opts: &TrainOpts) -> Result<(TrainConfig, LossWeights)> {
    let (mut cfg, mut lw) = match &opts.config {
        Some(p) => io::parse_train_config(&io::read_text(p)?, &p.display().to_string())?,
        None => (TrainConfig::default(), LossWeights::default()),
    };
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if let Some(e) = opts.epochs {
        cfg.max_epochs = e;
        cfg.patience = cfg.patience.min(e);
    }
    for (v, slot) in [
        (opts.lambda_e2e, &mut lw.e2e),
        (opts.lambda_rec, &mut lw.rec),
        (opts.lambda_code, &mut lw.code),
        (opts.lambda_col, &mut lw.col),
        (opts.lambda_alg, &mut lw.alg),
    ] {
        if let Some(v) = v {
            *slot = v;
        }
    }
    cfg.validate()?;
    lw.validate()?;
    Ok((cfg, lw))
}

fn gen_dataset(a: GenDatasetArgs) -> Result<()> {
    let start = Instant::now();
    let ds = dataset::generate(&GenOptions {
        seed: a.seed,
        munsell: a.munsell.clone(),
        lamps: a.lamps.clone(),
    })?;
    let mut m = Manifest::new("gen-dataset").seed("seed", a.seed);
    for p in [&a.munsell, &a.lamps].into_iter().flatten() {
        m.input(p)?;
    }
    for p in dataset::write_dataset(&a.out, &ds)? {
        m.output(&p)?;
    }
    let summary = ds.summary();
    let summary_path = a.out.join("summary.json");
    io::write_bytes(
        &summary_path,
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;
    m.output(&summary_path)?;
    m.details = serde_json::to_value(&summary)?;
    println!(
        "reflectances {} train / {} test, illuminations {} train / {} test (pool {})",
        summary.reflectance_train,
        summary.reflectance_test,
        summary.illumination_train,
        summary.illumination_test,
        summary.illumination_pool
    );
    finish(m, start, &a.out.join("manifest.json"))
}

fn train_codec(a: TrainCodecArgs) -> Result<()> {
    let start = Instant::now();
    let (cfg, lw) = train_setup(&a.opts)?;
    let splits = dataset::load_dataset(&a.data)?;
    let data = TrainData {
        refl: splits.refl_train,
        illum: splits.illum_train,
    };
    let (w, report) = training::train(&data, a.k, &cfg, &lw)?;
    w.save(&a.out)?;
    let mut m = Manifest::new("train-codec").seed("seed", cfg.seed);
    dataset_inputs(&mut m, &a.data)?;
    m.output(&a.out)?;
    if let Some(log) = &a.log {
        io::write_bytes(log, report.to_csv().as_bytes())?;
        m.output(log)?;
    }
    m.details = json!({
        "k": a.k,
        "config": cfg,
        "lambda": lw,
        "initial_val": report.initial_val,
        "best_val": report.best_val,
        "best_epoch": report.best_epoch,
        "epochs_run": report.epochs.len(),
        "stopped_early": report.stopped_early,
    });
    println!(
        "k={} best validation loss {:.6e} at epoch {} ({} epochs)",
        a.k,
        report.best_val,
        report.best_epoch,
        report.epochs.len()
    );
    finish(m, start, &manifest_path(&a.out))
}

fn grid_search(a: GridSearchArgs) -> Result<()> {
    let start = Instant::now();
    let (cfg, _) = train_setup(&a.opts)?;
    let full = LambdaGrid::full();
    let pick =
        |s: &Option<String>, d: Vec<f64>| s.as_deref().map(training::parse_range).unwrap_or(Ok(d));
    let grid = LambdaGrid {
        e2e: pick(&a.e2e, full.e2e)?,
        rec: pick(&a.rec, full.rec)?,
        code: pick(&a.code, full.code)?,
        col: pick(&a.col, full.col)?,
        alg: pick(&a.alg, full.alg)?,
    };
    let splits = dataset::load_dataset(&a.data)?;
    let data = TrainData {
        refl: splits.refl_train,
        illum: splits.illum_train,
    };
    let rows = training::grid_search(
        &grid,
        &data,
        &splits.refl_test,
        &splits.illum_test,
        a.k,
        &cfg,
        a.pairs,
    )?;
    io::write_bytes(&a.out, training::grid_csv(&rows).as_bytes())?;
    let mut m = Manifest::new("grid-search").seed("seed", cfg.seed);
    dataset_inputs(&mut m, &a.data)?;
    m.output(&a.out)?;
    m.details = json!({ "points": rows.len(), "best": rows.first() });
    if let Some(best) = rows.first() {
        println!(
            "{} points, best {:?} mean ΔE94 {:.4}",
            rows.len(),
            best.weights,
            best.score
        );
    }
    finish(m, start, &manifest_path(&a.out))
}

fn train_upsampler(a: TrainUpsamplerArgs) -> Result<()> {
    let start = Instant::now();
    let codec = load_codec(&a.codec)?;
    let splits = dataset::load_dataset(&a.data)?;
    let mut cfg = UpsampleTrainConfig {
        seed: a.seed,
        ..Default::default()
    };
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let (uw, report) = upsampler::train_upsampler(&codec, &splits.refl_train, &cfg)?;
    uw.save(&a.out)?;
    let fid = upsampler::fidelity(&uw, &codec, &splits.refl_test)?;
    let mut m = Manifest::new("train-upsampler").seed("seed", a.seed);
    if Path::new(&a.codec).exists() {
        m.input(Path::new(&a.codec))?;
    }
    dataset_inputs(&mut m, &a.data)?;
    m.output(&a.out)?;
    if let Some(log) = &a.log {
        io::write_bytes(log, report.to_csv().as_bytes())?;
        m.output(log)?;
    }
    m.details = json!({
        "initial_latent": report.initial_latent,
        "final_latent": report.final_latent,
        "final_mse": report.final_mse,
        "final_color": report.final_color,
        "held_out": fid,
    });
    println!(
        "latent loss {:.4e} -> {:.4e}; held-out ΔE76 {:.3} vs codec, {:.3} vs truth",
        report.initial_latent, report.final_latent, fid.vs_codec, fid.vs_truth
    );
    finish(m, start, &manifest_path(&a.out))
}

fn encode(a: EncodeArgs) -> Result<()> {
    let start = Instant::now();
    let codec = load_codec(&a.codec)?;
    let table = io::read_spectra(&a.input)?;
    let curves = if table.wavelengths.len() == wavelengths().len() {
        table
            .rows
            .iter()
            .map(|r| SpectralCurve::from_slice(r))
            .collect::<Result<Vec<_>>>()?
    } else {
        table.to_curves(false)?
    };
    let codes: Vec<Vec<f64>> = curves
        .iter()
        .map(|c| codec.encode(c).into_inner())
        .collect();
    io::write_bytes(&a.out, io::codes_csv(&table.ids, &codes).as_bytes())?;
    let mut m = Manifest::new("encode");
    m.input(&a.input)?;
    m.output(&a.out)?;
    finish(m, start, &manifest_path(&a.out))
}

fn decode(a: DecodeArgs) -> Result<()> {
    let start = Instant::now();
    let codec = load_codec(&a.codec)?;
    let (ids, codes) =
        io::parse_codes_csv(&io::read_text(&a.input)?, &a.input.display().to_string())?;
    let curves = codes
        .into_iter()
        .map(|z| codec.decode(&hadacodec::LatentCode::new(z)?))
        .collect::<Result<Vec<_>>>()?;
    io::write_spectra(&a.out, &io::SpectraTable::from_curves(ids, &curves))?;
    let mut m = Manifest::new("decode");
    m.input(&a.input)?;
    m.output(&a.out)?;
    finish(m, start, &manifest_path(&a.out))
}

fn upsample(a: UpsampleArgs) -> Result<()> {
    let start = Instant::now();
    let uw = match &a.upsampler {
        Some(p) => UpsamplerWeights::load(p)?,
        None => UpsamplerWeights::shipped()?,
    };
    let tex = io::read_ppm(&a.input)?;
    let pixels: Vec<LinearRgb> = tex.pixels.iter().map(|&p| srgb8_to_linear(p)).collect();
    let (data, stats) = upsampler::upsample_image(&uw, &pixels);
    let img = ChannelImage::new(tex.width, tex.height, uw.k, data)?;
    io::write_raw(&a.out, &img)?;
    let mut m = Manifest::new("upsample");
    m.input(&a.input)?;
    if let Some(p) = &a.upsampler {
        m.input(p)?;
    }
    m.output(&a.out)?;
    m.details = json!({ "outputs": stats.outputs, "clamped": stats.clamped });
    if stats.clamped > 0 {
        log::warn!(
            "{} of {} outputs clamped at zero",
            stats.clamped,
            stats.outputs
        );
    }
    finish(m, start, &manifest_path(&a.out))
}

fn load_scene(spec: &str) -> Result<Scene> {
    match spec {
        "cornell" => Ok(Scene::reference()),
        "cornell-narrowband" => Ok(Scene::narrowband_reference()),
        path => render::parse_scene(&io::read_text(Path::new(path))?, path),
    }
}

fn render_cmd(a: RenderArgs) -> Result<()> {
    let start = Instant::now();
    let scene = load_scene(&a.scene)?;
    let mode: Mode = a.mode.parse()?;
    let job = RenderJob::new(a.width, a.height, a.spp, a.depth, a.seed);
    let codec = a.codec.as_deref().map(load_codec).transpose()?;
    if a.multipass && mode != Mode::Latent {
        return Err(Error::Config(
            "--multipass applies to latent mode only".into(),
        ));
    }
    let (img, stats) = if a.multipass {
        let c = codec
            .as_ref()
            .ok_or_else(|| Error::Config("latent mode needs --codec".into()))?;
        render::render_latent_multipass(&scene, &job, c)?
    } else {
        render::render(&scene, &job, mode, codec.as_ref())?
    };
    io::write_raw(&a.out, &img)?;
    let mut m = Manifest::new("render").seed("seed", a.seed);
    if Path::new(&a.scene).exists() {
        m.input(Path::new(&a.scene))?;
    }
    m.output(&a.out)?;
    if let Some(ppm) = &a.ppm {
        let rgb = render::image_linear_rgb(&img, codec.as_ref())?;
        let exposure = render::shared_exposure(&rgb);
        io::write_ppm(
            ppm,
            &render::to_srgb8(&rgb, img.width, img.height, exposure),
        )?;
        m.output(ppm)?;
    }
    m.details = json!({
        "mode": a.mode,
        "multipass": a.multipass,
        "channels": img.channels,
        "shading_events": stats.shading_events,
        "lane_evaluations": stats.lane_evaluations,
        "rays": stats.rays,
    });
    println!(
        "{}x{} {} channels, {} lane evaluations",
        img.width, img.height, img.channels, stats.lane_evaluations
    );
    finish(m, start, &manifest_path(&a.out))
}

fn error_map(a: ErrorMapArgs) -> Result<()> {
    let start = Instant::now();
    let codec = a.codec.as_deref().map(load_codec).transpose()?;
    let ia = io::read_raw(&a.a)?;
    let ib = io::read_raw(&a.b)?;
    if (ia.width, ia.height) != (ib.width, ib.height) {
        return Err(Error::Config(format!(
            "image sizes differ: {}x{} vs {}x{}",
            ia.width, ia.height, ib.width, ib.height
        )));
    }
    let ra = render::image_linear_rgb(&ia, codec.as_ref())?;
    let rb = render::image_linear_rgb(&ib, codec.as_ref())?;
    let (map, mean) = render::error_map(&ra, &rb)?;
    io::write_ppm(&a.out, &render::error_map_image(&map, ia.width, ia.height))?;
    let mut m = Manifest::new("error-map");
    m.input(&a.a)?;
    m.input(&a.b)?;
    m.output(&a.out)?;
    if let Some(csv) = &a.csv {
        let max = map.iter().copied().fold(0.0, f64::max);
        io::write_bytes(
            csv,
            format!(
                "pixels,mean_mse,max_mse\n{},{:.9e},{:.9e}\n",
                map.len(),
                mean,
                max
            )
            .as_bytes(),
        )?;
        m.output(csv)?;
    }
    m.details = json!({ "mean_mse": mean });
    println!("mean per-pixel MSE {mean:.6e}");
    finish(m, start, &manifest_path(&a.out))
}

fn eval_multibounce(a: EvalArgs) -> Result<()> {
    let start = Instant::now();
    let codec = load_codec(&a.codec)?;
    let splits = dataset::load_dataset(&a.data)?;
    let res = eval::multibounce_eval(
        &codec,
        &splits.refl_test,
        &splits.illum_test,
        a.bounces,
        a.pairs,
        a.seed,
    )?;
    print!("{}", eval::multibounce_csv(&res));
    let mut m = Manifest::new("eval-multibounce").seed("seed", a.seed);
    dataset_inputs(&mut m, &a.data)?;
    if Path::new(&a.codec).exists() {
        m.input(Path::new(&a.codec))?;
    }
    m.details = serde_json::to_value(&res)?;
    if let Some(csv) = &a.csv {
        io::write_bytes(csv, eval::multibounce_csv(&res).as_bytes())?;
        m.output(csv)?;
        finish(m, start, &manifest_path(csv))?;
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let start = Instant::now();
    let codec = a.codec.as_deref().map(load_codec).transpose()?;
    let gt = io::read_raw(&a.gt)?;
    let test = io::read_raw(&a.test)?;
    let rg = render::image_linear_rgb(&gt, codec.as_ref())?;
    let rt = render::image_linear_rgb(&test, codec.as_ref())?;
    let exposure = render::shared_exposure(&rg);
    let (r, _) = eval::scene_color_report(&rg, &rt, exposure)?;
    print!("{}", eval::scene_color_csv(&r));
    if let Some(csv) = &a.csv {
        io::write_bytes(csv, eval::scene_color_csv(&r).as_bytes())?;
        let mut m = Manifest::new("report");
        m.input(&a.gt)?;
        m.input(&a.test)?;
        m.output(csv)?;
        m.details = serde_json::to_value(&r)?;
        finish(m, start, &manifest_path(csv))?;
    }
    Ok(())
}

fn dump_cmf(a: DumpCmfArgs) -> Result<()> {
    let t = cmf_table();
    let rows: Vec<(&str, &[f64])> = vec![
        ("xbar", &t.cmf[0]),
        ("ybar", &t.cmf[1]),
        ("zbar", &t.cmf[2]),
        ("d65", &t.d65),
        ("w_x", &t.weights[0]),
        ("w_y", &t.weights[1]),
        ("w_z", &t.weights[2]),
    ];
    let table = io::SpectraTable {
        wavelengths: wavelengths().to_vec(),
        ids: rows.iter().map(|(n, _)| n.to_string()).collect(),
        rows: rows.iter().map(|(_, r)| r.to_vec()).collect(),
    };
    match a.out {
        Some(p) => {
            let start = Instant::now();
            io::write_spectra(&p, &table)?;
            let mut m = Manifest::new("dump-cmf");
            m.output(&p)?;
            finish(m, start, &manifest_path(&p))
        }
        None => {
            print!("{}", io::spectra_csv(&table));
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenDataset(a) => gen_dataset(a),
        Command::TrainCodec(a) => train_codec(a),
        Command::GridSearch(a) => grid_search(a),
        Command::TrainUpsampler(a) => train_upsampler(a),
        Command::Encode(a) => encode(a),
        Command::Decode(a) => decode(a),
        Command::Upsample(a) => upsample(a),
        Command::Render(a) => render_cmd(a),
        Command::ErrorMap(a) => error_map(a),
        Command::EvalMultibounce(a) => eval_multibounce(a),
        Command::Report(a) => report(a),
        Command::DumpCmf(a) => dump_cmf(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    render::init_thread_pool();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
