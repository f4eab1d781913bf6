use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use natnet::classify::ClassifierConfig;
use natnet::diffusion::DiffusionParams;
use natnet::features::{default_channels, ChannelSpec, FeatureExtractor, Raster, SquareSpec};
use natnet::graph::LabeledDataset;
use natnet::io;
use natnet::model::{reduce, TrainedModel};
use natnet::pca::PcaModel;
use natnet::relmap::{compute_maps, final_maps, mean_relevancy, MapEngine, RadiusMaps};
use natnet::synth;
use natnet::training::{self, ParamRange, TrainingArea, TuningGrid};

#[derive(Parser)]
#[command(name = "natnet", version, about = "Diffusion-network classifier for multispectral land cover")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded synthetic data.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Fit the reduction, tune parameters by leave-one-out and write a model.
    Train(TrainArgs),
    /// Leave-one-out report for fixed parameters.
    Loo(LooArgs),
    /// Move each area's square to its best-classified pixel and radius.
    Adjust(AreaPassArgs),
    /// Drop areas that classify nowhere inside themselves.
    Prune(AreaPassArgs),
    /// Classify one feature vector or one pixel.
    Classify(ClassifyArgs),
    /// Relevancy maps for each radius plus the final map.
    Relmap(RelmapArgs),
    /// Render a map sidecar to 16-bit PGM.
    Render(RenderArgs),
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Gaussian point clusters as a dataset CSV.
    Dataset {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Cluster centers as `x,y;x,y;...` (default: the four-cluster demo).
        #[arg(long)]
        centers: Option<String>,
        /// Total number of points, split evenly over clusters.
        #[arg(long, default_value_t = 125)]
        points: usize,
        #[arg(long, default_value_t = synth::DEMO_SPREAD)]
        spread: f64,
    },
    /// Two-texture raster, optionally with tiled training areas.
    Raster {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        /// Also write training areas to this CSV.
        #[arg(long)]
        areas: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        block: usize,
        #[arg(long, value_delimiter = ',', default_value = "3,4,5")]
        radii: Vec<usize>,
    },
}

/// Overrides for the dynamics, stopping and relevancy defaults. Commands
/// that load a model start from the model's values instead.
#[derive(Args, Clone, Default)]
struct DynamicsArgs {
    /// Same-cluster diffusion strength [default: 1]
    #[arg(long)]
    eps_forward: Option<f64>,
    /// Cross-cluster (negative) diffusion strength [default: -0.001]
    #[arg(long, allow_hyphen_values = true)]
    eps_backward: Option<f64>,
    /// Time step [default: 1]
    #[arg(long)]
    tau: Option<f64>,
    /// Histogram cell size [default: 0.01]
    #[arg(long)]
    h: Option<f64>,
    /// Inner ring radius in cells [default: 1]
    #[arg(long)]
    h1: Option<u32>,
    /// Outer ring radius in cells [default: 8]
    #[arg(long)]
    h2: Option<u32>,
    /// Steepness of the relevancy rescaling [default: 12]
    #[arg(long)]
    lambda: Option<f64>,
    /// Step limit of the dynamics [default: 200]
    #[arg(long)]
    max_steps: Option<usize>,
    /// SOR relaxation factor [default: 1.3]
    #[arg(long)]
    sor_omega: Option<f64>,
    /// SOR relative residual tolerance [default: 1e-9]
    #[arg(long)]
    sor_tol: Option<f64>,
    /// SOR sweep limit [default: 1000]
    #[arg(long)]
    sor_max_iters: Option<usize>,
}

impl DynamicsArgs {
    fn apply(&self, c: &mut ClassifierConfig) {
        let d = &mut c.diffusion;
        set(&mut d.eps_forward, self.eps_forward);
        set(&mut d.eps_backward, self.eps_backward);
        set(&mut d.tau, self.tau);
        set(&mut d.max_steps, self.max_steps);
        set(&mut d.sor.omega, self.sor_omega);
        set(&mut d.sor.tol, self.sor_tol);
        set(&mut d.sor.max_iters, self.sor_max_iters);
        set(&mut c.histogram.h, self.h);
        set(&mut c.histogram.inner, self.h1);
        set(&mut c.histogram.outer, self.h2);
        set(&mut c.lambda, self.lambda);
    }

    fn config(&self, weights: Vec<f64>, delta: f64) -> Result<ClassifierConfig> {
        let mut c = ClassifierConfig::new(DiffusionParams::new(weights, delta));
        self.apply(&mut c);
        c.validate()?;
        Ok(c)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Args)]
struct FeatureSource {
    /// Raw feature CSV (`id,label,f1,...`).
    #[arg(long, conflicts_with_all = ["raster", "areas"])]
    dataset: Option<PathBuf>,
    #[arg(long, requires = "areas")]
    raster: Option<PathBuf>,
    #[arg(long, requires = "raster")]
    areas: Option<PathBuf>,
    /// Feature channels, e.g. `B02,B04,B08,ndvi(B04,B08)`. Defaults to every
    /// band plus NDVI when extracting from a raster.
    #[arg(long)]
    channels: Option<String>,
    #[arg(long, default_value = "B04")]
    red: String,
    #[arg(long, default_value = "B08")]
    nir: String,
}

impl FeatureSource {
    fn load(&self) -> Result<(LabeledDataset, Vec<ChannelSpec>)> {
        let explicit = self
            .channels
            .as_ref()
            .map(|list| parse_channels(list))
            .transpose()?;
        match (&self.dataset, &self.raster, &self.areas) {
            (Some(path), _, _) => {
                let ds = io::load_dataset(path).with_context(|| format!("loading {}", path.display()))?;
                Ok((ds, explicit.unwrap_or_default()))
            }
            (None, Some(raster), Some(areas)) => {
                let raster = io::load_raster(raster)?;
                let areas = io::load_areas(areas)?;
                let channels = explicit.unwrap_or_else(|| default_channels(&raster, &self.red, &self.nir));
                Ok((training::areas_dataset(&raster, &channels, &areas)?, channels))
            }
            _ => bail!("give either --dataset or --raster with --areas"),
        }
    }
}

fn parse_channels(list: &str) -> Result<Vec<ChannelSpec>> {
    // `ndvi(B04,B08)` contains a comma, so split on commas outside parentheses
    let mut out = Vec::new();
    let mut depth = 0;
    let mut start = 0;
    for (i, ch) in list.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(list[start..i].trim().parse()?);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(list[start..].trim().parse()?);
    Ok(out)
}

fn parse_range(s: &str) -> Result<ParamRange> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("range {s:?} is not start:end:step"))?;
    match parts[..] {
        [v] => Ok(ParamRange::single(v)),
        [a, b, c] => Ok(ParamRange::new(a, b, c)?),
        _ => bail!("range {s:?} is not start:end:step"),
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    source: FeatureSource,
    #[arg(long)]
    out: PathBuf,
    /// Retained principal components.
    #[arg(long, default_value_t = 2)]
    components: usize,
    /// Weight range `start:end:step` (or a single value), one per component;
    /// a single range is used for every component.
    #[arg(long = "k-range", num_args = 1.., default_value = "100:5000:100")]
    k_ranges: Vec<String>,
    #[arg(long, default_value = "0.001:0.1:0.001")]
    delta_range: String,
    /// Append evaluated tuples here and skip those already present.
    #[arg(long)]
    progress: Option<PathBuf>,
    #[command(flatten)]
    dynamics: DynamicsArgs,
}

#[derive(Args)]
struct LooArgs {
    #[command(flatten)]
    source: FeatureSource,
    #[arg(long, value_delimiter = ',', required = true)]
    weights: Vec<f64>,
    #[arg(long)]
    delta: f64,
    /// Print one line per point.
    #[arg(long)]
    verbose_points: bool,
    #[command(flatten)]
    dynamics: DynamicsArgs,
}

#[derive(Args)]
struct MapArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    raster: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "3,4,5")]
    radii: Vec<usize>,
    /// Classify pixels against one precomputed trajectory of the training set.
    #[arg(long)]
    frozen_base: bool,
    #[command(flatten)]
    dynamics: DynamicsArgs,
}

#[derive(Args)]
struct AreaPassArgs {
    #[command(flatten)]
    maps: MapArgs,
    #[arg(long)]
    areas: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated raw feature vector.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "raster")]
    features: Option<Vec<f64>>,
    #[arg(long, requires = "pixel")]
    raster: Option<PathBuf>,
    /// Pixel as `row,col`.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pixel: Option<Vec<usize>>,
    #[arg(long, default_value_t = 3)]
    radius: usize,
    #[command(flatten)]
    dynamics: DynamicsArgs,
}

#[derive(Args)]
struct RelmapArgs {
    #[command(flatten)]
    maps: MapArgs,
    #[arg(long)]
    out_dir: PathBuf,
    /// Report each area's mean final relevancy for every cluster.
    #[arg(long)]
    areas: Option<PathBuf>,
    /// Erosion radius of the area masks for the report.
    #[arg(long, default_value_t = 3)]
    shrink: usize,
}

#[derive(Args)]
struct RenderArgs {
    /// Map sidecar header (`.nnr`).
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        ensure!(n > 0, "--threads must be positive");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Synth(cmd) => run_synth(cmd),
        Command::Train(args) => run_train(args),
        Command::Loo(args) => run_loo(args),
        Command::Adjust(args) => run_area_pass(args, false),
        Command::Prune(args) => run_area_pass(args, true),
        Command::Classify(args) => run_classify(args),
        Command::Relmap(args) => run_relmap(args),
        Command::Render(args) => {
            let map = io::load_map(&args.map)?;
            io::write_pgm(&map, &args.out)?;
            Ok(())
        }
    }
}

fn run_synth(cmd: SynthCommand) -> Result<()> {
    match cmd {
        SynthCommand::Dataset {
            out,
            seed,
            centers,
            points,
            spread,
        } => {
            let centers: Vec<Vec<f64>> = match centers {
                Some(s) => s
                    .split(';')
                    .map(|c| c.split(',').map(|x| x.trim().parse::<f64>()).collect())
                    .collect::<std::result::Result<_, _>>()
                    .context("centers must look like `x,y;x,y`")?,
                None => synth::DEMO_CENTERS.iter().map(|c| c.to_vec()).collect(),
            };
            ensure!(!centers.is_empty(), "no centers given");
            let ds = synth::synth_clusters(seed, &centers, &synth::even_counts(points, centers.len()), spread)?;
            io::save_dataset(&ds, &out)?;
            info!("wrote {} points in {} clusters to {}", ds.len(), ds.n_clusters(), out.display());
        }
        SynthCommand::Raster {
            out,
            seed,
            width,
            height,
            areas,
            block,
            radii,
        } => {
            let (raster, masks) = synth::halves_raster(seed, width, height, &synth::DEMO_BANDS, &synth::demo_textures())?;
            io::save_raster(&raster, &out)?;
            if let Some(path) = areas {
                let areas = synth::block_areas(seed, &masks, block, &radii)?;
                io::save_areas(&areas, &path)?;
                info!("wrote {} training areas to {}", areas.len(), path.display());
            }
        }
    }
    Ok(())
}

fn build_grid(k_ranges: &[String], delta_range: &str, k: usize) -> Result<TuningGrid> {
    let ranges = k_ranges
        .iter()
        .map(|s| parse_range(s))
        .collect::<Result<Vec<_>>>()?;
    let weights = match ranges.len() {
        1 => vec![ranges[0]; k],
        n if n == k => ranges,
        n => bail!("{n} weight ranges given for {k} components"),
    };
    Ok(TuningGrid {
        weights,
        delta: parse_range(delta_range)?,
    })
}

fn run_train(args: TrainArgs) -> Result<()> {
    let (raw, channels) = args.source.load()?;
    let grid = build_grid(&args.k_ranges, &args.delta_range, args.components)?;
    let mut base = ClassifierConfig::new(DiffusionParams::new(vec![0.0; args.components], 0.0));
    args.dynamics.apply(&mut base);
    let done = match &args.progress {
        Some(p) => io::read_progress(p)?,
        None => Vec::new(),
    };
    let total = grid.trials().len();
    info!("evaluating {total} parameter tuples ({} already logged)", done.len());
    let log_err = Mutex::new(None);
    let progress = |r: &training::TrialRecord| {
        info!("{r}");
        if let Some(p) = &args.progress {
            if let Err(e) = io::append_progress(p, r) {
                log_err.lock().unwrap().get_or_insert(e);
            }
        }
    };
    let (model, outcome) = training::train(&raw, channels, &grid, &base, &done, &progress)?;
    if let Some(e) = log_err.into_inner().unwrap() {
        return Err(e).context("writing progress log");
    }
    model.save(&args.out)?;
    let r = &outcome.report;
    println!(
        "best weights={:?} delta={} correct={} incorrect={} outliers={} success={:.4}",
        outcome.best.weights,
        outcome.best.delta,
        r.correct,
        r.incorrect,
        r.outliers,
        r.success_rate()
    );
    println!("explained variance ratio {:.6}", model.pca.explained_ratio());
    Ok(())
}

fn run_loo(args: LooArgs) -> Result<()> {
    let (raw, _) = args.source.load()?;
    let k = args.weights.len();
    let ds = if raw.dim() == k {
        raw
    } else {
        let pca = PcaModel::fit(raw.coords(), raw.dim(), k)?;
        info!("reduced {} features to {k} components", raw.dim());
        reduce(&pca, &raw)?
    };
    let config = args.dynamics.config(args.weights, args.delta)?;
    let report = training::loo_evaluate(&ds, &config)?;
    if args.verbose_points {
        for p in &report.per_point {
            let assigned = p.assigned.map_or("outlier".to_string(), |c| c.to_string());
            let note = p.failure.as_deref().unwrap_or("");
            println!("{}\t{}\t{}\t{:.6}\t{}", p.id, p.truth, assigned, p.relevancy, note);
        }
    }
    println!(
        "correct={} incorrect={} outliers={} success={:.4}",
        report.correct,
        report.incorrect,
        report.outliers,
        report.success_rate()
    );
    Ok(())
}

fn load_model(path: &Path, dynamics: &DynamicsArgs) -> Result<TrainedModel> {
    let mut model = TrainedModel::load(path).with_context(|| format!("loading {}", path.display()))?;
    dynamics.apply(&mut model.config);
    model.config.validate()?;
    Ok(model)
}

fn all_radius_maps(args: &MapArgs, model: &TrainedModel, raster: &Raster, selection: Option<&natnet::features::PixelMask>) -> Result<Vec<RadiusMaps>> {
    ensure!(!args.radii.is_empty(), "at least one radius is required");
    let engine = MapEngine::new(model, args.frozen_base)?;
    args.radii
        .iter()
        .map(|&r| {
            info!("computing maps for radius {r}");
            Ok(compute_maps(raster, &engine, r, selection)?)
        })
        .collect()
}

fn run_area_pass(args: AreaPassArgs, prune: bool) -> Result<()> {
    let model = load_model(&args.maps.model, &args.maps.dynamics)?;
    let raster = io::load_raster(&args.maps.raster)?;
    let areas = io::load_areas(&args.areas)?;
    let mut union = natnet::features::PixelMask::empty(raster.width(), raster.height());
    for a in &areas {
        for (r, c) in a.mask.pixels() {
            union.set(r, c, true);
        }
    }
    let maps = all_radius_maps(&args.maps, &model, &raster, Some(&union))?;
    let out: Vec<TrainingArea> = if prune {
        let (kept, removed) = training::prune_unclassifiable(&areas, &maps)?;
        println!("removed {} of {} areas{}", removed.len(), areas.len(), list_suffix(&removed));
        kept
    } else {
        let adj = training::adjust_squares(&areas, &maps)?;
        println!("moved {} of {} squares{}", adj.moved.len(), areas.len(), list_suffix(&adj.moved));
        if !adj.all_zero.is_empty() {
            println!("zero relevancy everywhere: {}", adj.all_zero.join(" "));
        }
        adj.areas
    };
    io::save_areas(&out, &args.out)?;
    Ok(())
}

fn list_suffix(ids: &[String]) -> String {
    if ids.is_empty() {
        String::new()
    } else {
        format!(": {}", ids.join(" "))
    }
}

fn run_classify(args: ClassifyArgs) -> Result<()> {
    let model = load_model(&args.model, &args.dynamics)?;
    let raw = match (&args.features, &args.raster, &args.pixel) {
        (Some(f), _, _) => f.clone(),
        (None, Some(path), Some(pixel)) => {
            let [row, col] = pixel[..] else {
                bail!("--pixel takes `row,col`");
            };
            let raster = io::load_raster(path)?;
            ensure!(row < raster.height() && col < raster.width(), "pixel outside the raster");
            FeatureExtractor::new(&raster, &model.channels)?.extract(&raster, SquareSpec { row, col, radius: args.radius })?
        }
        _ => bail!("give --features or --raster with --pixel"),
    };
    let r = model.classify_raw(&raw)?;
    let cluster = r.assigned.map_or("outlier".to_string(), |c| c.to_string());
    println!(
        "cluster={cluster} relevancy={} steps={} criterion_met={}{}",
        r.relevancy,
        r.steps_used,
        r.criterion_met,
        if r.tie { " tie" } else { "" }
    );
    Ok(())
}

fn run_relmap(args: RelmapArgs) -> Result<()> {
    let model = load_model(&args.maps.model, &args.maps.dynamics)?;
    let raster = io::load_raster(&args.maps.raster)?;
    fs::create_dir_all(&args.out_dir)?;
    let sets = all_radius_maps(&args.maps, &model, &raster, None)?;
    for set in &sets {
        for m in &set.maps {
            io::save_map(m, &args.out_dir.join(format!("c{}-{}.pgm", m.cluster, m.kind)))?;
        }
    }
    let finals = final_maps(&sets)?;
    for m in &finals {
        io::save_map(m, &args.out_dir.join(format!("c{}-{}.pgm", m.cluster, m.kind)))?;
    }
    if let Some(path) = &args.areas {
        let areas = io::load_areas(path)?;
        for a in &areas {
            let means = finals
                .iter()
                .map(|m| mean_relevancy(m, &a.mask, args.shrink).map(|v| format!("{v:.4}")))
                .collect::<natnet::Result<Vec<_>>>();
            match means {
                Ok(m) => println!("{}\t{}\t{}", a.id, a.label, m.join("\t")),
                Err(e) => println!("{}\t{}\t{e}", a.id, a.label),
            }
        }
    }
    println!("wrote {} maps to {}", sets.len() * finals.len() + finals.len(), args.out_dir.display());
    Ok(())
}
