use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use igmseg_core::affinity::{sweep, AffinityField, AffinityNeighborhood};
use igmseg_core::config::PipelineConfig;
use igmseg_core::metrics::{csv_report, table_report, MatchTable, MetricOptions, MetricRow};
use igmseg_core::model::{fit_local_stats, load_model, save_model, ModelFile};
use igmseg_core::mws::{segment, MwsConfig};
use igmseg_core::{pgm, synth, Error};
use log::{info, warn};

use crate::{Command, ConfigArg};

pub(crate) fn run(command: Command, workers: usize) -> Result<()> {
    match command {
        Command::Generate { config, out } => generate(&load_config(&config)?, &out),
        Command::Fit { config, out, images } => fit(&load_config(&config)?, &out, &images),
        Command::Affinities {
            config,
            model,
            out,
            patch_size,
            stride,
            seed,
            images,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(p) = patch_size {
                cfg.sweep.patch_size = p;
            }
            if let Some(s) = stride {
                cfg.sweep.stride = s;
            }
            if let Some(s) = seed {
                cfg.sweep.seed = s;
            }
            affinities(&cfg, &model, &out, &images, workers)
        }
        Command::Segment {
            affinities,
            alpha,
            foreground,
            min_segment,
            out,
        } => segment_cmd(&affinities, alpha, foreground.as_deref(), min_segment, &out),
        Command::Evaluate {
            pred,
            gt,
            thresholds,
            sparse_gt,
            method,
            out,
        } => evaluate(&pred, &gt, &thresholds, sparse_gt, &method, out.as_deref()),
        Command::SweepAlpha {
            config,
            affinities,
            gt,
            alphas,
            true_fg,
            thresholds,
            out,
        } => {
            let cfg = load_config(&config)?;
            let alphas = if alphas.is_empty() { cfg.alpha_grid.clone() } else { alphas };
            sweep_alpha(&cfg, &affinities, &gt, &alphas, true_fg, &thresholds, out.as_deref())
        }
    }
}

fn load_config(arg: &ConfigArg) -> Result<PipelineConfig> {
    match &arg.config {
        Some(path) => PipelineConfig::load(path).with_context(|| format!("loading config {}", path.display())),
        None => Ok(PipelineConfig::default().with_env_seed()?),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::with_path(path, e))?;
    Ok(())
}

fn generate(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let samples = synth::generate_batch(&cfg.gen)?;
    let dirs = ["images", "labels", "models"].map(|d| out.join(d));
    for d in &dirs {
        create_dir(d)?;
    }
    for (k, s) in samples.iter().enumerate() {
        let name = format!("{k:03}");
        pgm::write_image(dirs[0].join(format!("{name}.pgm")), &s.image)?;
        pgm::write_labels(dirs[1].join(format!("{name}.pgm")), &s.labels)?;
        let model = ModelFile::Oracle {
            params: cfg.gen.params.clone(),
            labels: PathBuf::from("../labels").join(format!("{name}.pgm")),
            window: cfg.oracle_fov,
        };
        save_model(dirs[2].join(format!("{name}.model")), &model)?;
        println!("{name} instances={} requested={}", s.placed, s.requested);
    }
    Ok(())
}

fn fit(cfg: &PipelineConfig, out: &Path, images: &[PathBuf]) -> Result<()> {
    let images = images
        .iter()
        .map(pgm::read_image)
        .collect::<igmseg_core::Result<Vec<_>>>()?;
    let report = fit_local_stats(&images, &cfg.fit.bandwidths, &cfg.fit.sampler, cfg.fit.seed)?;
    for w in &report.warnings {
        warn!("{w}");
    }
    println!("{:>10} {:>14} {:>12}", "bandwidth", "residual_var", "mean_nll");
    for row in &report.table {
        println!("{:>10} {:>14.6e} {:>12.6}", row.bandwidth, row.residual_variance, row.mean_nll);
    }
    save_model(out, &ModelFile::LocalStats(report.model.clone()))?;
    println!("selected bandwidth={}", report.model.bandwidth);
    Ok(())
}

fn affinities(
    cfg: &PipelineConfig,
    model: &Path,
    out: &Path,
    images: &[PathBuf],
    workers: usize,
) -> Result<()> {
    let model = load_model(model)?;
    let nbhd = AffinityNeighborhood::default();
    cfg.sweep.validate(&nbhd)?;
    let to_dir = images.len() > 1 || out.is_dir();
    if to_dir {
        create_dir(out)?;
    }
    for path in images {
        let image = pgm::read_image(path)?;
        let target = if to_dir {
            let stem = path
                .file_stem()
                .with_context(|| format!("{} has no file name", path.display()))?;
            out.join(stem).with_extension("iaf")
        } else {
            out.to_path_buf()
        };
        info!("sweeping {}", path.display());
        let field = sweep(&image, model.as_ref(), &cfg.sweep, &nbhd, workers)?;
        field.write(&target)?;
        println!("{} -> {}", path.display(), target.display());
    }
    Ok(())
}

fn read_foreground(path: &Path) -> Result<igmseg_core::PixelMask> {
    Ok(pgm::read_labels(path)?.foreground())
}

fn segment_cmd(
    affinities: &Path,
    alpha: f64,
    foreground: Option<&Path>,
    min_segment: usize,
    out: &Path,
) -> Result<()> {
    let field = AffinityField::read(affinities)?;
    let foreground = foreground.map(read_foreground).transpose()?;
    let cfg = MwsConfig {
        alpha,
        foreground,
        min_segment,
    };
    let labels = segment(&field, &cfg, &AffinityNeighborhood::default())?;
    pgm::write_labels(out, &labels)?;
    println!("segments={}", labels.segment_count());
    Ok(())
}

/// Files with `extension` in `dir`, sorted by name.
fn list(dir: &Path, extension: &str) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::with_path(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == extension))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("{}: no .{extension} files", dir.display());
    }
    Ok(files)
}

fn partner(dir: &Path, file: &Path, extension: &str) -> Result<PathBuf> {
    let stem = file.file_stem().context("file without a name")?;
    let path = dir.join(stem).with_extension(extension);
    if !path.is_file() {
        bail!("{}: missing counterpart of {}", path.display(), file.display());
    }
    Ok(path)
}

fn write_csv(out: Option<&Path>, thresholds: &[f64], rows: &[MetricRow]) -> Result<()> {
    if let Some(path) = out {
        fs::write(path, csv_report(thresholds, rows)).map_err(|e| Error::with_path(path, e))?;
    }
    Ok(())
}

fn evaluate(
    pred: &Path,
    gt: &Path,
    thresholds: &[f64],
    sparse_gt: bool,
    method: &str,
    out: Option<&Path>,
) -> Result<()> {
    let opts = MetricOptions { sparse_gt };
    let mut tables = Vec::new();
    for gt_path in list(gt, "pgm")? {
        let pred_path = partner(pred, &gt_path, "pgm")?;
        let g = pgm::read_labels(&gt_path)?;
        let p = pgm::read_labels(&pred_path)?;
        tables.push(
            MatchTable::compute(&g, &p, opts).with_context(|| format!("scoring {}", pred_path.display()))?,
        );
    }
    let row = MetricRow::from_tables(method, None, &tables, thresholds)?;
    print!("{}", table_report(thresholds, std::slice::from_ref(&row)));
    write_csv(out, thresholds, &[row])
}

fn sweep_alpha(
    cfg: &PipelineConfig,
    affinities: &Path,
    gt: &Path,
    alphas: &[f64],
    true_fg: bool,
    thresholds: &[f64],
    out: Option<&Path>,
) -> Result<()> {
    if alphas.is_empty() {
        bail!("empty alpha grid");
    }
    let nbhd = AffinityNeighborhood::default();
    let mut pairs = Vec::new();
    for aff in list(affinities, "iaf")? {
        let gt_path = partner(gt, &aff, "pgm")?;
        pairs.push((AffinityField::read(&aff)?, pgm::read_labels(&gt_path)?));
    }
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let mut tables = Vec::with_capacity(pairs.len());
        for (field, labels) in &pairs {
            let mws = MwsConfig {
                alpha,
                foreground: true_fg.then(|| labels.foreground()),
                min_segment: cfg.mws.min_segment,
            };
            let pred = segment(field, &mws, &nbhd)?;
            tables.push(MatchTable::compute(labels, &pred, MetricOptions::default())?);
        }
        rows.push(MetricRow::from_tables("mws", Some(alpha), &tables, thresholds)?);
    }
    print!("{}", table_report(thresholds, &rows));
    let best = rows
        .iter()
        .reduce(|best, r| if r.seg > best.seg { r } else { best })
        .expect("non-empty grid");
    println!("best_alpha={} seg={:.6}", best.alpha.unwrap_or_default(), best.seg);
    write_csv(out, thresholds, &rows)
}
