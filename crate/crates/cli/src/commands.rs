//! The gridmap, synth, and inspect subcommands.

use std::path::{Path, PathBuf};

use clap::Args;

use geochem::error::{Error, Result};
use geochem::geodata::{parse_deposits_csv, parse_survey_csv, write_deposits_csv, write_survey_csv};
use geochem::spatial::{
    fit_variogram, rasterize, write_esri_ascii, GridSpec, InterpMethod, RasterLayer, SpatialIndex,
    VariogramKind,
};
use geochem::synth::{generate_survey, write_ground_truth_csv, SynthConfig};

#[derive(Args)]
pub struct GridmapArgs {
    /// Scored CSV produced by `run` (SAMPLEID, x, y, score).
    pub scored_csv: PathBuf,
    /// Output raster path (ESRI ASCII grid).
    #[arg(short, long)]
    pub out: PathBuf,
    /// Grid columns.
    #[arg(long, default_value_t = 64)]
    pub nx: usize,
    /// Grid rows.
    #[arg(long, default_value_t = 64)]
    pub ny: usize,
    /// Cell size; derived from the data bounds when omitted.
    #[arg(long)]
    pub cell: Option<f64>,
    /// Lower-left corner x; derived from the data bounds when omitted.
    #[arg(long)]
    pub origin_x: Option<f64>,
    /// Lower-left corner y; derived from the data bounds when omitted.
    #[arg(long)]
    pub origin_y: Option<f64>,
    /// Interpolation method: idw or kriging.
    #[arg(long, default_value = "idw")]
    pub method: String,
    /// IDW power.
    #[arg(long, default_value_t = 2.0)]
    pub power: f64,
    /// Neighbour cap per interpolated cell.
    #[arg(long, default_value_t = 32)]
    pub k_max: usize,
    /// Variogram model for kriging: spherical or exponential.
    #[arg(long, default_value = "spherical")]
    pub variogram: String,
    /// Lag bins for the variogram fit.
    #[arg(long, default_value_t = 12)]
    pub n_lags: usize,
    /// Deposit CSV to overlay as an indicator raster next to the output.
    #[arg(long)]
    pub deposits: Option<PathBuf>,
}

/// Parse a scored CSV back into (ids, positions, scores).
pub fn read_scored_csv(path: &Path) -> Result<(Vec<String>, Vec<[f64; 2]>, Vec<f64>)> {
    let mut rdr = csv::Reader::from_path(path).map_err(Error::from)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (id_c, x_c, y_c, s_c) = (col("SAMPLEID")?, col("x")?, col("y")?, col("score")?);
    let mut ids = Vec::new();
    let mut positions = Vec::new();
    let mut scores = Vec::new();
    for (row_idx, record) in rdr.records().enumerate() {
        let line = row_idx + 2;
        let record = record?;
        let parse = |c: usize, what: &str| -> Result<f64> {
            record
                .get(c)
                .unwrap_or("")
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Row {
                    line,
                    msg: format!("unparseable {what}"),
                })
        };
        ids.push(record.get(id_c).unwrap_or("").to_string());
        positions.push([parse(x_c, "x")?, parse(y_c, "y")?]);
        scores.push(parse(s_c, "score")?);
    }
    if positions.is_empty() {
        return Err(Error::Validation("scored CSV has no rows".into()));
    }
    Ok((ids, positions, scores))
}

pub fn cmd_gridmap(args: &GridmapArgs) -> Result<()> {
    let (_, positions, scores) = read_scored_csv(&args.scored_csv)?;
    let index = SpatialIndex::build(&positions)?;

    let grid = match (args.cell, args.origin_x, args.origin_y) {
        (Some(cell), Some(x0), Some(y0)) => GridSpec {
            origin: [x0, y0],
            cell_size: cell,
            nx: args.nx,
            ny: args.ny,
        },
        (None, None, None) => GridSpec::covering(&positions, args.nx, args.ny)?,
        _ => {
            return Err(Error::Config(
                "give all of --cell/--origin-x/--origin-y or none".into(),
            ))
        }
    };

    let method = match args.method.as_str() {
        "idw" => InterpMethod::Idw {
            power: args.power,
            k_max: args.k_max,
        },
        "kriging" => {
            let kind = match args.variogram.as_str() {
                "spherical" => VariogramKind::Spherical,
                "exponential" => VariogramKind::Exponential,
                other => {
                    return Err(Error::Config(format!(
                        "unknown variogram model `{other}`"
                    )))
                }
            };
            let model = fit_variogram(&index, &scores, kind, args.n_lags)?;
            InterpMethod::Kriging {
                model,
                k_max: args.k_max,
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown interpolation method `{other}`"
            )))
        }
    };

    let layer = rasterize(&index, &scores, &grid, &method)?;
    write_esri_ascii(&args.out, &layer)?;
    println!("wrote {}", args.out.display());

    if let Some(dep_path) = &args.deposits {
        let deposits = parse_deposits_csv(dep_path)?;
        let overlay = deposit_indicator_layer(&grid, &deposits);
        let overlay_path = overlay_path_for(&args.out);
        write_esri_ascii(&overlay_path, &overlay)?;
        println!("wrote {}", overlay_path.display());
    }
    Ok(())
}

/// Indicator raster: 1 in cells containing at least one deposit, else 0.
fn deposit_indicator_layer(
    grid: &GridSpec,
    deposits: &[geochem::geodata::DepositSite],
) -> RasterLayer {
    let mut values = vec![0.0; grid.nx * grid.ny];
    for d in deposits {
        let ix = ((d.position[0] - grid.origin[0]) / grid.cell_size).floor() as i64;
        let iy = ((d.position[1] - grid.origin[1]) / grid.cell_size).floor() as i64;
        if (0..grid.nx as i64).contains(&ix) && (0..grid.ny as i64).contains(&iy) {
            values[iy as usize * grid.nx + ix as usize] = 1.0;
        }
    }
    RasterLayer {
        grid: *grid,
        mask: vec![true; values.len()],
        values,
    }
}

fn overlay_path_for(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("grid");
    let ext = out.extension().and_then(|s| s.to_str()).unwrap_or("asc");
    out.with_file_name(format!("{stem}_deposits.{ext}"))
}

#[derive(Args)]
pub struct SynthArgs {
    /// Generator configuration (TOML mirroring SynthConfig); defaults are
    /// used when omitted.
    pub config: Option<PathBuf>,
    /// Output directory for survey.csv, deposits.csv, ground_truth.csv.
    #[arg(long, default_value = "synth_out")]
    pub out_dir: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read synth config {}: {e}", path.display()))
            })?;
            toml::from_str(&text)
                .map_err(|e| Error::Config(format!("invalid synth config: {e}")))?
        }
        None => SynthConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let (survey, deposits, truth) = generate_survey(&cfg)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let survey_path = args.out_dir.join("survey.csv");
    let deposits_path = args.out_dir.join("deposits.csv");
    let truth_path = args.out_dir.join("ground_truth.csv");
    write_survey_csv(&survey_path, &survey)?;
    write_deposits_csv(&deposits_path, &deposits)?;
    write_ground_truth_csv(&truth_path, &survey, &truth)?;
    println!(
        "wrote {} samples, {} deposits under {}",
        survey.n_samples(),
        deposits.len(),
        args.out_dir.display()
    );
    Ok(())
}

pub fn cmd_inspect(survey_path: &Path) -> Result<()> {
    let survey = parse_survey_csv(survey_path, None)?;
    let positions = survey.positions();
    let index = SpatialIndex::build(&positions)?;
    let (mut x0, mut y0, mut x1, mut y1) = (
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    );
    for p in &positions {
        x0 = x0.min(p[0]);
        y0 = y0.min(p[1]);
        x1 = x1.max(p[0]);
        y1 = y1.max(p[1]);
    }
    println!("samples: {}", survey.n_samples());
    println!("elements: {}", survey.n_elements());
    println!("crs: {}", survey.crs_tag);
    println!("extent: x [{x0}, {x1}], y [{y0}, {y1}]");
    println!("area: {}", (x1 - x0) * (y1 - y0));
    match index.average_sampling_distance() {
        Ok(d) => println!("average sampling distance: {d}"),
        Err(_) => println!("average sampling distance: n/a (single sample)"),
    }
    Ok(())
}
