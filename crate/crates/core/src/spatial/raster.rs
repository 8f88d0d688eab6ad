//! Gridding of point values and the ESRI ASCII grid writer.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{idw_interpolate, kriging_interpolate, SpatialIndex, VariogramModel};
use crate::error::{Error, Result};
use crate::par;

/// Regular grid: `origin` is the lower-left corner, cells are square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: [f64; 2],
    pub cell_size: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.cell_size <= 0.0 || !self.cell_size.is_finite() {
            return Err(Error::Config(format!(
                "cell_size {} must be positive",
                self.cell_size
            )));
        }
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::Config("grid needs nx, ny >= 1".into()));
        }
        Ok(())
    }

    /// Center of cell (ix, iy); iy counts up from the southern edge.
    pub fn cell_center(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.origin[0] + (ix as f64 + 0.5) * self.cell_size,
            self.origin[1] + (iy as f64 + 0.5) * self.cell_size,
        ]
    }

    /// Smallest square-cell grid of `nx` x `ny` covering all points.
    pub fn covering(points: &[[f64; 2]], nx: usize, ny: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Validation("no points to cover".into()));
        }
        let (mut x0, mut y0, mut x1, mut y1) =
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            x0 = x0.min(p[0]);
            y0 = y0.min(p[1]);
            x1 = x1.max(p[0]);
            y1 = y1.max(p[1]);
        }
        let w = (x1 - x0).max(1e-9);
        let h = (y1 - y0).max(1e-9);
        let cell = (w / nx as f64).max(h / ny as f64);
        let spec = GridSpec {
            origin: [x0, y0],
            cell_size: cell,
            nx,
            ny,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Which interpolator fills the raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InterpMethod {
    Idw { power: f64, k_max: usize },
    Kriging { model: VariogramModel, k_max: usize },
}

/// Interpolated surface, row-major with `iy * nx + ix`, iy from the south.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterLayer {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    /// True where the cell holds a valid value.
    pub mask: Vec<bool>,
}

impl RasterLayer {
    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.grid.nx + ix]
    }
}

/// Interpolate one value per cell center. Cells are independent, so the work
/// is partitioned across rows.
pub fn rasterize(
    index: &SpatialIndex,
    values: &[f64],
    grid: &GridSpec,
    method: &InterpMethod,
) -> Result<RasterLayer> {
    grid.validate()?;
    if values.len() != index.len() {
        return Err(Error::Dimension("values misaligned with index".into()));
    }
    let nx = grid.nx;
    let rows = par::map_indexed(grid.ny, |iy| {
        let mut row = Vec::with_capacity(nx);
        for ix in 0..nx {
            let q = grid.cell_center(ix, iy);
            let cell = match method {
                InterpMethod::Idw { power, k_max } => {
                    idw_interpolate(index, values, q, *power, *k_max).ok()
                }
                InterpMethod::Kriging { model, k_max } => {
                    kriging_interpolate(index, values, model, q, *k_max)
                        .ok()
                        .map(|e| e.value)
                }
            };
            row.push(cell);
        }
        row
    });
    let mut out_values = Vec::with_capacity(nx * grid.ny);
    let mut mask = Vec::with_capacity(nx * grid.ny);
    for row in rows {
        for cell in row {
            match cell {
                Some(v) => {
                    out_values.push(v);
                    mask.push(true);
                }
                None => {
                    out_values.push(0.0);
                    mask.push(false);
                }
            }
        }
    }
    Ok(RasterLayer {
        grid: *grid,
        values: out_values,
        mask,
    })
}

/// Write the layer as an ESRI ASCII grid (NODATA = -9999, rows north to
/// south).
pub fn write_esri_ascii<P: AsRef<Path>>(path: P, layer: &RasterLayer) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_esri_ascii_writer(file, layer)
}

pub fn write_esri_ascii_writer<W: Write>(mut w: W, layer: &RasterLayer) -> Result<()> {
    let g = &layer.grid;
    writeln!(w, "ncols {}", g.nx)?;
    writeln!(w, "nrows {}", g.ny)?;
    writeln!(w, "xllcorner {}", g.origin[0])?;
    writeln!(w, "yllcorner {}", g.origin[1])?;
    writeln!(w, "cellsize {}", g.cell_size)?;
    writeln!(w, "NODATA_value -9999")?;
    for iy in (0..g.ny).rev() {
        let mut line = String::new();
        for ix in 0..g.nx {
            if ix > 0 {
                line.push(' ');
            }
            let i = iy * g.nx + ix;
            if layer.mask[i] {
                line.push_str(&format!("{}", layer.values[i]));
            } else {
                line.push_str("-9999");
            }
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}
