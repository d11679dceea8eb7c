//! Deformable terrain: a grid of vertical soil-cell stacks.
//!
//! Each horizontal cell holds a column of [`SoilCell`] layers from bedrock
//! upward; every layer carries material, compaction, and a fill fraction, and
//! its mass is always `density * compaction * fill * resolution^2 *
//! cell_height`. Excavation removes fill from the top of columns and turns
//! it into dynamic particles, deposition stacks loose material back on, and
//! compaction trades fill height for density under pressure (track ruts).
//! Mass is conserved by construction across all of it.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::soil::SoilMaterial;
use crate::GRAVITY_M_S2;

/// Loosest compaction a cell can take (fresh deposits land here).
pub const COMPACTION_MIN: f64 = 0.8;
/// Densest compaction a cell can reach under load.
pub const COMPACTION_MAX: f64 = 1.2;
/// Compaction gain per application per unit pressure/stiffness ratio.
pub const COMPACTION_RATE: f64 = 1.0;

/// Particle radius range, m.
pub const PARTICLE_RADIUS_MIN: f64 = 0.02;
pub const PARTICLE_RADIUS_MAX: f64 = 0.05;
/// Below this speed a grounded particle counts as resting, m/s.
pub const PARTICLE_REST_SPEED: f64 = 0.05;
/// Consecutive resting steps before a particle is folded into the grid.
pub const PARTICLE_SETTLE_TICKS: u32 = 5;
/// Horizontal velocity retained per step while in ground contact.
const GROUND_DAMPING: f64 = 0.7;

const FILL_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TerrainError {
    #[error("query ({x:.3}, {y:.3}) outside terrain bounds")]
    OutOfBounds { x: f64, y: f64 },
    #[error("cell ({i}, {j}) outside grid ({nx} x {ny})")]
    CellOutOfBounds { i: usize, j: usize, nx: usize, ny: usize },
    #[error("unknown terrain material `{0}`")]
    UnknownMaterial(String),
    #[error("invalid terrain parameters: {0}")]
    InvalidParams(String),
    #[error("invalid DEM: {0}")]
    InvalidDem(String),
    #[error("terrain I/O on `{path}`: {source}")]
    Io { path: String, source: io::Error },
}

/// Index into the grid's material palette.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MatId(pub u16);

/// One vertical layer of a terrain column.
#[derive(Debug, Clone, PartialEq)]
pub struct SoilCell {
    pub material: MatId,
    /// Density multiplier relative to nominal, in [COMPACTION_MIN, COMPACTION_MAX].
    pub compaction: f64,
    /// Filled fraction of the layer height, in [0, 1].
    pub fill_fraction: f64,
}

/// A loose soil particle in flight or settling.
#[derive(Debug, Clone, PartialEq)]
pub struct SoilParticle {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub mass: f64,
    pub radius: f64,
    pub material: MatId,
    pub rest_ticks: u32,
}

/// Construction parameters for a uniform grid.
#[derive(Debug, Clone)]
pub struct TerrainParams {
    pub width_m: f64,
    pub length_m: f64,
    pub resolution_m: f64,
    pub cell_height_m: f64,
    pub initial_height_m: f64,
    pub material: String,
    pub origin: (f64, f64),
}

impl Default for TerrainParams {
    fn default() -> Self {
        Self {
            width_m: 50.0,
            length_m: 50.0,
            resolution_m: 0.25,
            cell_height_m: 0.1,
            initial_height_m: 1.0,
            material: "dirt".into(),
            origin: (0.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Column {
    cells: Vec<SoilCell>,
}

/// Result of removing a depth of material from one column.
#[derive(Debug, Clone, Default)]
pub struct CutResult {
    /// Mass removed per material, kg.
    pub removed: Vec<(MatId, f64)>,
    /// Depth that could not be removed because bedrock was reached, m.
    pub shortfall: f64,
}

/// Result of a footprint excavation.
#[derive(Debug, Default)]
pub struct Excavation {
    pub removed_mass: f64,
    pub shortfall_depth: f64,
    pub particles: Vec<SoilParticle>,
}

/// Layered-column deformable terrain grid.
#[derive(Debug, Clone)]
pub struct TerrainGrid {
    resolution: f64,
    cell_height: f64,
    nx: usize,
    ny: usize,
    origin: (f64, f64),
    bedrock: f64,
    materials: Vec<SoilMaterial>,
    default_material: MatId,
    columns: Vec<Column>,
    heights: Vec<f64>,
}

impl TerrainGrid {
    pub fn new(params: &TerrainParams, materials: &[SoilMaterial]) -> Result<Self, TerrainError> {
        if !(params.resolution_m > 0.0) || !(params.cell_height_m > 0.0) {
            return Err(TerrainError::InvalidParams(
                "resolution and cell height must be > 0".into(),
            ));
        }
        if !(params.width_m >= params.resolution_m) || !(params.length_m >= params.resolution_m) {
            return Err(TerrainError::InvalidParams(
                "terrain must span at least one cell".into(),
            ));
        }
        if !(params.initial_height_m >= 0.0) {
            return Err(TerrainError::InvalidParams(
                "initial height must be >= 0".into(),
            ));
        }
        let default_material = materials
            .iter()
            .position(|m| m.name == params.material)
            .ok_or_else(|| TerrainError::UnknownMaterial(params.material.clone()))?;

        let nx = (params.width_m / params.resolution_m).round().max(1.0) as usize;
        let ny = (params.length_m / params.resolution_m).round().max(1.0) as usize;

        let full = ((params.initial_height_m / params.cell_height_m) + 1e-9).floor();
        let remainder = (params.initial_height_m - full * params.cell_height_m).max(0.0);
        let mut cells = Vec::with_capacity(full as usize + 1);
        for _ in 0..full as usize {
            cells.push(SoilCell {
                material: MatId(default_material as u16),
                compaction: 1.0,
                fill_fraction: 1.0,
            });
        }
        if remainder / params.cell_height_m > FILL_EPS {
            cells.push(SoilCell {
                material: MatId(default_material as u16),
                compaction: 1.0,
                fill_fraction: (remainder / params.cell_height_m).min(1.0),
            });
        }
        let column = Column { cells };
        let mut grid = Self {
            resolution: params.resolution_m,
            cell_height: params.cell_height_m,
            nx,
            ny,
            origin: params.origin,
            bedrock: 0.0,
            materials: materials.to_vec(),
            default_material: MatId(default_material as u16),
            columns: vec![column; nx * ny],
            heights: vec![0.0; nx * ny],
        };
        for idx in 0..grid.columns.len() {
            grid.refresh_height(idx);
        }
        Ok(grid)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn cell_height(&self) -> f64 {
        self.cell_height
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    /// World-space extent: (xmin, ymin, xmax, ymax).
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        (
            self.origin.0,
            self.origin.1,
            self.origin.0 + self.nx as f64 * self.resolution,
            self.origin.1 + self.ny as f64 * self.resolution,
        )
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (x0, y0, x1, y1) = self.bounds();
        x >= x0 && x <= x1 && y >= y0 && y <= y1
    }

    pub fn material(&self, id: MatId) -> &SoilMaterial {
        &self.materials[id.0 as usize]
    }

    pub fn material_id(&self, name: &str) -> Option<MatId> {
        self.materials
            .iter()
            .position(|m| m.name == name)
            .map(|i| MatId(i as u16))
    }

    pub fn default_material(&self) -> MatId {
        self.default_material
    }

    /// Material of the topmost non-empty layer, or the grid default when the
    /// column is cut to bedrock.
    pub fn top_material(&self, i: usize, j: usize) -> MatId {
        self.columns[self.index(i, j)]
            .cells
            .last()
            .map(|c| c.material)
            .unwrap_or(self.default_material)
    }

    pub fn column_cells(&self, i: usize, j: usize) -> &[SoilCell] {
        &self.columns[self.index(i, j)].cells
    }

    /// Mass of one layer under this grid's geometry, kg.
    pub fn cell_mass(&self, cell: &SoilCell) -> f64 {
        self.material(cell.material).density
            * cell.compaction
            * cell.fill_fraction
            * self.resolution
            * self.resolution
            * self.cell_height
    }

    fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    fn refresh_height(&mut self, idx: usize) {
        let sum: f64 = self.columns[idx]
            .cells
            .iter()
            .map(|c| c.fill_fraction * self.cell_height)
            .sum();
        self.heights[idx] = self.bedrock + sum;
    }

    /// Surface elevation of the column stack at cell (i, j).
    pub fn column_height(&self, i: usize, j: usize) -> f64 {
        self.heights[self.index(i, j)]
    }

    /// World position of the center of cell (i, j).
    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.origin.0 + (i as f64 + 0.5) * self.resolution,
            self.origin.1 + (j as f64 + 0.5) * self.resolution,
        )
    }

    /// Cell containing the world point, or `None` outside the grid.
    pub fn cell_at(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !self.contains(x, y) {
            return None;
        }
        let i = (((x - self.origin.0) / self.resolution) as usize).min(self.nx - 1);
        let j = (((y - self.origin.1) / self.resolution) as usize).min(self.ny - 1);
        Some((i, j))
    }

    /// Bilinear surface height at a world point.
    pub fn surface_height(&self, x: f64, y: f64) -> Result<f64, TerrainError> {
        if !self.contains(x, y) {
            return Err(TerrainError::OutOfBounds { x, y });
        }
        let u = (x - self.origin.0) / self.resolution - 0.5;
        let v = (y - self.origin.1) / self.resolution - 0.5;
        let i0 = u.floor().clamp(0.0, (self.nx - 1) as f64) as usize;
        let j0 = v.floor().clamp(0.0, (self.ny - 1) as f64) as usize;
        let i1 = (i0 + 1).min(self.nx - 1);
        let j1 = (j0 + 1).min(self.ny - 1);
        let fx = (u - i0 as f64).clamp(0.0, 1.0);
        let fy = (v - j0 as f64).clamp(0.0, 1.0);
        let h00 = self.column_height(i0, j0);
        let h10 = self.column_height(i1, j0);
        let h01 = self.column_height(i0, j1);
        let h11 = self.column_height(i1, j1);
        Ok(h00 * (1.0 - fx) * (1.0 - fy)
            + h10 * fx * (1.0 - fy)
            + h01 * (1.0 - fx) * fy
            + h11 * fx * fy)
    }

    /// Remove up to `depth` meters of material from the top of column (i, j).
    ///
    /// Cuts below bedrock are clamped; the unmet depth comes back as
    /// `shortfall`.
    pub fn remove_depth(&mut self, i: usize, j: usize, depth: f64) -> CutResult {
        let idx = self.index(i, j);
        let area = self.resolution * self.resolution;
        let mut remaining = depth.max(0.0);
        let mut result = CutResult::default();
        while remaining > FILL_EPS {
            let Some(top) = self.columns[idx].cells.last_mut() else {
                result.shortfall = remaining;
                break;
            };
            let available = top.fill_fraction * self.cell_height;
            let take = remaining.min(available);
            let dfill = take / self.cell_height;
            let mass = self.materials[top.material.0 as usize].density
                * top.compaction
                * dfill
                * area
                * self.cell_height;
            top.fill_fraction -= dfill;
            let material = top.material;
            let emptied = top.fill_fraction < FILL_EPS;
            if emptied {
                self.columns[idx].cells.pop();
            }
            match result.removed.iter_mut().find(|(m, _)| *m == material) {
                Some((_, acc)) => *acc += mass,
                None => result.removed.push((material, mass)),
            }
            remaining -= take;
        }
        self.refresh_height(idx);
        result
    }

    /// Add loose mass on top of column (i, j).
    ///
    /// A partially filled top layer is topped up first (at its own material
    /// and compaction, which keeps its mass identity exact); the remainder
    /// stacks as new layers of the deposited material at loose compaction.
    pub fn deposit_mass(&mut self, i: usize, j: usize, material: MatId, mass: f64) {
        if mass <= 0.0 {
            return;
        }
        let idx = self.index(i, j);
        let area = self.resolution * self.resolution;
        let layer_volume = area * self.cell_height;
        let mut remaining = mass;
        if let Some(top) = self.columns[idx].cells.last_mut() {
            if top.fill_fraction < 1.0 - FILL_EPS {
                let rho = self.materials[top.material.0 as usize].density;
                let unit = rho * top.compaction * layer_volume;
                let capacity = unit * (1.0 - top.fill_fraction);
                let add = remaining.min(capacity);
                top.fill_fraction = (top.fill_fraction + add / unit).min(1.0);
                remaining -= add;
            }
        }
        if remaining > 0.0 {
            let rho = self.materials[material.0 as usize].density;
            let full_mass = rho * COMPACTION_MIN * layer_volume;
            while remaining >= full_mass {
                self.columns[idx].cells.push(SoilCell {
                    material,
                    compaction: COMPACTION_MIN,
                    fill_fraction: 1.0,
                });
                remaining -= full_mass;
            }
            if remaining > 0.0 {
                self.columns[idx].cells.push(SoilCell {
                    material,
                    compaction: COMPACTION_MIN,
                    fill_fraction: remaining / full_mass,
                });
            }
        }
        self.refresh_height(idx);
    }

    /// Fold resting particles back into the grid.
    pub fn deposit(&mut self, particles: &[SoilParticle]) {
        for p in particles {
            let (x, y) = self.clamp_into_bounds(p.position.x, p.position.y);
            let (i, j) = self.cell_at(x, y).expect("clamped point is in bounds");
            self.deposit_mass(i, j, p.material, p.mass);
        }
    }

    /// Compact the top layer of each listed column under a pressure.
    ///
    /// Compaction rises by `COMPACTION_RATE * pressure / E` per application,
    /// capped at [`COMPACTION_MAX`]; fill shrinks to keep the layer mass
    /// unchanged, which is what carves ruts.
    pub fn compact(&mut self, cells: &[(usize, usize)], pressure: f64) {
        if pressure <= 0.0 {
            return;
        }
        for &(i, j) in cells {
            let idx = self.index(i, j);
            if let Some(top) = self.columns[idx].cells.last_mut() {
                let young = self.materials[top.material.0 as usize].young_modulus;
                let dc = COMPACTION_RATE * pressure / young;
                let c_new = (top.compaction + dc).min(COMPACTION_MAX);
                if c_new > top.compaction {
                    top.fill_fraction *= top.compaction / c_new;
                    top.compaction = c_new;
                }
            }
            self.refresh_height(idx);
        }
    }

    /// Remove material from a footprint and convert all of it to particles.
    pub fn excavate(
        &mut self,
        footprint: &[((usize, usize), f64)],
        rng: &mut ChaCha8Rng,
    ) -> Result<Excavation, TerrainError> {
        for &((i, j), depth) in footprint {
            if i >= self.nx || j >= self.ny {
                return Err(TerrainError::CellOutOfBounds {
                    i,
                    j,
                    nx: self.nx,
                    ny: self.ny,
                });
            }
            if depth < 0.0 {
                return Err(TerrainError::InvalidParams(format!(
                    "cut depth {depth} at ({i}, {j}) must be >= 0"
                )));
            }
        }
        let mut out = Excavation::default();
        for &((i, j), depth) in footprint {
            let cut = self.remove_depth(i, j, depth);
            out.shortfall_depth += cut.shortfall;
            let (cx, cy) = self.cell_center(i, j);
            let surface = self.column_height(i, j);
            for (mat, mass) in cut.removed {
                out.removed_mass += mass;
                let m = self.material(mat);
                let center = Vector3::new(cx, cy, surface + 0.05);
                out.particles.extend(spawn_particles(
                    mass,
                    mat,
                    m.density,
                    m.swell_factor,
                    center,
                    self.resolution * 0.4,
                    Vector3::zeros(),
                    rng,
                ));
            }
        }
        Ok(out)
    }

    /// Deterministic list of columns whose centers fall inside an oriented
    /// rectangle (half extents along/across the heading).
    pub fn columns_in_rect(
        &self,
        cx: f64,
        cy: f64,
        half_long: f64,
        half_lat: f64,
        heading: f64,
    ) -> Vec<(usize, usize)> {
        let radius = half_long.hypot(half_lat);
        let i_min = (((cx - radius - self.origin.0) / self.resolution - 0.5).floor()).max(0.0) as usize;
        let j_min = (((cy - radius - self.origin.1) / self.resolution - 0.5).floor()).max(0.0) as usize;
        let i_max = ((((cx + radius - self.origin.0) / self.resolution) + 0.5).ceil() as usize)
            .min(self.nx.saturating_sub(1));
        let j_max = ((((cy + radius - self.origin.1) / self.resolution) + 0.5).ceil() as usize)
            .min(self.ny.saturating_sub(1));
        let (sh, ch) = heading.sin_cos();
        let mut cells = Vec::new();
        for j in j_min..=j_max.min(self.ny - 1) {
            for i in i_min..=i_max.min(self.nx - 1) {
                let (px, py) = self.cell_center(i, j);
                let dx = px - cx;
                let dy = py - cy;
                let u = ch * dx + sh * dy;
                let v = -sh * dx + ch * dy;
                if u.abs() <= half_long && v.abs() <= half_lat {
                    cells.push((i, j));
                }
            }
        }
        cells
    }

    fn clamp_into_bounds(&self, x: f64, y: f64) -> (f64, f64) {
        let (x0, y0, x1, y1) = self.bounds();
        let eps = 1e-9;
        (x.clamp(x0 + eps, x1 - eps), y.clamp(y0 + eps, y1 - eps))
    }

    /// Sum of all layer masses, kg.
    pub fn total_cell_mass(&self) -> f64 {
        self.columns
            .iter()
            .flat_map(|c| c.cells.iter())
            .map(|cell| self.cell_mass(cell))
            .sum()
    }

    /// Write the surface as an ESRI ASCII grid.
    pub fn export_dem<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "ncols {}", self.nx)?;
        writeln!(w, "nrows {}", self.ny)?;
        writeln!(w, "xllcorner {:.6}", self.origin.0)?;
        writeln!(w, "yllcorner {:.6}", self.origin.1)?;
        writeln!(w, "cellsize {:.6}", self.resolution)?;
        writeln!(w, "NODATA_value -9999")?;
        for j in (0..self.ny).rev() {
            let mut line = String::with_capacity(self.nx * 9);
            for i in 0..self.nx {
                if i > 0 {
                    line.push(' ');
                }
                line.push_str(&format!("{:.6}", self.column_height(i, j)));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn export_dem_path<P: AsRef<Path>>(&self, path: P) -> Result<(), TerrainError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|source| TerrainError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.export_dem(BufWriter::new(file))
            .map_err(|source| TerrainError::Io {
                path: path.display().to_string(),
                source,
            })
    }
}

/// A parsed ESRI ASCII grid.
#[derive(Debug, Clone)]
pub struct DemGrid {
    pub ncols: usize,
    pub nrows: usize,
    pub xllcorner: f64,
    pub yllcorner: f64,
    pub cellsize: f64,
    /// Heights in file order: first row is the northernmost (max y).
    pub heights: Vec<f64>,
}

impl DemGrid {
    /// Height at grid cell (i, j) with j = 0 the southernmost row, matching
    /// [`TerrainGrid::column_height`] indexing.
    pub fn height_at(&self, i: usize, j: usize) -> f64 {
        self.heights[(self.nrows - 1 - j) * self.ncols + i]
    }
}

/// Parse an ESRI ASCII grid produced by [`TerrainGrid::export_dem`].
pub fn parse_dem<R: Read>(reader: R) -> Result<DemGrid, TerrainError> {
    let mut lines = BufReader::new(reader).lines();
    let mut header = |key: &str| -> Result<f64, TerrainError> {
        let line = lines
            .next()
            .transpose()
            .map_err(|e| TerrainError::InvalidDem(e.to_string()))?
            .ok_or_else(|| TerrainError::InvalidDem(format!("missing header `{key}`")))?;
        let mut parts = line.split_whitespace();
        let k = parts
            .next()
            .ok_or_else(|| TerrainError::InvalidDem(format!("empty header line for `{key}`")))?;
        if k != key {
            return Err(TerrainError::InvalidDem(format!(
                "expected header `{key}`, found `{k}`"
            )));
        }
        parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| TerrainError::InvalidDem(format!("bad value for `{key}`")))
    };
    let ncols = header("ncols")? as usize;
    let nrows = header("nrows")? as usize;
    let xllcorner = header("xllcorner")?;
    let yllcorner = header("yllcorner")?;
    let cellsize = header("cellsize")?;
    let _nodata = header("NODATA_value")?;
    let mut heights = Vec::with_capacity(ncols * nrows);
    for line in lines {
        let line = line.map_err(|e| TerrainError::InvalidDem(e.to_string()))?;
        for tok in line.split_whitespace() {
            heights.push(
                tok.parse()
                    .map_err(|_| TerrainError::InvalidDem(format!("bad height `{tok}`")))?,
            );
        }
    }
    if heights.len() != ncols * nrows {
        return Err(TerrainError::InvalidDem(format!(
            "expected {} heights, found {}",
            ncols * nrows,
            heights.len()
        )));
    }
    Ok(DemGrid {
        ncols,
        nrows,
        xllcorner,
        yllcorner,
        cellsize,
        heights,
    })
}

/// Break a mass of bank material into loose particles.
///
/// Radii are drawn uniformly; each particle's mass is its loose volume
/// divided by the swell factor times bank density, and the final particle
/// absorbs the remainder exactly so the total is conserved bit-for-bit.
#[allow(clippy::too_many_arguments)]
pub fn spawn_particles(
    total_mass: f64,
    material: MatId,
    density: f64,
    swell_factor: f64,
    center: Vector3<f64>,
    spread: f64,
    base_velocity: Vector3<f64>,
    rng: &mut ChaCha8Rng,
) -> Vec<SoilParticle> {
    use std::f64::consts::PI;
    let mut particles = Vec::new();
    let mut remaining = total_mass;
    while remaining > 0.0 {
        let radius = rng.gen_range(PARTICLE_RADIUS_MIN..PARTICLE_RADIUS_MAX);
        let mass = density * (4.0 / 3.0) * PI * radius.powi(3) / swell_factor;
        let (mass, radius) = if mass >= remaining {
            let r = (3.0 * remaining * swell_factor / (4.0 * PI * density)).cbrt();
            (remaining, r)
        } else {
            (mass, radius)
        };
        let jitter = Vector3::new(
            rng.gen_range(-spread..=spread),
            rng.gen_range(-spread..=spread),
            rng.gen_range(0.0..=2.0 * radius),
        );
        particles.push(SoilParticle {
            position: center + jitter,
            velocity: base_velocity,
            mass,
            radius,
            material,
            rest_ticks: 0,
        });
        remaining -= mass;
    }
    particles
}

/// Advance all particles one tick: explicit Euler under gravity, surface
/// clamping with contact damping, and rest detection that deposits settled
/// particles back into the grid.
pub fn step_particles(grid: &mut TerrainGrid, particles: &mut Vec<SoilParticle>, dt: f64) {
    debug_assert!(dt > 0.0);
    let mut settled = Vec::new();
    for (idx, p) in particles.iter_mut().enumerate() {
        p.position += p.velocity * dt;
        p.velocity.z -= GRAVITY_M_S2 * dt;
        let (x, y) = grid.clamp_into_bounds(p.position.x, p.position.y);
        p.position.x = x;
        p.position.y = y;
        let surface = grid
            .surface_height(x, y)
            .expect("clamped point is in bounds");
        let mut contact = false;
        if p.position.z - p.radius <= surface + 1e-9 {
            p.position.z = surface + p.radius;
            if p.velocity.z < 0.0 {
                p.velocity.z = 0.0;
            }
            p.velocity.x *= GROUND_DAMPING;
            p.velocity.y *= GROUND_DAMPING;
            contact = true;
        }
        if contact && p.velocity.norm() < PARTICLE_REST_SPEED {
            p.rest_ticks += 1;
        } else {
            p.rest_ticks = 0;
        }
        if p.rest_ticks >= PARTICLE_SETTLE_TICKS {
            settled.push(idx);
        }
    }
    if !settled.is_empty() {
        let mut keep = Vec::with_capacity(particles.len() - settled.len());
        for (idx, p) in particles.drain(..).enumerate() {
            if settled.binary_search(&idx).is_ok() {
                grid.deposit(std::slice::from_ref(&p));
            } else {
                keep.push(p);
            }
        }
        *particles = keep;
    }
}

/// Conservation audit: grid mass plus airborne particle mass, kg.
pub fn total_mass(grid: &TerrainGrid, particles: &[SoilParticle]) -> f64 {
    grid.total_cell_mass() + particles.iter().map(|p| p.mass).sum::<f64>()
}
