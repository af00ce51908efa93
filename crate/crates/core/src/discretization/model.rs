use super::Grid;
use crate::error::{Error, Result};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Wave speed on every node of the extended grid.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityModel {
    grid: Grid,
    c: Vec<f64>,
}

/// On-disk header of a grid file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFileHeader {
    pub nx: usize,
    pub nz: usize,
    pub npml: usize,
    pub h: f64,
    pub dtype: String,
    pub order: String,
    /// Payload file relative to the header; defaults to the header path with a `.bin` extension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
}

const ORDER: &str = "row-major, z-major blocks";

impl VelocityModel {
    pub fn new(grid: Grid, c: Vec<f64>) -> Result<Self> {
        if c.len() != grid.ext_len() {
            return Err(Error::DimensionMismatch { expected: grid.ext_len(), got: c.len() });
        }
        if let Some(bad) = c.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Model(format!("wave speed must be positive and finite, found {bad}")));
        }
        Ok(Self { grid, c })
    }

    pub fn constant(grid: Grid, c: f64) -> Result<Self> {
        let n = grid.ext_len();
        Self::new(grid, vec![c; n])
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Model of the swapped variables (x ↔ z).
    pub fn transposed(&self) -> Result<Self> {
        let g = &self.grid;
        let t = Grid::new(g.nz, g.nx, g.h, g.npml)?;
        let (ex, ez) = (g.ext_nx(), g.ext_nz());
        let mut c = vec![0.0; self.c.len()];
        for iz in 0..ez {
            for ix in 0..ex {
                c[iz + ez * ix] = self.c[ix + ex * iz];
            }
        }
        Self::new(t, c)
    }

    /// Same interior medium on a grid with `npml` collar points; the new
    /// collar repeats the nearest stored speed.
    pub fn with_npml(&self, npml: usize) -> Result<Self> {
        let g = &self.grid;
        let t = Grid::new(g.nx, g.nz, g.h, npml)?;
        let (xw, zw) = (t.x_window(), t.z_window());
        let mut c = Vec::with_capacity(t.ext_len());
        for r in 0..t.ext_nz() {
            for i in 0..t.ext_nx() {
                c.push(self.c_at(xw.local(i), zw.local(r)));
            }
        }
        Self::new(t, c)
    }

    pub fn speeds(&self) -> &[f64] {
        &self.c
    }

    /// Wave speed at global node (p, q), clamped onto the extended grid.
    #[inline]
    pub fn c_at(&self, p: i64, q: i64) -> f64 {
        let g = &self.grid;
        let lo = -(g.npml as i64) + 1;
        let px = p.clamp(lo, (g.nx + g.npml) as i64);
        let qz = q.clamp(lo, (g.nz + g.npml) as i64);
        let ix = (px - lo) as usize;
        let iz = (qz - lo) as usize;
        self.c[ix + g.ext_nx() * iz]
    }

    /// Squared slowness m = 1/c² at global node (p, q).
    #[inline]
    pub fn m_at(&self, p: i64, q: i64) -> f64 {
        let c = self.c_at(p, q);
        1.0 / (c * c)
    }

    pub fn c_min(&self) -> f64 {
        self.c.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn c_max(&self) -> f64 {
        self.c.iter().cloned().fold(0.0, f64::max)
    }

    /// Reads a model from a JSON header plus its binary (or CSV) payload.
    pub fn load(header_path: &Path) -> Result<Self> {
        let header: GridFileHeader = serde_json::from_reader(std::fs::File::open(header_path)?)?;
        if header.dtype != "f64" {
            return Err(Error::Model(format!("unsupported dtype {}", header.dtype)));
        }
        let grid = Grid::new(header.nx, header.nz, header.h, header.npml)?;
        let data = payload_path(header_path, &header);
        let values = if data.extension().is_some_and(|e| e == "csv") {
            read_csv(&data, grid.ext_nx(), grid.ext_nz())?
        } else {
            let bytes = std::fs::read(&data)?;
            if bytes.len() != 8 * grid.ext_len() {
                return Err(Error::Model(format!(
                    "payload {} holds {} bytes, expected {}",
                    data.display(),
                    bytes.len(),
                    8 * grid.ext_len()
                )));
            }
            bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect()
        };
        Self::new(grid, values)
    }

    /// Writes the JSON header and a little-endian binary payload next to it.
    pub fn save(&self, header_path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(8 * self.c.len());
        for v in &self.c {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        write_grid_file(header_path, &self.grid, "f64", &bytes)
    }
}

fn payload_path(header_path: &Path, header: &GridFileHeader) -> PathBuf {
    match &header.data {
        Some(name) => header_path.parent().unwrap_or(Path::new(".")).join(name),
        None => header_path.with_extension("bin"),
    }
}

fn read_csv(path: &Path, ext_nx: usize, ext_nz: usize) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).comment(Some(b'#')).from_path(path)?;
    let mut out = Vec::with_capacity(ext_nx * ext_nz);
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != ext_nx {
            return Err(Error::Model(format!("csv row has {} columns, expected {ext_nx}", rec.len())));
        }
        for field in rec.iter() {
            out.push(field.trim().parse::<f64>().map_err(|e| Error::Model(format!("csv value {field:?}: {e}")))?);
        }
    }
    if out.len() != ext_nx * ext_nz {
        return Err(Error::Model(format!("csv holds {} values, expected {}", out.len(), ext_nx * ext_nz)));
    }
    Ok(out)
}

fn write_grid_file(header_path: &Path, grid: &Grid, dtype: &str, bytes: &[u8]) -> Result<()> {
    let data = header_path.with_extension("bin");
    let header = GridFileHeader {
        nx: grid.nx,
        nz: grid.nz,
        npml: grid.npml,
        h: grid.h,
        dtype: dtype.to_string(),
        order: ORDER.to_string(),
        data: data.file_name().map(|n| n.to_string_lossy().into_owned()),
    };
    std::fs::write(header_path, serde_json::to_string_pretty(&header)?)?;
    std::fs::write(&data, bytes)?;
    Ok(())
}

/// Writes a complex wavefield on the extended grid (interleaved re/im f64 pairs).
pub fn save_wavefield(header_path: &Path, grid: &Grid, u: &[C64]) -> Result<()> {
    if u.len() != grid.ext_len() {
        return Err(Error::DimensionMismatch { expected: grid.ext_len(), got: u.len() });
    }
    let mut bytes = Vec::with_capacity(16 * u.len());
    for v in u {
        bytes.extend_from_slice(&v.re.to_le_bytes());
        bytes.extend_from_slice(&v.im.to_le_bytes());
    }
    write_grid_file(header_path, grid, "c128", &bytes)
}

/// Families of synthetic media.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SyntheticKind {
    Constant { c: f64 },
    VerticalGradient,
    RandomSmooth,
    LayeredInclusions,
}

impl std::str::FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(SyntheticKind::Constant { c: 1.0 }),
            "vertical-gradient" => Ok(SyntheticKind::VerticalGradient),
            "random-smooth" => Ok(SyntheticKind::RandomSmooth),
            "layered-inclusions" => Ok(SyntheticKind::LayeredInclusions),
            other => Err(Error::InvalidArgument(format!("unknown synthetic model kind {other:?}"))),
        }
    }
}

/// Deterministic synthetic medium with speeds in [1, 4.5].
pub fn synthetic_model(kind: SyntheticKind, seed: u64, grid: &Grid) -> Result<VelocityModel> {
    let (nxe, nze) = (grid.ext_nx(), grid.ext_nz());
    let npml = grid.npml as i64;
    // normalized physical coordinates, clamped so the PML repeats boundary values
    let xs: Vec<f64> = (0..nxe).map(|i| ((i as i64 - npml + 1) as f64 / (grid.nx + 1) as f64).clamp(0.0, 1.0)).collect();
    let zs: Vec<f64> = (0..nze).map(|j| ((j as i64 - npml + 1) as f64 / (grid.nz + 1) as f64).clamp(0.0, 1.0)).collect();
    let mut c = vec![0.0; nxe * nze];
    match kind {
        SyntheticKind::Constant { c: v } => c.iter_mut().for_each(|x| *x = v),
        SyntheticKind::VerticalGradient => {
            for j in 0..nze {
                for i in 0..nxe {
                    c[i + nxe * j] = 1.5 + 2.0 * zs[j];
                }
            }
        }
        SyntheticKind::RandomSmooth => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise: Vec<f64> = (0..nxe * nze).map(|_| rng.sample(StandardNormal)).collect();
            let width = 3.0f64.max(0.06 * grid.nx.min(grid.nz) as f64);
            let smooth = gaussian_filter(&noise, nxe, nze, width);
            let mean = smooth.iter().sum::<f64>() / smooth.len() as f64;
            let amp = smooth.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max).max(1e-300);
            for (dst, v) in c.iter_mut().zip(&smooth) {
                *dst = 2.0 + 0.5 * (v - mean) / amp;
            }
        }
        SyntheticKind::LayeredInclusions => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let speeds = [1.5, 2.0, 2.6, 3.2];
            let breaks: Vec<f64> = (1..speeds.len()).map(|k| k as f64 / speeds.len() as f64 + rng.random_range(-0.05..0.05)).collect();
            let tilt = rng.random_range(-0.1..0.1);
            let inclusions = [
                (rng.random_range(0.25..0.45), rng.random_range(0.3..0.5), 0.12, 4.5),
                (rng.random_range(0.55..0.75), rng.random_range(0.55..0.75), 0.09, 1.0),
            ];
            for j in 0..nze {
                for i in 0..nxe {
                    let (x, z) = (xs[i], zs[j]);
                    let depth = z + tilt * (x - 0.5);
                    let layer = breaks.iter().filter(|b| depth >= **b).count();
                    let mut v = speeds[layer];
                    for &(cx, cz, r, vi) in &inclusions {
                        if (x - cx).powi(2) + (z - cz).powi(2) <= r * r {
                            v = vi;
                        }
                    }
                    c[i + nxe * j] = v;
                }
            }
        }
    }
    VelocityModel::new(grid.clone(), c)
}

/// Separable Gaussian smoothing with standard deviation `width` grid steps.
fn gaussian_filter(src: &[f64], nx: usize, nz: usize, width: f64) -> Vec<f64> {
    let r = (3.0 * width).ceil() as i64;
    let kernel: Vec<f64> = (-r..=r).map(|k| (-(k * k) as f64 / (2.0 * width * width)).exp()).collect();
    let pass = |input: &[f64], along_x: bool| -> Vec<f64> {
        let mut out = vec![0.0; input.len()];
        for j in 0..nz as i64 {
            for i in 0..nx as i64 {
                let mut acc = 0.0;
                for (t, w) in kernel.iter().enumerate() {
                    let k = t as i64 - r;
                    let (ii, jj) = if along_x { ((i + k).clamp(0, nx as i64 - 1), j) } else { (i, (j + k).clamp(0, nz as i64 - 1)) };
                    acc += w * input[(ii + nx as i64 * jj) as usize];
                }
                out[(i + nx as i64 * j) as usize] = acc;
            }
        }
        out
    };
    let tmp = pass(src, true);
    pass(&tmp, false)
}
