//! Run configuration and the artifacts written by the experiments.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64 as c64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bloch::{BandStructure, BlochProblem};
use crate::dirac_env::{EnvelopePair, EnvelopePreset};
use crate::error::{Error, Result};
use crate::harness::SimulationReport;
use crate::lattice::{Honeycomb, Vec2};
use crate::potential::{hex, CoefficientRow, FourierPotential};
use crate::schrodinger::Field;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeSection {
    pub a: f64,
}

impl Default for LatticeSection {
    fn default() -> Self {
        Self { a: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialKind {
    ThreeCosine,
    /// Explicit `(m1, m2, re, im)` rows, scaled by `eps`.
    Coefficients,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PotentialSection {
    pub kind: PotentialKind,
    pub eps: f64,
    pub coefficients: Vec<CoefficientRow>,
}

impl Default for PotentialSection {
    fn default() -> Self {
        Self { kind: PotentialKind::ThreeCosine, eps: 1.0, coefficients: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscretizationSection {
    /// Plane-wave cutoff: indices with `|m1|, |m2| <= M`.
    #[serde(rename = "M")]
    pub cutoff: i32,
    /// Grid points per cell side.
    pub p: usize,
    /// Supercell cells along `v1` and `v2`.
    pub n1: usize,
    pub n2: usize,
    /// Split-step time step; `None` picks the lattice default.
    pub dt: Option<f64>,
    /// Points per side of the k grid used for band tables.
    pub kgrid: usize,
    pub bands: usize,
}

impl Default for DiscretizationSection {
    fn default() -> Self {
        Self { cutoff: 8, p: 16, n1: 8, n2: 8, dt: None, kgrid: 30, bands: 6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Free-form tag copied into reports.
    pub kind: String,
    pub deltas: Vec<f64>,
    pub rho: f64,
    pub eps1: f64,
    pub envelope: EnvelopePreset,
    pub seed: u64,
    /// Evolution time for single runs; experiment defaults apply when absent.
    pub t_final: Option<f64>,
    /// Quasi-momentum for the single-band regimes, in dual coordinates
    /// (`k = s1 k1 + s2 k2`).
    pub ktilde: Option<[f64; 2]>,
    pub band: usize,
    pub npairs: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            kind: "scaling".into(),
            deltas: vec![0.5, 0.25, 0.125],
            rho: 1.0,
            eps1: 1.0,
            envelope: EnvelopePreset::default(),
            seed: 1,
            t_final: None,
            ktilde: None,
            band: 1,
            npairs: 10_000,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub lattice: LatticeSection,
    pub potential: PotentialSection,
    pub discretization: DiscretizationSection,
    pub experiment: ExperimentSection,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let d = &self.discretization;
        if d.n1 != d.n2 {
            return Err(Error::Config(format!("only square supercells are supported (n1 = {}, n2 = {})", d.n1, d.n2)));
        }
        if d.cutoff < 1 {
            return Err(Error::Config(format!("M must be at least 1, got {}", d.cutoff)));
        }
        if d.bands == 0 || d.kgrid == 0 {
            return Err(Error::Config("bands and kgrid must be positive".into()));
        }
        if let Some(dt) = d.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::Config(format!("dt must be positive, got {dt}")));
            }
        }
        if self.potential.kind == PotentialKind::Coefficients && self.potential.coefficients.is_empty() {
            return Err(Error::Config("potential kind 'coefficients' needs at least one row".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the parsed configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(json))
    }

    pub fn lattice(&self) -> Result<Honeycomb> {
        Honeycomb::new(self.lattice.a)
    }

    pub fn potential(&self) -> Result<FourierPotential> {
        match self.potential.kind {
            PotentialKind::ThreeCosine => FourierPotential::three_cosine(self.potential.eps),
            PotentialKind::Coefficients => Ok(FourierPotential::from_rows(self.potential.eps, &self.potential.coefficients)),
        }
    }

    /// `ktilde` as a Cartesian quasi-momentum, if set.
    pub fn ktilde(&self, lattice: &Honeycomb) -> Option<Vec2> {
        self.experiment.ktilde.map(|s| lattice.dual.point(s[0], s[1]))
    }
}

fn create(path: &Path) -> Result<fs::File> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| Error::io(path, e.into()))?;
    f.write_all(b"\n").map_err(|e| Error::io(path, e))
}

/// Columns `kx, ky, b, mu` with one-based band index.
pub fn write_bands_csv(path: &Path, bands: &BandStructure) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| csv_error(path, e);
    w.write_record(["kx", "ky", "b", "mu"]).map_err(err)?;
    for (k, mu) in bands.kpoints.iter().zip(&bands.values) {
        for (b, m) in mu.iter().enumerate() {
            w.serialize((k[0], k[1], b + 1, m)).map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One row per `δ`. Runtimes are left out so reruns produce identical files.
pub fn write_scaling_csv(path: &Path, report: &SimulationReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| csv_error(path, e);
    w.write_record([
        "delta",
        "t_final",
        "t_horizon",
        "capped",
        "sup_rel_err",
        "sup_abs_err",
        "sup_grad_rel_err",
        "t_at_sup",
        "cells",
        "fibers",
        "discarded_mass",
    ])
    .map_err(err)?;
    for r in &report.rows {
        w.serialize((
            r.delta,
            r.t_final,
            r.t_horizon,
            r.capped,
            r.sup_rel,
            r.sup_abs,
            r.sup_grad_rel,
            r.t_at_sup,
            r.cells,
            r.fibers,
            r.discarded_mass,
        ))
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `|ψ|²` along the grid row `j1` of a supercell field: columns `x, y, density`.
pub fn write_density_slice(path: &Path, field: &Field, j1: usize) -> Result<()> {
    let cell = field.cell;
    let nn = cell.grid_len();
    if j1 >= nn {
        return Err(Error::Domain(format!("row {j1} outside a grid of {nn}")));
    }
    let mut w = csv_writer(path)?;
    let err = |e| csv_error(path, e);
    w.write_record(["x", "y", "density"]).map_err(err)?;
    for j2 in 0..nn {
        let x = cell.point(j1, j2);
        w.serialize((x[0], x[1], field.data[j1 * nn + j2].norm_sqr())).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Envelope fields on their grid: columns `x, y, re1, im1, re2, im2`.
pub fn write_envelope_csv(path: &Path, env: &EnvelopePair) -> Result<()> {
    let g = env.grid;
    let mut w = csv_writer(path)?;
    let err = |e| csv_error(path, e);
    w.write_record(["x", "y", "re1", "im1", "re2", "im2"]).map_err(err)?;
    for j1 in 0..g.n {
        for j2 in 0..g.n {
            let x = g.point(j1, j2);
            let (a, b) = (env.alpha1[j1 * g.n + j2], env.alpha2[j1 * g.n + j2]);
            w.serialize((x[0], x[1], a.re, a.im, b.re, b.im)).map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"HCFIELD1";

/// Complex fields sampled on a parallelogram grid `x = (j1 v1 + j2 v2)·spacing/a`.
///
/// File layout, little-endian: magic, `components`, `n1`, `n2` as `u64`, then
/// `spacing`, `δ`, `t`, `twist_x`, `twist_y` as `f64`, then the samples of each
/// component in row-major order as interleaved `(re, im)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub dims: [usize; 2],
    pub spacing: f64,
    pub delta: f64,
    pub t: f64,
    pub twist: Vec2,
    pub components: Vec<Vec<c64>>,
}

impl Snapshot {
    pub fn from_field(field: &Field, delta: f64, t: f64) -> Self {
        let cell = field.cell;
        let nn = cell.grid_len();
        Self {
            dims: [nn, nn],
            spacing: cell.lattice.a() / cell.p as f64,
            delta,
            t,
            twist: cell.twist,
            components: vec![field.data.clone()],
        }
    }

    pub fn from_envelope(env: &EnvelopePair, delta: f64, t: f64) -> Self {
        let g = env.grid;
        Self {
            dims: [g.n, g.n],
            spacing: g.side / g.n as f64,
            delta,
            t,
            twist: [0.0, 0.0],
            components: vec![env.alpha1.clone(), env.alpha2.clone()],
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(64 + 16 * self.components.len() * self.dims[0] * self.dims[1]);
        buf.extend_from_slice(SNAPSHOT_MAGIC);
        for v in [self.components.len(), self.dims[0], self.dims[1]] {
            buf.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for v in [self.spacing, self.delta, self.t, self.twist[0], self.twist[1]] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for c in &self.components {
            for z in c {
                buf.extend_from_slice(&z.re.to_le_bytes());
                buf.extend_from_slice(&z.im.to_le_bytes());
            }
        }
        create(path)?.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        let bad = |what: &str| Error::Config(format!("{}: not a field snapshot ({what})", path.display()));
        if buf.len() < 72 || &buf[..8] != SNAPSHOT_MAGIC {
            return Err(bad("header"));
        }
        let word = |i: usize| -> [u8; 8] { buf[8 + 8 * i..16 + 8 * i].try_into().unwrap() };
        let ncomp = u64::from_le_bytes(word(0)) as usize;
        let dims = [u64::from_le_bytes(word(1)) as usize, u64::from_le_bytes(word(2)) as usize];
        let f = |i: usize| f64::from_le_bytes(word(i));
        let len = dims[0] * dims[1];
        if buf.len() != 72 + 16 * ncomp * len {
            return Err(bad("payload length"));
        }
        let payload = &buf[72..];
        let components = (0..ncomp)
            .map(|c| {
                (0..len)
                    .map(|i| {
                        let o = 16 * (c * len + i);
                        c64::new(
                            f64::from_le_bytes(payload[o..o + 8].try_into().unwrap()),
                            f64::from_le_bytes(payload[o + 8..o + 16].try_into().unwrap()),
                        )
                    })
                    .collect()
            })
            .collect();
        Ok(Self { dims, spacing: f(3), delta: f(4), t: f(5), twist: [f(6), f(7)], components })
    }
}

/// On-disk cache of band tables keyed by potential, cutoff and k grid.
pub struct BandCache {
    pub dir: PathBuf,
}

impl BandCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    fn key(problem: &BlochProblem, kpoints: &[Vec2], nbands: usize) -> String {
        let mut h = Sha256::new();
        h.update(problem.potential.hash_hex().as_bytes());
        h.update(problem.lattice.a().to_le_bytes());
        for m in problem.basis.indices() {
            h.update(m[0].to_le_bytes());
            h.update(m[1].to_le_bytes());
        }
        for k in kpoints {
            h.update(k[0].to_le_bytes());
            h.update(k[1].to_le_bytes());
        }
        h.update((nbands as u64).to_le_bytes());
        hex(&h.finalize())
    }

    pub fn path_for(&self, problem: &BlochProblem, kpoints: &[Vec2], nbands: usize) -> PathBuf {
        self.dir.join(format!("bands-{}.bin", &Self::key(problem, kpoints, nbands)[..24]))
    }

    /// Band table from the cache, computing and storing it on a miss.
    pub fn band_grid(&self, problem: &BlochProblem, kpoints: &[Vec2], nbands: usize) -> Result<BandStructure> {
        let path = self.path_for(problem, kpoints, nbands);
        if let Ok(bytes) = fs::read(&path) {
            let n = kpoints.len() * nbands;
            if bytes.len() == 8 * n {
                let flat: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                return Ok(BandStructure {
                    kpoints: kpoints.to_vec(),
                    nbands,
                    values: flat.chunks(nbands).map(|c| c.to_vec()).collect(),
                });
            }
        }
        let bands = problem.band_grid(kpoints, nbands)?;
        let bytes: Vec<u8> = bands.values.iter().flatten().flat_map(|v| v.to_le_bytes()).collect();
        create(&path)?.write_all(&bytes).map_err(|e| Error::io(&path, e))?;
        Ok(bands)
    }
}

/// Points per side `g` spread over the fundamental cell of the dual lattice
/// and reduced into the K-centred zone.
pub fn zone_grid(lattice: &Honeycomb, g: usize) -> Vec<Vec2> {
    let dual = lattice.dual;
    (0..g * g)
        .map(|i| dual.reduce_to_bz(dual.point((i / g) as f64 / g as f64, (i % g) as f64 / g as f64)).k)
        .collect()
}
