use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use honeycomb::bloch::BlochProblem;
use honeycomb::dirac_env::{domain_side, EnvelopeGrid, EnvelopePair, EnvelopeSpectrum};
use honeycomb::dirac_point::{self, DiracPointData, DEFAULT_DEGENERACY_TOL};
use honeycomb::harness::{
    ballistic_experiment, effective_dynamics_error, effective_mass_experiment, lipschitz_check, scaling_study,
    BackendConfig, BallisticConfig, EffectiveMassConfig, LipschitzConfig, Provenance, ScalingConfig,
};
use honeycomb::io::{self, BandCache, Config, Snapshot};
use honeycomb::lattice::Honeycomb;
use honeycomb::potential::FourierPotential;
use honeycomb::schrodinger::{build_wavepacket, split_step_evolve, FiberModel, Supercell};
use honeycomb::Error;

#[derive(Parser)]
#[command(name = "honeycomb", version, about = "Bloch bands, Dirac points and wave-packet dynamics on honeycomb lattices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Clone, Copy, Debug)]
enum Command {
    /// Lowest bands on a grid over the Brillouin zone.
    Bands,
    /// Locate the Dirac point at K and estimate λ♯.
    DiracPoint,
    /// Evolve the effective Dirac envelopes.
    DiracEvolve,
    /// Split-step evolution of a Dirac wave packet on a supercell.
    Evolve,
    /// Error scaling of the effective Dirac dynamics over the δ list.
    Validate,
    /// Group-velocity transport of a single-band packet.
    Ballistic,
    /// Band-edge spreading against the effective-mass tensor.
    Effmass,
    /// Empirical Lipschitz quotients of the bands.
    Lipschitz,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Bands => "bands",
            Command::DiracPoint => "dirac-point",
            Command::DiracEvolve => "dirac-evolve",
            Command::Evolve => "evolve",
            Command::Validate => "validate",
            Command::Ballistic => "ballistic",
            Command::Effmass => "effmass",
            Command::Lipschitz => "lipschitz",
        }
    }
}

struct Run {
    cfg: Config,
    hash: String,
    lattice: Honeycomb,
    potential: FourierPotential,
    out: PathBuf,
}

impl Run {
    fn provenance(&self, mut p: Provenance) -> Provenance {
        p.config_hash = Some(self.hash.clone());
        p
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn dirac_point(&self) -> Result<DiracPointData, Error> {
        dirac_point::detect(&self.lattice, &self.potential, self.cfg.discretization.cutoff, DEFAULT_DEGENERACY_TOL)
    }

    /// Writes `report.json` and returns whether the run passed.
    fn report<T: Serialize>(&self, command: Command, pass: bool, body: &T) -> Result<bool, Error> {
        let value = json!({
            "command": command.name(),
            "config_hash": self.hash,
            "pass": pass,
            "report": body,
        });
        io::write_json(&self.path("report.json"), &value)?;
        Ok(pass)
    }
}

fn bands(run: &Run) -> Result<bool, Error> {
    let d = &run.cfg.discretization;
    let problem = BlochProblem::with_cutoff(run.lattice, run.potential.clone(), d.cutoff)?;
    let kpoints = io::zone_grid(&run.lattice, d.kgrid);
    let table = BandCache::new(run.path("cache")).band_grid(&problem, &kpoints, d.bands)?;
    io::write_bands_csv(&run.path("bands.csv"), &table)?;
    let ranges: Vec<[f64; 2]> = (0..d.bands)
        .map(|b| {
            let v = table.values.iter().map(|row| row[b]);
            [v.clone().fold(f64::INFINITY, f64::min), v.fold(f64::NEG_INFINITY, f64::max)]
        })
        .collect();
    let prov = run.provenance(Provenance::new(run.potential.hash_hex(), d.cutoff).with("kgrid", d.kgrid as f64));
    run.report(Command::Bands, true, &json!({ "provenance": prov, "kpoints": kpoints.len(), "band_ranges": ranges }))
}

fn dirac(run: &Run) -> Result<bool, Error> {
    let mut dp = run.dirac_point()?;
    let problem = BlochProblem::with_cutoff(run.lattice, run.potential.clone(), run.cfg.discretization.cutoff)?;
    let fit = dirac_point::attach_cone_fit(&mut dp, &problem, 12)?;
    io::write_json(&run.path("dirac_point.json"), &dp)?;
    let rel = (fit.slope - dp.lambda_abs()).abs() / dp.lambda_abs();
    let body = json!({
        "provenance": run.provenance(Provenance::new(dp.potential_hash.clone(), dp.cutoff)),
        "mu_star": dp.mu_star,
        "b1": dp.b1,
        "lambda_sharp": [dp.lambda_sharp.re, dp.lambda_sharp.im],
        "lambda_abs": dp.lambda_abs(),
        "cone_fit_slope": fit.slope,
        "cone_fit_rel_diff": rel,
        "residuals": {
            "degeneracy_gap": dp.degeneracy_gap,
            "isolation": dp.isolation,
            "sigma_one_weight": dp.sigma_one_weight,
            "zeta2": dp.checks.zeta2_residual,
            "self_term": dp.checks.self_term,
            "conjugate_pairing": dp.checks.conjugate_pairing,
            "cone_isotropy": fit.isotropy,
            "cone_ring_max_error": fit.ring_max_error,
            "cone_validity_radius": fit.validity_radius,
        },
    });
    run.report(Command::DiracPoint, rel < 1e-3, &body)
}

fn dirac_evolve(run: &Run) -> Result<bool, Error> {
    let dp = run.dirac_point()?;
    let e = &run.cfg.experiment;
    let t = e.t_final.unwrap_or(10.0);
    let side = domain_side(&e.envelope, dp.lambda_abs(), t);
    let grid = EnvelopeGrid::new(run.lattice, 64, side)?;
    let env0 = EnvelopePair::from_preset(grid, dp.lambda_sharp, &e.envelope);
    let env_t = env0.propagate(t);
    Snapshot::from_envelope(&env0, 1.0, 0.0).write(&run.path("envelope_t0.bin"))?;
    Snapshot::from_envelope(&env_t, 1.0, t).write(&run.path("envelope_t.bin"))?;
    io::write_envelope_csv(&run.path("envelope_t.csv"), &env_t)?;
    let (n0, n1) = (env0.conserved_norms(1), env_t.conserved_norms(1));
    let drift = n0.iter().zip(&n1).map(|(a, b)| (a - b).abs() / a).fold(0.0, f64::max);
    let body = json!({
        "provenance": run.provenance(Provenance::new(dp.potential_hash.clone(), dp.cutoff).with("side", side).with("points", 64.0)),
        "t": t,
        "norms_initial": n0,
        "norms_final": n1,
        "max_rel_drift": drift,
        "spectral_tail": env0.spectral_tail(0.8),
    });
    run.report(Command::DiracEvolve, drift < 1e-10 && env0.resolves_spectrum(), &body)
}

fn evolve(run: &Run) -> Result<bool, Error> {
    let dp = run.dirac_point()?;
    let d = &run.cfg.discretization;
    let e = &run.cfg.experiment;
    let delta = *e.deltas.first().ok_or_else(|| Error::Config("experiment.deltas is empty".into()))?;
    let t = e.t_final.unwrap_or(1.0);
    let dt = d.dt.unwrap_or_else(|| BackendConfig::default_dt(&run.lattice));
    let cell = Supercell::at_vertex(run.lattice, d.n1, d.p)?;
    let grid = EnvelopeGrid::new(run.lattice, d.n1, d.n1 as f64 * delta * run.lattice.a())?;
    let env = EnvelopeSpectrum::periodized(grid, dp.lambda_sharp, &e.envelope);
    let wp = build_wavepacket(&env, &dp, delta, &cell)?;
    let model = FiberModel::new(cell, run.potential.clone())?;
    let psi0 = wp.field();
    let (psi, step) = split_step_evolve(&psi0, &model, t, dt)?;
    Snapshot::from_field(&psi0, delta, 0.0).write(&run.path("psi_t0.bin"))?;
    Snapshot::from_field(&psi, delta, t).write(&run.path("psi_t.bin"))?;
    io::write_density_slice(&run.path("density_slice.csv"), &psi, cell.grid_len() / 2)?;
    let err = effective_dynamics_error(&psi.to_fibers(), &env.propagate(delta * t), &dp, delta, t, &wp.fibers)?;
    let prov = Provenance::new(dp.potential_hash.clone(), dp.cutoff)
        .with("n", d.n1 as f64)
        .with("p", d.p as f64)
        .with("delta", delta)
        .with("dt", step.dt);
    let body = json!({
        "provenance": run.provenance(prov),
        "t": t,
        "steps": step.steps,
        "norm_drift": step.norm_drift,
        "max_phase_per_step": step.max_phase_per_step,
        "error": err,
    });
    run.report(Command::Evolve, true, &body)
}

fn validate(run: &Run) -> Result<bool, Error> {
    let dp = run.dirac_point()?;
    let e = &run.cfg.experiment;
    let cfg = ScalingConfig {
        deltas: e.deltas.clone(),
        rho: e.rho,
        eps1: e.eps1,
        preset: e.envelope,
        time_cap: e.t_final,
        ..ScalingConfig::default()
    };
    let mut report = scaling_study(&run.lattice, &run.potential, &dp, &cfg)?;
    report.kind = e.kind.clone();
    report.provenance = run.provenance(report.provenance);
    io::write_scaling_csv(&run.path("scaling.csv"), &report)?;
    run.report(Command::Validate, report.pass, &report)
}

fn ktilde_or(run: &Run, default: [f64; 2]) -> [f64; 2] {
    run.cfg.ktilde(&run.lattice).unwrap_or(default)
}

fn smallest_delta(run: &Run) -> Result<f64, Error> {
    run.cfg
        .experiment
        .deltas
        .iter()
        .cloned()
        .reduce(f64::min)
        .ok_or_else(|| Error::Config("experiment.deltas is empty".into()))
}

fn ballistic(run: &Run) -> Result<bool, Error> {
    let k = run.lattice.vertex_k();
    let e = &run.cfg.experiment;
    let mut cfg = BallisticConfig::at(ktilde_or(run, [0.5 * k[0], 0.5 * k[1]]), e.band, smallest_delta(run)?);
    cfg.t_final = e.t_final;
    cfg.width = e.envelope.width();
    let mut r = ballistic_experiment(&run.lattice, &run.potential, &cfg)?;
    r.provenance = run.provenance(r.provenance);
    run.report(Command::Ballistic, r.pass, &r)
}

fn effmass(run: &Run) -> Result<bool, Error> {
    let e = &run.cfg.experiment;
    let mut cfg = EffectiveMassConfig::at(ktilde_or(run, [0.0, 0.0]), e.band, smallest_delta(run)?);
    cfg.width = e.envelope.width();
    let mut r = effective_mass_experiment(&run.lattice, &run.potential, &cfg)?;
    r.provenance = run.provenance(r.provenance);
    run.report(Command::Effmass, r.pass, &r)
}

fn lipschitz(run: &Run) -> Result<bool, Error> {
    let e = &run.cfg.experiment;
    let cfg = LipschitzConfig {
        npairs: e.npairs,
        bands: run.cfg.discretization.bands,
        seed: e.seed,
        ..LipschitzConfig::default()
    };
    let mut r = lipschitz_check(&run.lattice, &run.potential, run.cfg.discretization.cutoff, &cfg)?;
    r.provenance = run.provenance(r.provenance);
    run.report(Command::Lipschitz, r.finite, &r)
}

fn load(config: Option<&Path>, out: PathBuf) -> Result<Run, Error> {
    let cfg = match config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    Ok(Run { hash: cfg.hash(), lattice: cfg.lattice()?, potential: cfg.potential()?, cfg, out })
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Io { .. } | Error::Domain(_) => 2,
        Error::Numerical(_) | Error::NotADiracPoint { .. } | Error::SymmetryViolation(_) | Error::ConeFitFailure(_) => 3,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::Io { .. } => "io",
        Error::Domain(_) => "domain",
        Error::Numerical(_) => "numerical",
        Error::NotADiracPoint { .. } => "not-a-dirac-point",
        Error::SymmetryViolation(_) => "symmetry-violation",
        Error::ConeFitFailure(_) => "cone-fit-failure",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load(cli.config.as_deref(), cli.out).and_then(|run| match cli.command {
        Command::Bands => bands(&run),
        Command::DiracPoint => dirac(&run),
        Command::DiracEvolve => dirac_evolve(&run),
        Command::Evolve => evolve(&run),
        Command::Validate => validate(&run),
        Command::Ballistic => ballistic(&run),
        Command::Effmass => effmass(&run),
        Command::Lipschitz => lipschitz(&run),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{}", json!({ "command": cli.command.name(), "status": "fail" }));
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("{}", json!({ "command": cli.command.name(), "error": error_kind(&e), "message": e.to_string() }));
            ExitCode::from(exit_code(&e))
        }
    }
}
