use std::path::PathBuf;

use num_complex::Complex64 as c64;

use honeycomb::bloch::BlochProblem;
use honeycomb::dirac_env::{EnvelopeGrid, EnvelopePair, EnvelopePreset, EnvelopeSpectrum};
use honeycomb::dirac_point::{detect, DEFAULT_DEGENERACY_TOL};
use honeycomb::harness::effective_dynamics_error;
use honeycomb::io::{zone_grid, BandCache, Config, Snapshot};
use honeycomb::lattice::Honeycomb;
use honeycomb::potential::FourierPotential;
use honeycomb::schrodinger::{build_wavepacket, Field, FiberModel, Supercell, SupercellBands};

fn workspace_file(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

#[test]
fn shipped_configs_parse() {
    for name in ["configs/default.toml", "configs/quick.toml"] {
        let cfg = Config::load(&workspace_file(name)).unwrap();
        cfg.potential().unwrap().require_honeycomb(&cfg.lattice().unwrap()).unwrap();
    }
    let cfg = Config::load(&workspace_file("configs/default.toml")).unwrap();
    assert_eq!(cfg.experiment.deltas, vec![0.5, 0.25, 0.125]);
    assert_eq!(cfg.discretization.cutoff, 8);
}

#[test]
fn constant_envelope_stays_in_the_eigenspace() {
    let h = Honeycomb::new(1.0).unwrap();
    let v = FourierPotential::three_cosine(1.0).unwrap();
    let dp = detect(&h, &v, 6, DEFAULT_DEGENERACY_TOL).unwrap();
    let delta = 0.5;
    let cell = Supercell::at_vertex(h, 4, 24).unwrap();
    let grid = EnvelopeGrid::new(h, 4, 4.0 * delta).unwrap();
    let mut hat1 = vec![c64::new(0.0, 0.0); 16];
    let mut hat2 = hat1.clone();
    hat1[0] = c64::new(0.6, 0.2);
    hat2[0] = c64::new(-0.3, 0.7);
    let env = EnvelopeSpectrum { grid, hat1, hat2, lambda_sharp: dp.lambda_sharp };
    let wp = build_wavepacket(&env, &dp, delta, &cell).unwrap();
    assert_eq!(wp.fibers.fibers.len(), 1);
    let bands = SupercellBands::for_field(FiberModel::new(cell, v).unwrap(), &wp.fibers).unwrap();
    for t in [0.0, 3.0, 50.0] {
        let psi = bands.bloch_evolve(&wp.fibers, t).unwrap();
        let e = effective_dynamics_error(&psi, &env.propagate(delta * t), &dp, delta, t, &wp.fibers).unwrap();
        assert!(e.rel < 1e-8, "t = {t}: {}", e.rel);
        if t == 0.0 {
            assert_eq!(e.abs, 0.0);
        }
    }
}

#[test]
fn snapshots_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let h = Honeycomb::new(1.0).unwrap();
    let cell = Supercell::at_vertex(h, 2, 4).unwrap();
    let field = Field::from_fn(cell, |x| c64::new(x[0].sin(), x[1].cos()));
    let snap = Snapshot::from_field(&field, 0.25, 1.5);
    let path = dir.path().join("psi.bin");
    snap.write(&path).unwrap();
    assert_eq!(Snapshot::read(&path).unwrap(), snap);

    let grid = EnvelopeGrid::new(h, 8, 6.0).unwrap();
    let env = EnvelopePair::from_preset(grid, c64::new(1.0, -2.0), &EnvelopePreset::GaussianPair { width: 1.0 });
    let snap = Snapshot::from_envelope(&env, 0.5, 0.0);
    snap.write(&path).unwrap();
    let back = Snapshot::read(&path).unwrap();
    assert_eq!(back.components.len(), 2);
    assert_eq!(back, snap);

    std::fs::write(&path, b"not a snapshot").unwrap();
    assert!(Snapshot::read(&path).is_err());
}

#[test]
fn band_cache_returns_the_computed_table() {
    let dir = tempfile::tempdir().unwrap();
    let h = Honeycomb::new(1.0).unwrap();
    let problem = BlochProblem::with_cutoff(h, FourierPotential::three_cosine(1.0).unwrap(), 4).unwrap();
    let kpoints = zone_grid(&h, 5);
    let cache = BandCache::new(dir.path());
    let first = cache.band_grid(&problem, &kpoints, 3).unwrap();
    assert!(cache.path_for(&problem, &kpoints, 3).exists());
    let second = cache.band_grid(&problem, &kpoints, 3).unwrap();
    assert_eq!(first.values, second.values);
    assert_eq!(first.values, problem.band_grid(&kpoints, 3).unwrap().values);

    let other = BlochProblem::with_cutoff(h, FourierPotential::three_cosine(2.0).unwrap(), 4).unwrap();
    assert_ne!(cache.path_for(&problem, &kpoints, 3), cache.path_for(&other, &kpoints, 3));
}
