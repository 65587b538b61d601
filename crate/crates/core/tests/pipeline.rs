use stable_excursions::excursion::{euler_characteristic, threshold, CellMinima};
use stable_excursions::fields::{conditioned_spec, simulate_concatenated, simulate_subgaussian, FieldGrid, GaussianFieldSpec};
use stable_excursions::harness::{simulate_replicates, ExperimentConfig};
use stable_excursions::sampling::{RngStream, SpectralMeasure};
use stable_excursions::theory::conditional_gaussian_mean_ec;
use stable_excursions::Rectangle;

#[test]
fn grid_file_round_trip_keeps_geometry() {
    let spec = GaussianFieldSpec::squared_exponential(1.0, 0.3, 2).unwrap();
    let t = Rectangle::new(vec![2.0, 1.5]).unwrap();
    let g = simulate_subgaussian(&spec, 1.4, &t, &[33, 25], RngStream::new(3, 9)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.bin");
    g.write_to(std::fs::File::create(&path).unwrap()).unwrap();
    let back = FieldGrid::read_from(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(back, g);
    for u in [-1.0, 0.0, 0.8, 2.5] {
        assert_eq!(euler_characteristic(&threshold(&back, u)), euler_characteristic(&threshold(&g, u)));
    }
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 3);
    assert!(FieldGrid::read_from(&bytes[..]).is_err());
}

#[test]
fn provenance_reproduces_conditional_law() {
    let mu = SpectralMeasure::uniform_ball(2, 4.0, 2.0).unwrap();
    let t = Rectangle::new(vec![1.0, 1.0]).unwrap();
    let g = simulate_concatenated(&mu, 1.3, 2, 50, &t, &[20, 20], RngStream::new(1, 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    g.write_to(std::fs::File::create(&path).unwrap()).unwrap();
    let back = FieldGrid::read_from(std::fs::File::open(&path).unwrap()).unwrap();
    let a = conditioned_spec(&g.provenance, mu.total_mass).unwrap();
    let b = conditioned_spec(&back.provenance, mu.total_mass).unwrap();
    assert_eq!(a, b);
    // far below the field the conditional mean EC is φ(T) = 1
    assert!((conditional_gaussian_mean_ec(&a, &t, -1e3).unwrap() - 1.0).abs() < 1e-12);
    let hi = conditional_gaussian_mean_ec(&a, &t, 1e3 * a.sigma_tilde_sq.sqrt()).unwrap();
    assert!(hi.abs() < 1e-12);
}

#[test]
fn simulated_replicates_follow_the_seed() {
    let text = r#"
seed = 42
replications = 4
levels = [0.0]

[field]
kind = "harmonisable"
alpha = 1.1
truncation = 30

[field.spectral_measure]
kind = "uniform_box"
half_widths = [3.0]
total_mass = 1.0

[domain]
sides = [5.0]
resolution = [64]
"#;
    let cfg = ExperimentConfig::from_toml(text).unwrap();
    let a = simulate_replicates(&cfg, 0, 4).unwrap();
    let b = simulate_replicates(&cfg, 2, 2).unwrap();
    assert_eq!(&a[2..], &b[..]);
    assert_ne!(a[0].values(), a[1].values());
    for g in &a {
        assert_eq!(g.provenance.gammas.as_ref().unwrap().len(), 30);
        let cm = CellMinima::new(g.values(), g.resolution());
        assert_eq!(cm.euler_at(&[0.0])[0], euler_characteristic(&threshold(g, 0.0)));
    }
    let mut other = cfg.clone();
    other.threads = Some(7);
    assert_eq!(other.digest(), cfg.digest());
    other.seed = 43;
    assert_ne!(other.digest(), cfg.digest());
}
