use proptest::prelude::*;

use spinflip::effective::{Atom, MarkedMeasure};
use spinflip::geometry::sphere_point;
use spinflip::harness::io::{read_trajectory_jsonl, write_trajectory_jsonl};
use spinflip::harness::ExperimentConfig;
use spinflip::pdmp::{simulate_path, Checkpoint};
use spinflip::{DriftMode, Spin};

#[test]
fn reference_config_matches_defaults() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/reference.toml");
    let shipped = ExperimentConfig::from_path(std::path::Path::new(path)).unwrap();
    assert_eq!(shipped, ExperimentConfig::default());
}

#[test]
fn simulated_trajectory_survives_jsonl() {
    let mut cfg = ExperimentConfig::default();
    cfg.particles.n = 5;
    cfg.simulation.checkpoints = 11;
    let config = cfg.build_configuration().unwrap();
    let params = cfg.simulation_params().unwrap();
    let traj = simulate_path(&config, &params, 1.0, 3, DriftMode::Decoupled).unwrap();
    let mut buf = Vec::new();
    write_trajectory_jsonl(&mut buf, &traj.checkpoints, Some(&cfg.hash())).unwrap();
    let back: Vec<Checkpoint> = read_trajectory_jsonl(&buf[..]).unwrap();
    assert_eq!(back, traj.checkpoints);
}

fn atom_strategy() -> impl Strategy<Value = Atom> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0u8..3).prop_map(|(x, y, z, u, v, m)| Atom {
        position: nalgebra::Vector3::new(x, y, z),
        orientation: sphere_point(u, v),
        mark: [None, Some(Spin::Up), Some(Spin::Down)][m as usize],
    })
}

proptest! {
    #[test]
    fn marked_measure_csv_round_trip(atoms in prop::collection::vec(atom_strategy(), 1..12)) {
        let m = MarkedMeasure::uniform(atoms).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = MarkedMeasure::read_csv(&buf[..]).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn config_toml_round_trip(n in 1usize..200, eps in 1e-3f64..1.0, seed in any::<u64>()) {
        let mut c = ExperimentConfig::default();
        c.particles.n = n;
        c.particles.seed = seed;
        c.spin.epsilon = eps;
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        prop_assert_eq!(back.hash(), c.hash());
        prop_assert_eq!(back, c);
    }
}
