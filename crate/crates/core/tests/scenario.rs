use std::path::Path;

use gridshield::scenario::{bundled, load_scenario, load_scenario_with, ScenarioError, BUNDLED, DEFAULT_SEED};

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn every_bundled_scenario_loads_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in BUNDLED {
        let p = write(dir.path(), &format!("{name}.scn"), text);
        let cfg = load_scenario(&p).unwrap();
        assert_eq!(cfg.name, *name);
        assert!(cfg.agent_count() >= 2);
        assert!(!cfg.attacks.is_empty());
    }
}

#[test]
fn benchmark_matches_the_feeder() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load_scenario(write(dir.path(), "b.scn", bundled("canadian_urban").unwrap())).unwrap();
    assert_eq!(cfg.agent_count(), 4);
    assert!(cfg.agents.iter().all(|a| a.load_p == 2e6));
    assert_eq!(cfg.topology.bess_capacity_mwh, 1.0);
    assert!(cfg.leader_id >= cfg.agent_count());
    assert_eq!(cfg.graph.neighbors(1), vec![0, 2]);
}

#[test]
fn minimal_file_uses_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "m.scn", "[topology]\ndg_count = 3\n");
    let cfg = load_scenario(&p).unwrap();
    assert_eq!(cfg.name, "m");
    assert_eq!(cfg.sim.seed, DEFAULT_SEED);
    assert_eq!(cfg.sim.dt, 1e-4);
    assert_eq!(cfg.agent_count(), 3);
    assert!(cfg.attacks.is_empty());
}

#[test]
fn zero_timestep_is_rejected_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "z.scn", "[sim]\ntimestep = 0.0\n");
    match load_scenario(&p) {
        Err(ScenarioError::Semantic { path, .. }) => assert_eq!(path, "sim.timestep"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_key_is_a_parse_error_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "u.scn", "[sim]\nduraton = 0.5\n");
    let err = load_scenario(&p).unwrap_err().to_string();
    assert!(err.contains("duraton") && err.contains("line 2"), "{err}");
}

#[test]
fn missing_file_is_an_io_error() {
    assert!(matches!(load_scenario("/nonexistent/x.scn"), Err(ScenarioError::Io { .. })));
}

#[test]
fn missing_baseline_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "b.scn", "[detection]\nbaseline = \"nope.json\"\n");
    match load_scenario(&p) {
        Err(ScenarioError::Io { path, .. }) => assert!(path.ends_with("nope.json")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn overrides_reach_nested_fields() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "o.scn", bundled("canadian_urban").unwrap());
    let cfg = load_scenario_with(
        &p,
        &[
            "sim.duration=0.001".into(),
            "attacks[0].magnitude=3".into(),
            "agents.criticality=[0.1, 0.2, 0.3, 0.4]".into(),
        ],
    )
    .unwrap();
    assert_eq!(cfg.sim.steps(), 10);
    assert_eq!(cfg.attacks[0].magnitude, 3.0);
    assert_eq!(cfg.agents[3].criticality, 0.4);
    assert!(load_scenario_with(&p, &["attacks[5].magnitude=1".into()]).is_err());
}
