//! Result files: row counts, lossless sync-file round trip and fusion replay.

use mmw_slam::config::ExportFormat;
use mmw_slam::export::{read_sync_file, replay_mismatches, state_rows, sync_file, write_all, MetricRow, StateRow};
use mmw_slam::sim::{run_monte_carlo, run_single, RunMode, Scenario};

fn small_scenario() -> Scenario {
    Scenario {
        particles: 60,
        ..Scenario::default()
    }
}

#[test]
fn state_file_has_one_row_per_step_and_vehicle() {
    let scenario = small_scenario();
    let mc = run_monte_carlo(&scenario, RunMode::LocalPhd, 3, 2);
    let rows = state_rows(&mc);
    assert_eq!(rows.len(), 2 * scenario.steps * scenario.vehicles.len());
    assert!(rows
        .iter()
        .all(|r| (1..=40).contains(&r.k) && (1..=2).contains(&r.vehicle)));

    let dir = tempfile::tempdir().unwrap();
    write_all(dir.path(), &mc, &scenario, &[ExportFormat::Csv]).unwrap();
    let mut reader = csv::Reader::from_path(dir.path().join("states.csv")).unwrap();
    let read: Vec<StateRow> = reader.deserialize().map(Result::unwrap).collect();
    assert_eq!(read.len(), rows.len());
    let mut reader = csv::Reader::from_path(dir.path().join("metrics.csv")).unwrap();
    let metrics: Vec<MetricRow> = reader.deserialize().map(Result::unwrap).collect();
    assert!(metrics.iter().all(|m| m.runs == 2));
}

#[test]
fn sync_file_round_trips_and_replays_bit_for_bit() {
    let scenario = small_scenario();
    let mc = run_monte_carlo(&scenario, RunMode::FusionUlDl, 5, 1);
    let in_memory = sync_file(&mc, &scenario);
    assert_eq!(in_memory.syncs.len(), 16);

    let dir = tempfile::tempdir().unwrap();
    write_all(dir.path(), &mc, &scenario, &[ExportFormat::Json]).unwrap();
    let loaded = read_sync_file(&dir.path().join("syncs.json")).unwrap();
    assert_eq!(loaded, in_memory);
    assert!(replay_mismatches(&loaded).is_empty());
}

#[test]
fn tampered_sync_file_is_detected() {
    let scenario = small_scenario();
    let mc = run_monte_carlo(&scenario, RunMode::FusionUl, 5, 1);
    let mut file = sync_file(&mc, &scenario);
    let target = file
        .syncs
        .iter()
        .position(|s| !s.bs_map_after.sp.is_empty())
        .expect("some sync produces an SP map");
    file.syncs[target].bs_map_after.sp.components[0].weight *= 1.0 + 1e-12;
    assert_eq!(replay_mismatches(&file), vec![target]);
}

#[test]
fn uplink_only_leaves_vehicle_estimates_as_local_phd() {
    let scenario = small_scenario();
    let local = run_single(&scenario, RunMode::LocalPhd, 11, 0);
    let ul = run_single(&scenario, RunMode::FusionUl, 11, 0);
    assert_eq!(local.estimates, ul.estimates);
    assert!(local.syncs.is_empty());
    assert_eq!(ul.syncs.len(), 16);
}
