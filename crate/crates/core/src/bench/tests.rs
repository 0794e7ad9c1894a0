use proptest::prelude::*;

use super::*;
use crate::interp::InterpLimits;

fn local() -> Target {
    Target::Local(InterpLimits::default())
}

/// Sort-and-index p99 with two-pass mean and SD.
fn naive(samples: &[f64]) -> (f64, f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = (0.99 * n).ceil() as usize;
    (mean, var.sqrt(), s[rank - 1])
}

#[test]
fn constant_distribution() {
    let s = stats(&[0.7; 1000]).unwrap();
    assert_eq!(s.mean, 0.7);
    assert_eq!(s.sd, 0.0);
    assert_eq!(s.p99, 0.7);
    assert_eq!(s.n, 1000);
}

#[test]
fn one_to_hundred() {
    let v: Vec<f64> = (1..=100).map(f64::from).collect();
    let s = stats(&v).unwrap();
    assert_eq!(s.mean, 50.5);
    // Variance of 1..n with divisor n − 1 is n(n + 1) / 12.
    let sd = (100.0f64 * 101.0 / 12.0).sqrt();
    assert!((s.sd - sd).abs() < 1e-9, "{}", s.sd);
    assert!((s.sd - 29.0115).abs() < 1e-4);
    assert_eq!(s.p99, 99.0);
}

#[test]
fn empty_and_single() {
    assert!(matches!(stats(&[]), Err(BenchError::Empty)));
    let s = stats(&[3.0]).unwrap();
    assert_eq!((s.mean, s.sd, s.sd_defined, s.p99), (3.0, 0.0, false, 3.0));
}

#[test]
fn p99_rank_for_a_thousand() {
    assert_eq!(p99_index(1000), 989);
    assert_eq!(p99_index(100), 98);
    assert_eq!(p99_index(1), 0);
    assert_eq!(p99_index(101), 99);
}

proptest! {
    #[test]
    fn stats_match_naive(v in prop::collection::vec(0.0f64..1e4, 2..400)) {
        let s = stats(&v).unwrap();
        let (mean, sd, p99) = naive(&v);
        prop_assert!((s.mean - mean).abs() <= 1e-9 * mean.abs().max(1.0));
        prop_assert!((s.sd - sd).abs() <= 1e-9 * sd.max(1.0));
        prop_assert_eq!(s.p99, p99);
    }
}

#[test]
fn budget_at_120hz() {
    let v = check_budget(2.2, &BudgetModel::default()).unwrap();
    assert!((v.device_budget_ms - 7.33).abs() < 0.01);
    assert!((v.access_ms - 1.0).abs() < 1e-12);
    assert!(v.fits);
    assert!((v.headroom_ms - 5.13).abs() < 0.01);
    let table = v.render();
    assert!(table.contains("access delay, uplink"));
    assert!(table.contains("-0.500"));
    assert!(table.contains("7.333"));
}

#[test]
fn budget_rejects_non_positive() {
    let m = BudgetModel {
        refresh_hz: 1000.0,
        ..BudgetModel::default()
    };
    assert!(matches!(check_budget(0.1, &m), Err(BenchError::InvalidModel(_))));
    let m = BudgetModel {
        refresh_hz: 0.0,
        ..BudgetModel::default()
    };
    assert!(matches!(m.device_budget_ms(), Err(BenchError::InvalidModel(_))));
    assert_eq!(BenchError::InvalidModel(String::new()).name(), "InvalidModel");
}

#[test]
fn p99_beyond_available_does_not_fit() {
    let v = check_budget(6.5, &BudgetModel::default()).unwrap();
    assert!(!v.fits);
    assert!(v.headroom_ms > 0.0);
}

#[test]
fn table_has_columns_and_baseline() {
    let r = LatencyReport::new(Scenario::FrameDraw, None, vec![390_000; 10]).unwrap();
    let t = render_table(&[r]);
    let header = t.lines().next().unwrap();
    let cols: Vec<&str> = header.split_whitespace().collect();
    assert_eq!(&cols[cols.len() - 3..], ["AVG", "SD", "99th"]);
    let mine = t.lines().find(|l| l.starts_with("frame-draw")).unwrap();
    assert!(mine.split_whitespace().collect::<Vec<_>>().ends_with(&["0.4", "0.0", "0.4"]));
    let baseline = t.lines().find(|l| l.contains("h264")).unwrap();
    assert!(baseline.contains("8.3") && baseline.contains("1.1"));
    assert!(baseline.contains("external reference"));
    assert!(render_table(&[]).contains("h264"));
}

#[test]
fn json_keys_in_fixed_order() {
    let r = LatencyReport::new(Scenario::ColdStart, None, vec![1_000_000, 3_000_000]).unwrap();
    let s = serde_json::to_string(&r.json(false)).unwrap();
    assert_eq!(
        s,
        r#"{"scenario":"cold-start","n":2,"mean_ms":2.0,"sd_ms":1.4142135623730951,"sd_defined":true,"p99_ms":3.0}"#
    );
    let raw = r.json(true);
    assert_eq!(raw["samples"], serde_json::json!([1_000_000, 3_000_000]));
}

#[test]
fn cold_start_single_iteration() {
    let r = run_cold_start(&local(), 1, 0).unwrap();
    assert_eq!(r.stats.n, 1);
    assert!(!r.stats.sd_defined);
    assert!(matches!(run_cold_start(&local(), 0, 0), Err(BenchError::Empty)));
}

#[test]
fn frame_draw_small_and_empty() {
    let r = run_frame_draw(&local(), 3, 1, (64, 4)).unwrap();
    assert_eq!(r.stats.n, 3);
    assert!(matches!(run_frame_draw(&local(), 0, 0, (64, 4)), Err(BenchError::Empty)));
}

#[test]
fn remote_target_over_tcp() {
    use crate::session::{Server, ServerConfig};
    use std::sync::Arc;
    let server = Arc::new(Server::new(ServerConfig::default()).unwrap());
    let handle = server.clone().spawn_tcp("127.0.0.1:0").unwrap();
    let target = Target::Remote {
        addr: handle.addr().to_string(),
        timeout: std::time::Duration::from_secs(10),
    };
    assert_eq!(run_cold_start(&target, 2, 1).unwrap().stats.n, 2);
    assert_eq!(run_frame_draw(&target, 2, 0, (128, 2)).unwrap().stats.n, 2);
    assert_eq!(run_rtt(&target, 5, 0).unwrap().stats.n, 5);
    // Every scenario closes its sessions when done.
    assert_eq!(server.session_count(), 0);
}

#[test]
fn rtt_over_in_memory_link() {
    let r = run_rtt(&local(), 20, 2).unwrap();
    assert_eq!(r.stats.n, 20);
    assert!(r.stats.p99 > 0.0);
}

#[test]
fn migration_phases_and_tampering() {
    let target = local();
    let mut a = target.link().unwrap();
    let mut b = target.link().unwrap();
    populate_migration_session(&mut a).unwrap();
    let r = run_migration_bench(&mut a, &mut b, 20, 2, Some(4)).unwrap();
    for p in r.phases() {
        assert_eq!(p.stats.n, 20);
    }
    assert!(r.rejected >= 5);
    assert!(r.snapshot_bytes > 256 * 1024);
    assert!(r.total.stats.p99 < 50.0, "{}", r.total.stats.p99);

    let mut empty = target.link().unwrap();
    let e = run_migration_bench(&mut empty, &mut b, 20, 2, None).unwrap();
    assert_eq!(e.rejected, 0);
    assert!(e.snapshot_bytes < r.snapshot_bytes);
    assert!(e.total.stats.mean < r.total.stats.mean);
}
