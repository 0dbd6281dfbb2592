mod common;

use approx::assert_abs_diff_eq;
use common::*;
use nalgebra::DVector;
use platoon_core::ingest::*;
use platoon_core::plant::{assemble_closed_loop, vehicle_model};
use platoon_core::simulate::{
    simulate, spacing_errors, DisturbanceProfile, LeaderTrajectory, SimulateError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rms(err: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = err.collect();
    (v.iter().map(|e| e * e).sum::<f64>() / v.len() as f64).sqrt()
}

#[test]
fn csv_reader_recognizes_aliases_and_sorts() {
    let csv = "\
# leader log
Time, Pos, VELOCITY
2.0, 40.0, 20.0
0.0, 0.0, 20.0
1.0, 20.0, 20.0
";
    let rows = read_trajectory_csv(csv.as_bytes()).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].t, 0.0);
    assert_eq!(rows[1].t, 1.0);
    assert_eq!(rows[2].t, 2.0);
    assert_eq!(rows[2].position, 40.0);
    assert_eq!(rows[0].velocity, Some(20.0));
    assert_eq!(rows[0].acceleration, None);

    let minimal = read_trajectory_csv("t,p\n0,1\n1,2\n".as_bytes()).unwrap();
    assert_eq!(minimal[1].position, 2.0);
    assert!(minimal[0].velocity.is_none());
}

#[test]
fn csv_reader_averages_duplicate_timestamps() {
    let csv = "\
t,position,v,a
0.0,0.0,20.0,0.0
1.0,22.0,21.0,1.0
1.0,18.0,19.0,3.0
2.0,40.0,20.0,0.0
";
    let rows = read_trajectory_csv(csv.as_bytes()).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1].t, 1.0);
    assert_abs_diff_eq!(rows[1].position, 20.0, epsilon = 1e-12);
    assert_abs_diff_eq!(rows[1].velocity.unwrap(), 20.0, epsilon = 1e-12);
    assert_abs_diff_eq!(rows[1].acceleration.unwrap(), 2.0, epsilon = 1e-12);
}

#[test]
fn csv_reader_reports_structured_errors() {
    assert!(matches!(
        read_trajectory_csv("v,a\n1,2\n".as_bytes()),
        Err(IngestError::MissingColumn("t"))
    ));
    assert!(matches!(
        read_trajectory_csv("t,v\n1,2\n".as_bytes()),
        Err(IngestError::MissingColumn("position"))
    ));
    assert!(matches!(
        read_trajectory_csv("t,p\n".as_bytes()),
        Err(IngestError::EmptyFile)
    ));
    match read_trajectory_csv("t,p\n0,1\n1,oops\n".as_bytes()) {
        Err(IngestError::UnparsableRow { row, field }) => {
            assert_eq!(row, 3);
            assert_eq!(field, "oops");
        }
        other => panic!("expected UnparsableRow, got {other:?}"),
    }
    assert!(matches!(
        read_trajectory_file(std::path::Path::new("/nonexistent/leader.csv")),
        Err(IngestError::Io(_))
    ));
}

#[test]
fn loess_reproduces_affine_data_exactly() {
    let t: Vec<f64> = (0..200).map(|i| i as f64 * 0.05).collect();
    let y: Vec<f64> = t.iter().map(|&t| 2.5 * t - 7.0).collect();
    for span in [0.05, 0.3, 1.0] {
        for iters in [0, 2] {
            let fitted = loess_smooth(&t, &y, span, iters).unwrap();
            for (f, v) in fitted.iter().zip(y.iter()) {
                assert_abs_diff_eq!(f, v, epsilon = 1e-9);
            }
        }
    }
}

#[test]
fn loess_keeps_constant_data_constant() {
    let t: Vec<f64> = (0..100).map(|i| (i as f64).sqrt()).collect();
    let y = vec![4.25; 100];
    let fitted = loess_smooth(&t, &y, 0.1, 2).unwrap();
    for f in fitted {
        assert_abs_diff_eq!(f, 4.25, epsilon = 1e-12);
    }
}

#[test]
fn loess_cuts_noise_on_a_sine_wave() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 500;
    let t: Vec<f64> = (0..n).map(|i| i as f64 * 0.04).collect();
    let clean: Vec<f64> = t.iter().map(|&t| t.sin()).collect();
    let noisy: Vec<f64> = clean
        .iter()
        .map(|&v| v + rng.gen_range(-0.3..0.3))
        .collect();
    let fitted = loess_smooth(&t, &noisy, 0.05, 2).unwrap();
    let raw_rms = rms(noisy.iter().zip(clean.iter()).map(|(a, b)| a - b));
    let fit_rms = rms(fitted.iter().zip(clean.iter()).map(|(a, b)| a - b));
    assert!(
        fit_rms < 0.5 * raw_rms,
        "smoothing did not help: fitted RMS {fit_rms} vs raw {raw_rms}"
    );
}

#[test]
fn robustness_passes_reject_outliers() {
    // genuine noise sets the residual scale the bisquare reweighting keys on
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t: Vec<f64> = (0..400).map(|i| i as f64 * 0.05).collect();
    let y_true: Vec<f64> = t.iter().map(|&t| 0.5 * t + 3.0).collect();
    let mut y: Vec<f64> = y_true
        .iter()
        .map(|&v| v + rng.gen_range(-0.05..0.05))
        .collect();
    y[200] += 50.0;

    let err_near = |fit: &[f64]| {
        (190..211)
            .map(|i| (fit[i] - y_true[i]).abs())
            .fold(0.0f64, f64::max)
    };
    let naive = err_near(&loess_smooth(&t, &y, 0.05, 0).unwrap());
    let robust = err_near(&loess_smooth(&t, &y, 0.05, 2).unwrap());
    assert!(naive > 1.0, "outlier should leak without reweighting: {naive}");
    assert!(robust < 0.1, "outlier survived reweighting: {robust}");
    assert!(robust < naive / 10.0);
}

#[test]
fn loess_rejects_degenerate_inputs() {
    let t: Vec<f64> = (0..10).map(|i| i as f64).collect();
    let y = vec![0.0; 10];
    assert!(matches!(
        loess_smooth(&t, &y, 0.05, 0),
        Err(IngestError::SpanTooSmall(1))
    ));
    let t_dup = vec![0.0, 0.0, 0.0, 1.0];
    let y4 = vec![0.0; 4];
    assert!(matches!(
        loess_smooth(&t_dup, &y4, 0.5, 0),
        Err(IngestError::DegenerateWindow(0))
    ));
}

#[test]
fn conversion_resamples_onto_a_uniform_grid() {
    // irregular log of a constant-speed leader
    let mut t = vec![0.0];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    while *t.last().unwrap() < 12.0 {
        let next = t.last().unwrap() + rng.gen_range(0.02..0.2);
        t.push(next);
    }
    let records: Vec<TrajectoryRecord> = t
        .iter()
        .map(|&t| TrajectoryRecord {
            t,
            position: 20.0 * t + 3.0,
            velocity: Some(20.0),
            acceleration: Some(0.0),
        })
        .collect();
    let out = to_leader_trajectory(&records, SmoothOptions::default(), 0.1).unwrap();
    assert_eq!(out.t[0], 0.0);
    for (j, &tj) in out.t.iter().enumerate() {
        assert_abs_diff_eq!(tj, j as f64 * 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(out.position[j], 20.0 * tj + 3.0, epsilon = 1e-8);
        assert_abs_diff_eq!(out.velocity[j], 20.0, epsilon = 1e-8);
        assert_abs_diff_eq!(out.acceleration[j], 0.0, epsilon = 1e-8);
    }
    let last = *out.t.last().unwrap();
    assert!(last <= *t.last().unwrap() && last > *t.last().unwrap() - 0.1 - 1e-9);
}

#[test]
fn conversion_differentiates_missing_channels() {
    let n = 1001;
    let t: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    let records: Vec<TrajectoryRecord> = t
        .iter()
        .map(|&t| TrajectoryRecord {
            t,
            position: 1.0 - t.cos(),
            velocity: None,
            acceleration: None,
        })
        .collect();
    // narrow span keeps the degree-1 smoothing bias below the check tolerances
    let opts = SmoothOptions {
        span: 0.01,
        robustness_iters: 0,
    };
    let out = to_leader_trajectory(&records, opts, 0.01).unwrap();
    for (j, &tj) in out.t.iter().enumerate() {
        if !(1.0..=9.0).contains(&tj) {
            continue;
        }
        assert_abs_diff_eq!(out.velocity[j], tj.sin(), epsilon = 1e-3);
        assert_abs_diff_eq!(out.acceleration[j], tj.cos(), epsilon = 2e-3);
    }
}

#[test]
fn conversion_rejects_bad_requests() {
    let records = vec![TrajectoryRecord {
        t: 0.0,
        position: 0.0,
        velocity: None,
        acceleration: None,
    }];
    assert!(matches!(
        to_leader_trajectory(&records, SmoothOptions::default(), 0.1),
        Err(IngestError::Trajectory(SimulateError::TooFewSamples(1)))
    ));
    let two = vec![
        TrajectoryRecord {
            t: 0.0,
            position: 0.0,
            velocity: None,
            acceleration: None,
        },
        TrajectoryRecord {
            t: 1.0,
            position: 1.0,
            velocity: None,
            acceleration: None,
        },
    ];
    assert!(matches!(
        to_leader_trajectory(&two, SmoothOptions::default(), 0.0),
        Err(IngestError::NonPositiveStep(_))
    ));
}

#[test]
fn smoothed_csv_round_trips_bit_exactly() {
    let n = 301;
    let t: Vec<f64> = (0..n).map(|i| i as f64 * 0.05).collect();
    let records: Vec<TrajectoryRecord> = t
        .iter()
        .map(|&t| TrajectoryRecord {
            t,
            position: 20.0 * t + 0.3 * (0.7 * t).sin(),
            velocity: Some(20.0 + 0.21 * (0.7 * t).cos()),
            acceleration: Some(-0.147 * (0.7 * t).sin()),
        })
        .collect();
    let out = to_leader_trajectory(&records, SmoothOptions::default(), 0.05).unwrap();

    let mut buf = Vec::new();
    write_smoothed_csv(&out, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("# smoothed: true\nt,position,velocity,acceleration\n"));

    let rows = read_trajectory_csv(&buf[..]).unwrap();
    assert_eq!(rows.len(), out.t.len());
    for (row, j) in rows.iter().zip(0..) {
        assert_eq!(row.t, out.t[j]);
        assert_eq!(row.position, out.position[j]);
        assert_eq!(row.velocity, Some(out.velocity[j]));
        assert_eq!(row.acceleration, Some(out.acceleration[j]));
    }
}

#[test]
fn ingested_log_drives_a_quiet_simulation() {
    // noisy log of a steady leader should smooth into a nearly inert maneuver term
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let n = 1001;
    let t: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    let records: Vec<TrajectoryRecord> = t
        .iter()
        .map(|&t| TrajectoryRecord {
            t,
            position: 20.0 * t + rng.gen_range(-0.02..0.02),
            velocity: None,
            acceleration: None,
        })
        .collect();
    let leader = to_leader_trajectory(&records, SmoothOptions::default(), 0.01).unwrap();

    let model = vehicle_model(0.5).unwrap();
    let sys = assemble_closed_loop(&test_a_graph(), &model, &paper_gains(0.668));
    let trace = simulate(
        &sys,
        &DisturbanceProfile::Zero,
        &LeaderTrajectory::Sampled(leader),
        &DVector::zeros(24),
        8.0,
        1e-3,
    )
    .unwrap();
    let worst = spacing_errors(&trace)
        .iter()
        .flat_map(|s| s.iter())
        .fold(0.0f64, |a, &b| a.max(b.abs()));
    assert!(worst < 0.5, "noise leaked into the platoon: worst spacing {worst}");
}
