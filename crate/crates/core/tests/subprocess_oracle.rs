use std::time::{Duration, Instant};

use bsc_attack::oracle::{subprocess_oracle, BackendKind, OracleError, OracleHandle};
use bsc_attack::tensor_io::VideoClip;

const DIMS: [usize; 4] = [2, 4, 5, 3];

fn server(mode: &str, timeout: Duration) -> Result<OracleHandle, OracleError> {
    let script = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/oracle_server.py");
    let cmd = format!("python3 {script} {mode} 5 2 4 5 3");
    subprocess_oracle(&cmd, Some(DIMS), timeout)
}

fn clip(value: u8) -> VideoClip {
    VideoClip::filled(DIMS[0], DIMS[1], DIMS[2], DIMS[3], value).unwrap()
}

#[test]
fn handshake_reports_classes_and_dims() {
    let oracle = server("uniform", Duration::from_secs(10)).unwrap();
    assert_eq!(oracle.kind(), BackendKind::Subprocess);
    assert_eq!(oracle.num_classes(), 5);
    assert_eq!(oracle.dims(), DIMS);
    assert_eq!(oracle.queries(), 0);
}

#[test]
fn predict_round_trip() {
    let oracle = server("mean", Duration::from_secs(10)).unwrap();
    let p = oracle.predict(&clip(3)).unwrap();
    assert_eq!(p.num_classes(), 5);
    assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-6);
    assert!((p.probs()[0] - 4.0 / 8.0).abs() < 1e-12);
    assert_eq!(p, oracle.predict(&clip(3)).unwrap());
    assert_eq!(oracle.queries(), 2);
}

#[test]
fn concurrent_callers_are_serialized() {
    let oracle = server("mean", Duration::from_secs(10)).unwrap();
    std::thread::scope(|s| {
        for v in 0..4u8 {
            let oracle = &oracle;
            s.spawn(move || {
                for _ in 0..10 {
                    let p = oracle.predict(&clip(v)).unwrap();
                    let expected = (1.0 + v as f64) / (5.0 + v as f64);
                    assert!((p.probs()[0] - expected).abs() < 1e-12);
                }
            });
        }
    });
    assert_eq!(oracle.queries(), 40);
}

#[test]
fn caption_extension() {
    let oracle = server("uniform", Duration::from_secs(10)).unwrap();
    assert_eq!(oracle.caption(&clip(0)).unwrap(), "clip of 120 bytes");
    assert_eq!(oracle.queries(), 0);
}

#[test]
fn remote_errors_are_typed() {
    let oracle = server("error", Duration::from_secs(10)).unwrap();
    match oracle.predict(&clip(0)) {
        Err(OracleError::Remote(m)) => assert_eq!(m, "model exploded"),
        other => panic!("{other:?}"),
    }
    // The connection stays usable after a remote error.
    assert!(matches!(oracle.predict(&clip(0)), Err(OracleError::Remote(_))));
}

#[test]
fn malformed_reply_is_a_protocol_error() {
    let oracle = server("malformed", Duration::from_secs(10)).unwrap();
    assert!(matches!(oracle.predict(&clip(0)), Err(OracleError::Protocol(_))));
}

#[test]
fn dead_server_is_detected() {
    let oracle = server("die", Duration::from_secs(10)).unwrap();
    assert!(matches!(oracle.predict(&clip(0)), Err(OracleError::Died(_))));
    assert!(matches!(oracle.predict(&clip(0)), Err(OracleError::Died(_))));
    assert_eq!(oracle.queries(), 2);
}

#[test]
fn slow_server_times_out_and_late_reply_is_discarded() {
    let oracle = server("slow", Duration::from_millis(300)).unwrap();
    let start = Instant::now();
    assert!(matches!(oracle.predict(&clip(0)), Err(OracleError::Timeout(_))));
    assert!(start.elapsed() < Duration::from_secs(2));
    std::thread::sleep(Duration::from_millis(2200));
    // The late answer to the first request must not be taken for the second.
    assert!(matches!(oracle.predict(&clip(0)), Err(OracleError::Timeout(_))));
}

#[test]
fn handshake_failures() {
    assert!(matches!(
        server("badhello", Duration::from_secs(10)),
        Err(OracleError::Handshake(_))
    ));
    let script = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/oracle_server.py");
    let wrong = subprocess_oracle(&format!("python3 {script} uniform 5 2 4 5 3"), Some([2, 4, 4, 3]), Duration::from_secs(10));
    assert!(matches!(wrong, Err(OracleError::Handshake(_))));
    assert!(matches!(
        subprocess_oracle("/nonexistent/oracle", None, Duration::from_secs(1)),
        Err(OracleError::Spawn(_))
    ));
    assert!(subprocess_oracle("", None, Duration::from_secs(1)).is_err());
}

#[test]
fn wrong_clip_dims_never_reach_the_server() {
    let oracle = server("uniform", Duration::from_secs(10)).unwrap();
    let other = VideoClip::filled(1, 4, 5, 3, 0).unwrap();
    assert!(matches!(oracle.predict(&other), Err(OracleError::DimensionMismatch { .. })));
}
