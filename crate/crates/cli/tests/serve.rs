use std::net::TcpListener;

use vlaj_cli::{cmd_synth, serve_until, CliConfig, CliError, ServeOptions};
use vlaj_core::synth::Profile;
use vlaj_core::trace::Task;

fn options(dir: &std::path::Path) -> ServeOptions {
    let traces = dir.join("traces");
    let cfg = CliConfig {
        output_dir: traces.clone(),
        ..CliConfig::default()
    };
    cmd_synth(&[Profile::Smooth], &[Task::PickUp], 3, &cfg).unwrap();
    ServeOptions {
        trace_dir: traces,
        labels_log: dir.join("labels.jsonl"),
        bind: "127.0.0.1:0".parse().unwrap(),
        batch_limit: 160,
        media_dir: None,
    }
}

#[tokio::test]
async fn starts_and_stops_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let opts = options(tmp.path());
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(async move {
        serve_until(&opts, async {
            let _ = rx.await;
        })
        .await
    });
    tokio::time::sleep(std::time::Duration::from_millis(50)).await;
    tx.send(()).unwrap();
    server.await.unwrap().unwrap();
    assert!(tmp.path().join("labels.jsonl").exists());
}

#[tokio::test]
async fn busy_port_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let held = TcpListener::bind("127.0.0.1:0").unwrap();
    let opts = ServeOptions {
        bind: held.local_addr().unwrap(),
        ..options(tmp.path())
    };
    let err = serve_until(&opts, std::future::pending()).await.unwrap_err();
    assert!(matches!(err, CliError::Io { .. }), "{err}");
}

#[tokio::test]
async fn missing_trace_dir_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let opts = ServeOptions {
        trace_dir: tmp.path().join("absent"),
        ..options(tmp.path())
    };
    assert!(serve_until(&opts, async {}).await.is_err());
}
