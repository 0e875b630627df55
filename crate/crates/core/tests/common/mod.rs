#![allow(dead_code)]

use vlaj_core::trace::{ObjectDecl, ObjectRole, RunTrace, StepRecord, Task, TokenDistribution, TraceHeader};

pub fn header(dims: usize, dt: f64) -> TraceHeader {
    TraceHeader {
        run_id: "prop".into(),
        model_id: None,
        task: Task::PickUp,
        instruction: "pick up the block".into(),
        robot: "test".into(),
        action_dims: dims,
        action_horizon: 1,
        dt: Some(dt),
        token_count: 0,
        vocab_size: 0,
        ev_samples: 0,
        objects: vec![ObjectDecl::new("block", ObjectRole::Target)],
    }
}

/// Trace with the given actions and TCP path (equal lengths).
pub fn trace(actions: &[Vec<f64>], tcp: &[[f64; 3]], dt: f64) -> RunTrace {
    assert_eq!(actions.len(), tcp.len());
    let steps = actions
        .iter()
        .zip(tcp)
        .enumerate()
        .map(|(t, (a, p))| StepRecord::new(t as u64, a.clone(), *p))
        .collect();
    RunTrace::new(header(actions[0].len(), dt), steps)
}

pub fn action_trace(actions: &[Vec<f64>]) -> RunTrace {
    trace(actions, &vec![[0.0; 3]; actions.len()], 1.0)
}

pub fn tcp_trace(tcp: &[[f64; 3]], dt: f64) -> RunTrace {
    trace(&vec![vec![0.0]; tcp.len()], tcp, dt)
}

/// One step per entry of `dists`, each carrying that step's token distributions.
pub fn token_trace(dists: Vec<Vec<TokenDistribution>>) -> RunTrace {
    let mut h = header(1, 1.0);
    h.token_count = dists[0].len();
    h.vocab_size = dists[0][0].vocab_size;
    let steps = dists
        .into_iter()
        .enumerate()
        .map(|(t, d)| {
            let mut s = StepRecord::new(t as u64, vec![0.0], [0.0; 3]);
            s.token_probs = Some(d);
            s
        })
        .collect();
    RunTrace::new(h, steps)
}

pub fn ev_trace(samples: Vec<Vec<Vec<f64>>>) -> RunTrace {
    let mut h = header(samples[0][0].len(), 1.0);
    h.ev_samples = samples[0].len();
    let steps = samples
        .into_iter()
        .enumerate()
        .map(|(t, rows)| {
            let mut s = StepRecord::new(t as u64, vec![0.0; rows[0].len()], [0.0; 3]);
            s.ev_actions = Some(rows);
            s
        })
        .collect();
    RunTrace::new(h, steps)
}

/// First differences of a row sequence.
pub fn diff(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect())
        .collect()
}

pub fn diff3(rows: &[[f64; 3]]) -> Vec<[f64; 3]> {
    rows.windows(2)
        .map(|w| [w[1][0] - w[0][0], w[1][1] - w[0][1], w[1][2] - w[0][2]])
        .collect()
}
