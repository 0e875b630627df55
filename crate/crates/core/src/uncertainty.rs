//! The eight per-step uncertainty metrics: action instability (first, second
//! and third differences of the action vector), four token-probability
//! metrics, and execution variability across repeated inferences.

use std::collections::BTreeMap;

use crate::metric::{difference_series, mean_abs, MetricConfig, MetricError, MetricId, MetricSeries};
use crate::trace::{RunTrace, TokenDistribution};

fn action_instability(
    trace: &RunTrace,
    metric: MetricId,
    order: usize,
    cfg: &MetricConfig,
) -> Result<MetricSeries, MetricError> {
    difference_series(
        metric,
        &trace.steps,
        trace.header.action_dims,
        order,
        cfg,
        |s| &s.action,
        mean_abs,
    )
}

/// A-PI: mean absolute first difference of the action vector.
pub fn a_pi(trace: &RunTrace, cfg: &MetricConfig) -> Result<MetricSeries, MetricError> {
    action_instability(trace, MetricId::APi, 1, cfg)
}

/// A-VI: mean absolute second difference of the action vector.
pub fn a_vi(trace: &RunTrace, cfg: &MetricConfig) -> Result<MetricSeries, MetricError> {
    action_instability(trace, MetricId::AVi, 2, cfg)
}

/// A-AI: mean absolute third difference of the action vector.
pub fn a_ai(trace: &RunTrace, cfg: &MetricConfig) -> Result<MetricSeries, MetricError> {
    action_instability(trace, MetricId::AAi, 3, cfg)
}

/// Largest listed probability. The tail only counts when nothing is listed.
pub fn max_probability(dist: &TokenDistribution) -> f64 {
    if dist.entries.is_empty() {
        return dist.tail_share().unwrap_or(0.0);
    }
    dist.entries.iter().map(|&(_, p)| p).fold(f64::MIN, f64::max)
}

/// Gap between the two most likely tokens. Unlisted tokens compete with
/// probability `tail_mass / unlisted` each (zero when there is no tail).
pub fn top_two_gap(dist: &TokenDistribution) -> f64 {
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut offer = |p: f64| {
        if p > first {
            second = first;
            first = p;
        } else if p > second {
            second = p;
        }
    };
    for &(_, p) in &dist.entries {
        offer(p);
    }
    let unlisted = dist.unlisted();
    let share = dist.tail_share().unwrap_or(0.0);
    for _ in 0..unlisted.min(2) {
        offer(share);
    }
    if second == f64::NEG_INFINITY {
        // Single-candidate vocabulary; rejected upstream for token_count > 0.
        second = 0.0;
    }
    first - second
}

/// Gini impurity `1 − Σ p²`, with the tail spread uniformly.
pub fn gini_impurity(dist: &TokenDistribution) -> f64 {
    let mut sum_sq: f64 = dist.entries.iter().map(|&(_, p)| p * p).sum();
    if let Some(share) = dist.tail_share() {
        sum_sq += dist.tail_mass * share;
    }
    1.0 - sum_sq
}

/// Shannon entropy in nats, with the tail spread uniformly and `0·ln 0 = 0`.
pub fn entropy(dist: &TokenDistribution) -> f64 {
    let mut h: f64 = dist
        .entries
        .iter()
        .filter(|&&(_, p)| p > 0.0)
        .map(|&(_, p)| -p * p.ln())
        .sum();
    if let Some(share) = dist.tail_share() {
        h -= dist.tail_mass * share.ln();
    }
    h
}

fn token_series(
    trace: &RunTrace,
    metric: MetricId,
    per_token: impl Fn(&TokenDistribution) -> f64,
    finish: impl Fn(f64) -> f64,
) -> Result<MetricSeries, MetricError> {
    if trace.header.token_count == 0 {
        return Err(MetricError::unavailable(metric, "trace declares token_count = 0"));
    }
    let mut values = BTreeMap::new();
    for step in &trace.steps {
        let Some(tokens) = step.token_probs.as_deref().filter(|t| !t.is_empty()) else {
            continue;
        };
        let mean = tokens.iter().map(&per_token).sum::<f64>() / tokens.len() as f64;
        values.insert(step.t, finish(mean));
    }
    MetricSeries::from_values(metric, values)
        .ok_or_else(|| MetricError::unavailable(metric, "no step carries token_probs"))
}

/// TB-TP: one minus the mean maximum token probability.
pub fn tb_tp(trace: &RunTrace) -> Result<MetricSeries, MetricError> {
    token_series(trace, MetricId::TbTp, max_probability, |m| 1.0 - m)
}

/// TB-PCS: one minus the mean top-two probability gap.
pub fn tb_pcs(trace: &RunTrace) -> Result<MetricSeries, MetricError> {
    token_series(trace, MetricId::TbPcs, top_two_gap, |m| 1.0 - m)
}

/// TB-D: mean DeepGini impurity over the action tokens.
pub fn tb_d(trace: &RunTrace) -> Result<MetricSeries, MetricError> {
    token_series(trace, MetricId::TbD, gini_impurity, |m| m)
}

/// TB-E: mean token entropy (nats).
pub fn tb_e(trace: &RunTrace) -> Result<MetricSeries, MetricError> {
    token_series(trace, MetricId::TbE, entropy, |m| m)
}

/// Mean over dimensions of the population standard deviation across samples.
///
/// `samples` is `N` rows of `D` values; each row is one repeated inference.
pub fn execution_variability(samples: &[Vec<f64>]) -> f64 {
    let n = samples.len() as f64;
    let dims = samples.first().map_or(0, Vec::len);
    let mut total = 0.0;
    for d in 0..dims {
        // Deviations from the first sample, so identical samples give exactly 0.
        let origin = samples[0][d];
        let mean = samples.iter().map(|row| row[d] - origin).sum::<f64>() / n;
        let var = samples
            .iter()
            .map(|row| (row[d] - origin - mean).powi(2))
            .sum::<f64>()
            / n;
        total += var.sqrt();
    }
    total / dims as f64
}

/// EV: execution variability at every step carrying repeated-inference samples.
pub fn ev(trace: &RunTrace) -> Result<MetricSeries, MetricError> {
    let metric = MetricId::Ev;
    if trace.header.ev_samples < 2 {
        return Err(MetricError::unavailable(
            metric,
            format!("needs >= 2 inference samples, header declares {}", trace.header.ev_samples),
        ));
    }
    let values: BTreeMap<u64, f64> = trace
        .steps
        .iter()
        .filter_map(|s| {
            s.ev_actions
                .as_deref()
                .filter(|rows| rows.len() >= 2)
                .map(|rows| (s.t, execution_variability(rows)))
        })
        .collect();
    MetricSeries::from_values(metric, values)
        .ok_or_else(|| MetricError::unavailable(metric, "no step carries ev_actions"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{ObjectDecl, ObjectRole, StepRecord, Task, TraceHeader};

    const EPS: f64 = 1e-12;

    fn header(dims: usize) -> TraceHeader {
        TraceHeader {
            run_id: "u".into(),
            model_id: None,
            task: Task::PickUp,
            instruction: String::new(),
            robot: "test".into(),
            action_dims: dims,
            action_horizon: 1,
            dt: Some(1.0),
            token_count: 0,
            vocab_size: 0,
            ev_samples: 0,
            objects: vec![ObjectDecl::new("a", ObjectRole::Target)],
        }
    }

    fn actions(rows: &[&[f64]]) -> RunTrace {
        let steps = rows
            .iter()
            .enumerate()
            .map(|(t, a)| StepRecord::new(t as u64, a.to_vec(), [0.0; 3]))
            .collect();
        RunTrace::new(header(rows[0].len()), steps)
    }

    fn tokens(per_step: Vec<Vec<TokenDistribution>>) -> RunTrace {
        let mut h = header(1);
        h.token_count = per_step[0].len();
        h.vocab_size = per_step[0][0].vocab_size;
        let steps = per_step
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

    fn only(series: &MetricSeries) -> f64 {
        assert_eq!(series.len(), 1);
        series.values.values().next().copied().unwrap()
    }

    fn cfg() -> MetricConfig {
        MetricConfig::default()
    }

    #[test]
    fn a_pi_examples() {
        let s = a_pi(&actions(&[&[2.0, 1.0] as &[f64]; 5]), &cfg()).unwrap();
        assert!(s.values.values().all(|&v| v == 0.0));

        let s = a_pi(&actions(&[&[0.0], &[1.0], &[3.0]]), &cfg()).unwrap();
        assert_eq!(s.valid_from, 1);
        assert_eq!(s.values.into_iter().collect::<Vec<_>>(), vec![(1, 1.0), (2, 2.0)]);

        let s = a_pi(&actions(&[&[0.0, 0.0], &[1.0, -1.0]]), &cfg()).unwrap();
        assert_eq!(s.get(1), Some(1.0));
    }

    #[test]
    fn a_vi_examples() {
        let ramp: Vec<Vec<f64>> = (0..6).map(|t| vec![0.3 * t as f64]).collect();
        let rows: Vec<&[f64]> = ramp.iter().map(Vec::as_slice).collect();
        let s = a_vi(&actions(&rows), &cfg()).unwrap();
        assert!(s.values.values().all(|v| v.abs() < EPS));

        let s = a_vi(&actions(&[&[0.0], &[1.0], &[3.0]]), &cfg()).unwrap();
        assert_eq!(s.valid_from, 2);
        assert_eq!(s.get(2), Some(1.0));
    }

    #[test]
    fn a_ai_examples() {
        let quad: Vec<Vec<f64>> = (0..8).map(|t| vec![0.5 * (t * t) as f64]).collect();
        let rows: Vec<&[f64]> = quad.iter().map(Vec::as_slice).collect();
        let s = a_ai(&actions(&rows), &cfg()).unwrap();
        assert!(s.values.values().all(|&v| v == 0.0));

        let s = a_ai(&actions(&[&[0.0], &[1.0], &[3.0], &[6.0]]), &cfg()).unwrap();
        assert_eq!(s.get(3), Some(0.0));
        let s = a_ai(&actions(&[&[0.0], &[0.0], &[0.0], &[1.0]]), &cfg()).unwrap();
        assert_eq!(s.get(3), Some(1.0));
    }

    #[test]
    fn action_metrics_need_enough_steps() {
        let err = a_pi(&actions(&[&[0.0]]), &cfg()).unwrap_err();
        assert!(matches!(err, MetricError::TooFewSteps { required: 2, steps: 1, .. }));
        let err = a_vi(&actions(&[&[0.0], &[1.0]]), &cfg()).unwrap_err();
        assert!(matches!(err, MetricError::TooFewSteps { required: 3, .. }));
        let err = a_ai(&actions(&[&[0.0], &[1.0], &[2.0]]), &cfg()).unwrap_err();
        assert!(matches!(err, MetricError::TooFewSteps { required: 4, .. }));
    }

    #[test]
    fn one_hot_tokens_have_zero_uncertainty() {
        let one_hot = TokenDistribution::new(vec![(7, 1.0)], 0.0, 256);
        let tr = tokens(vec![vec![one_hot.clone(), one_hot]]);
        for s in [tb_tp(&tr), tb_pcs(&tr), tb_d(&tr), tb_e(&tr)] {
            assert_eq!(only(&s.unwrap()), 0.0);
        }
    }

    #[test]
    fn uniform_over_four() {
        let tr = tokens(vec![vec![TokenDistribution::dense(&[0.25; 4])]]);
        assert!((only(&tb_tp(&tr).unwrap()) - 0.75).abs() < EPS);
        assert!((only(&tb_pcs(&tr).unwrap()) - 1.0).abs() < EPS);
        assert!((only(&tb_d(&tr).unwrap()) - 0.75).abs() < EPS);
        assert!((only(&tb_e(&tr).unwrap()) - 4f64.ln()).abs() < EPS);
    }

    #[test]
    fn tb_tp_averages_max_probability() {
        let tr = tokens(vec![vec![
            TokenDistribution::dense(&[0.9, 0.1]),
            TokenDistribution::dense(&[0.5, 0.5]),
        ]]);
        assert!((only(&tb_tp(&tr).unwrap()) - 0.3).abs() < EPS);
    }

    #[test]
    fn tb_pcs_top_two_gap() {
        let tr = tokens(vec![vec![TokenDistribution::dense(&[0.6, 0.3, 0.1])]]);
        assert!((only(&tb_pcs(&tr).unwrap()) - 0.7).abs() < EPS);
    }

    #[test]
    fn tail_share_can_be_the_runner_up() {
        // Two unlisted tokens share 0.5, so each carries 0.25 > 0.1.
        let d = TokenDistribution::new(vec![(0, 0.4), (1, 0.1)], 0.5, 4);
        assert!((top_two_gap(&d) - 0.15).abs() < EPS);
        assert_eq!(max_probability(&d), 0.4);
    }

    #[test]
    fn gini_and_entropy_of_even_pair() {
        let tr = tokens(vec![vec![TokenDistribution::dense(&[0.5, 0.5])]]);
        assert!((only(&tb_d(&tr).unwrap()) - 0.5).abs() < EPS);
        assert!((only(&tb_e(&tr).unwrap()) - 2f64.ln()).abs() < EPS);
    }

    #[test]
    fn sparse_tail_matches_dense_uniform_remainder() {
        // Top-2 listed plus 0.3 spread over 6 unlisted tokens equals the dense form.
        let sparse = TokenDistribution::new(vec![(0, 0.5), (1, 0.2)], 0.3, 8);
        let dense = TokenDistribution::dense(&[0.5, 0.2, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05]);
        assert!((gini_impurity(&sparse) - gini_impurity(&dense)).abs() < EPS);
        assert!((entropy(&sparse) - entropy(&dense)).abs() < EPS);
        assert!((top_two_gap(&sparse) - top_two_gap(&dense)).abs() < EPS);
    }

    #[test]
    fn token_metrics_unavailable_without_probs() {
        let tr = actions(&[&[0.0], &[1.0]]);
        for r in [tb_tp(&tr), tb_pcs(&tr), tb_d(&tr), tb_e(&tr)] {
            assert!(r.unwrap_err().is_unavailable());
        }
        let mut tr = tokens(vec![vec![TokenDistribution::dense(&[0.5, 0.5])]]);
        tr.steps[0].token_probs = None;
        assert!(tb_e(&tr).unwrap_err().is_unavailable());
    }

    fn ev_trace(samples: Vec<Vec<f64>>) -> RunTrace {
        let mut h = header(samples[0].len());
        h.ev_samples = samples.len();
        let mut s = StepRecord::new(0, vec![0.0; samples[0].len()], [0.0; 3]);
        s.ev_actions = Some(samples);
        RunTrace::new(h, vec![s])
    }

    #[test]
    fn ev_examples() {
        let same = ev_trace(vec![vec![0.3, -1.0, 2.0]; 4]);
        assert_eq!(only(&ev(&same).unwrap()), 0.0);

        let pair = ev_trace(vec![vec![0.0], vec![2.0]]);
        assert!((only(&ev(&pair).unwrap()) - 1.0).abs() < EPS);

        // Per-dimension population stds 1 and 3.
        let two_dim = ev_trace(vec![vec![-1.0, -3.0], vec![1.0, 3.0]]);
        assert!((only(&ev(&two_dim).unwrap()) - 2.0).abs() < EPS);
    }

    #[test]
    fn ev_needs_two_samples() {
        let single = ev_trace(vec![vec![1.0]]);
        assert!(ev(&single).unwrap_err().is_unavailable());
        assert!(ev(&actions(&[&[0.0], &[1.0]])).unwrap_err().is_unavailable());
    }
}
