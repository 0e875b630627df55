use std::fmt;
use std::hint::black_box;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::ReportError;
use crate::metric::{MetricConfig, MetricError};
use crate::trace::RunTrace;
use crate::{quality, uncertainty};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricGroup {
    /// Dense softmax and argmax over the vocabulary for every token of a step.
    #[serde(rename = "inference_placeholder")]
    InferencePlaceholder,
    #[serde(rename = "TB")]
    Tb,
    #[serde(rename = "AI")]
    Ai,
    /// `N` decode replays plus the standard-deviation computation.
    #[serde(rename = "EV")]
    Ev,
    #[serde(rename = "TCP")]
    Tcp,
    #[serde(rename = "TI")]
    Ti,
    #[serde(rename = "OT")]
    Ot,
}

impl MetricGroup {
    pub const ALL: [MetricGroup; 7] = [
        MetricGroup::InferencePlaceholder,
        MetricGroup::Tb,
        MetricGroup::Ai,
        MetricGroup::Ev,
        MetricGroup::Tcp,
        MetricGroup::Ti,
        MetricGroup::Ot,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricGroup::InferencePlaceholder => "inference_placeholder",
            MetricGroup::Tb => "TB",
            MetricGroup::Ai => "AI",
            MetricGroup::Ev => "EV",
            MetricGroup::Tcp => "TCP",
            MetricGroup::Ti => "TI",
            MetricGroup::Ot => "OT",
        }
    }

    /// Runs the group once over the whole trace. `Err` when the trace lacks
    /// the channel the group needs.
    fn run(self, trace: &RunTrace, cfg: &MetricConfig) -> Result<(), MetricError> {
        match self {
            MetricGroup::InferencePlaceholder => {
                if trace.header.token_count == 0 {
                    return Err(MetricError::unavailable(crate::MetricId::TbTp, "no token distributions"));
                }
                black_box(decode_replay(trace));
            }
            MetricGroup::Tb => {
                black_box(uncertainty::tb_tp(trace)?);
                black_box(uncertainty::tb_pcs(trace)?);
                black_box(uncertainty::tb_d(trace)?);
                black_box(uncertainty::tb_e(trace)?);
            }
            MetricGroup::Ai => {
                black_box(uncertainty::a_pi(trace, cfg)?);
                black_box(uncertainty::a_vi(trace, cfg)?);
                black_box(uncertainty::a_ai(trace, cfg)?);
            }
            MetricGroup::Ev => {
                if trace.header.ev_samples >= 2 && trace.header.token_count > 0 {
                    for _ in 0..trace.header.ev_samples {
                        black_box(decode_replay(trace));
                    }
                }
                black_box(uncertainty::ev(trace)?);
            }
            MetricGroup::Tcp => {
                black_box(quality::tcp_pi(trace, cfg)?);
                black_box(quality::tcp_vi(trace, cfg)?);
                black_box(quality::tcp_ai(trace, cfg)?);
            }
            MetricGroup::Ti => {
                black_box(quality::ti(trace)?);
            }
            MetricGroup::Ot => {
                black_box(quality::ot(trace)?);
            }
        }
        Ok(())
    }
}

impl fmt::Display for MetricGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-step wall-clock cost of one metric group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadSample {
    pub metric_group: MetricGroup,
    pub mean_seconds: f64,
    pub std_seconds: f64,
    /// Number of timed passes.
    pub n: usize,
}

/// Stand-in for one forward decode: rebuilds the dense logit vector of every
/// token, applies softmax and takes the argmax. Returns the summed argmax ids.
pub fn decode_replay(trace: &RunTrace) -> u64 {
    let mut logits = Vec::new();
    let mut checksum = 0u64;
    for dist in trace.steps.iter().flat_map(|s| s.token_probs.iter().flatten()) {
        let fill = dist.tail_share().map_or(f64::NEG_INFINITY, f64::ln);
        logits.clear();
        logits.resize(dist.vocab_size, fill);
        for &(id, p) in &dist.entries {
            logits[id as usize] = p.ln();
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in logits.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        let (mut best, mut best_p) = (0usize, f64::NEG_INFINITY);
        for (i, x) in logits.iter().enumerate() {
            let p = x / sum;
            if p > best_p {
                best = i;
                best_p = p;
            }
        }
        checksum += best as u64;
    }
    checksum
}

/// Times `f` over every trace `repetitions` times. Each pass contributes its
/// elapsed time divided by the trace's step count. Traces without steps are
/// skipped; `None` when nothing was timed.
pub fn time_per_step(
    traces: &[RunTrace],
    repetitions: usize,
    mut f: impl FnMut(&RunTrace) -> bool,
) -> Option<(f64, f64, usize)> {
    let mut samples = Vec::new();
    for trace in traces.iter().filter(|t| !t.is_empty()) {
        for _ in 0..repetitions {
            let start = Instant::now();
            let ok = f(trace);
            let elapsed = start.elapsed().as_secs_f64();
            if !ok {
                break;
            }
            samples.push(elapsed / trace.len() as f64);
        }
    }
    if samples.is_empty() {
        return None;
    }
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some((mean, std, n))
}

/// Per-step cost of each metric group over the trace set. Groups whose inputs
/// are absent from every trace are left out.
pub fn overhead_bench(
    traces: &[RunTrace],
    repetitions: usize,
    cfg: &MetricConfig,
) -> Result<Vec<OverheadSample>, ReportError> {
    if traces.iter().all(RunTrace::is_empty) || repetitions == 0 {
        return Err(ReportError::NothingToTime);
    }
    let mut out = Vec::new();
    for group in MetricGroup::ALL {
        let timed = time_per_step(traces, repetitions, |t| group.run(t, cfg).is_ok());
        if let Some((mean_seconds, std_seconds, n)) = timed {
            out.push(OverheadSample {
                metric_group: group,
                mean_seconds,
                std_seconds,
                n,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic, Profile};
    use crate::trace::Task;

    #[test]
    fn empty_trace_set_is_an_error() {
        assert!(matches!(
            overhead_bench(&[], 3, &MetricConfig::default()),
            Err(ReportError::NothingToTime)
        ));
        let mut t = generate_synthetic(Profile::Smooth, Task::PickUp, 1);
        t.steps.clear();
        assert!(matches!(
            overhead_bench(&[t], 3, &MetricConfig::default()),
            Err(ReportError::NothingToTime)
        ));
    }

    #[test]
    fn all_groups_timed_on_synthetic_traces() {
        let traces: Vec<_> = (0..2).map(|s| generate_synthetic(Profile::Jittery, Task::PutOn, s)).collect();
        let samples = overhead_bench(&traces, 3, &MetricConfig::default()).unwrap();
        assert_eq!(samples.len(), MetricGroup::ALL.len());
        for s in &samples {
            assert_eq!(s.n, 6);
            assert!(s.mean_seconds > 0.0 && s.std_seconds >= 0.0);
        }
    }

    #[test]
    fn decode_replay_finds_the_mode() {
        let trace = generate_synthetic(Profile::Smooth, Task::PickUp, 1);
        let expected: u64 = trace
            .steps
            .iter()
            .flat_map(|s| s.token_probs.iter().flatten())
            .map(|d| {
                d.entries
                    .iter()
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|e| u64::from(e.0))
                    .unwrap()
            })
            .sum();
        assert_eq!(decode_replay(&trace), expected);
    }
}
