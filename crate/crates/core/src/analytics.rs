//! Post-hoc analysis over completed sessions: per-metric summary statistics,
//! Pearson correlation with top-pair extraction, and compute/memory
//! bottleneck classification.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::model::{DeviceId, SessionData};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalyticsError {
    #[error("bottleneck classification needs sm_active_pct or tensor_active_pct, and dram_active_pct")]
    ActivityMetricsMissing,
    #[error("window width must be positive")]
    BadWindow,
    #[error("session has no ticks")]
    EmptySession,
}

/// Avg/Max/Min/Mode block of one metric series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub avg: f64,
    pub max: f64,
    pub min: f64,
    /// Most frequent value after binning to 2 decimals; ties break low.
    pub mode: f64,
    pub sample_count: usize,
    pub absent_count: usize,
}

/// Summarize the present values of a series; `None` when all are absent.
pub fn summarize(series: &[Option<f64>]) -> Option<SummaryStats> {
    let present: Vec<f64> = series.iter().flatten().copied().collect();
    if present.is_empty() {
        return None;
    }
    let absent_count = series.len() - present.len();
    let sum: f64 = present.iter().sum();
    let avg = sum / present.len() as f64;
    let max = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = present.iter().copied().fold(f64::INFINITY, f64::min);

    // mode over 2-decimal bins, smallest bin wins ties
    let mut counts: HashMap<i64, usize> = HashMap::new();
    for v in &present {
        *counts.entry(bin2(*v)).or_insert(0) += 1;
    }
    let mode_bin = counts
        .iter()
        .map(|(bin, count)| (*count, -*bin))
        .max()
        .map(|(_, neg_bin)| -neg_bin)
        .unwrap();
    Some(SummaryStats {
        avg,
        max,
        min,
        mode: mode_bin as f64 / 100.0,
        sample_count: present.len(),
        absent_count,
    })
}

fn bin2(v: f64) -> i64 {
    (v * 100.0).round() as i64
}

/// Pearson correlation over pairwise-present ticks.
///
/// Absent entries on either side drop the pair. Returns `None` with fewer
/// than 3 surviving pairs or when either side has zero variance.
pub fn pearson(x: &[Option<f64>], y: &[Option<f64>]) -> Option<f64> {
    let pairs: Vec<(f64, f64)> = x
        .iter()
        .zip(y.iter())
        .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
        .collect();
    if pairs.len() < 3 {
        return None;
    }
    let n = pairs.len() as f64;
    let mean_x = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (a, b) in &pairs {
        let dx = a - mean_x;
        let dy = b - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return None;
    }
    Some((cov / (var_x.sqrt() * var_y.sqrt())).clamp(-1.0, 1.0))
}

/// One correlated series pair. Keys are (device label, metric id).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPair {
    pub device_a: DeviceId,
    pub metric_a: String,
    pub device_b: DeviceId,
    pub metric_b: String,
    pub coefficient: f64,
}

/// Extract the top-k positive and top-k negative pairs from a coefficient
/// list. Self-pairs and duplicate unordered pairs must already be excluded
/// by construction of `matrix` (each unordered pair appears once).
pub fn top_pairs(matrix: &[CorrelationPair], k: usize) -> (Vec<CorrelationPair>, Vec<CorrelationPair>) {
    let mut positive: Vec<CorrelationPair> =
        matrix.iter().filter(|p| p.coefficient > 0.0).cloned().collect();
    let mut negative: Vec<CorrelationPair> =
        matrix.iter().filter(|p| p.coefficient < 0.0).cloned().collect();
    let tie_key = |p: &CorrelationPair| (p.device_a, p.metric_a.clone(), p.device_b, p.metric_b.clone());
    positive.sort_by(|a, b| {
        b.coefficient
            .partial_cmp(&a.coefficient)
            .unwrap()
            .then_with(|| tie_key(a).cmp(&tie_key(b)))
    });
    negative.sort_by(|a, b| {
        a.coefficient
            .partial_cmp(&b.coefficient)
            .unwrap()
            .then_with(|| tie_key(a).cmp(&tie_key(b)))
    });
    positive.truncate(k);
    negative.truncate(k);
    (positive, negative)
}

/// Compute the full upper-triangle correlation matrix over the given aligned
/// series, skipping undefined coefficients.
pub fn correlation_matrix(series: &[((DeviceId, String), Vec<Option<f64>>)]) -> Vec<CorrelationPair> {
    let mut out = Vec::new();
    for i in 0..series.len() {
        for j in (i + 1)..series.len() {
            if let Some(r) = pearson(&series[i].1, &series[j].1) {
                out.push(CorrelationPair {
                    device_a: series[i].0 .0,
                    metric_a: series[i].0 .1.clone(),
                    device_b: series[j].0 .0,
                    metric_b: series[j].0 .1.clone(),
                    coefficient: r,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bottleneck {
    ComputeBound,
    MemoryBound,
    Mixed,
    Idle,
}

impl Bottleneck {
    pub fn name(&self) -> &'static str {
        match self {
            Bottleneck::ComputeBound => "compute_bound",
            Bottleneck::MemoryBound => "memory_bound",
            Bottleneck::Mixed => "mixed",
            Bottleneck::Idle => "idle",
        }
    }
}

/// Classification thresholds. The defaults are heuristic: they reproduce the
/// qualitative compute-vs-memory phase signatures, not a calibrated model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BottleneckPolicy {
    /// Below this mean activity (both SM and DRAM) a window is idle.
    pub idle_below_pct: f64,
    /// Minimum DRAM activity for a memory-bound call.
    pub memory_floor_pct: f64,
    /// SM activity regarded as high when tensor units are quiet.
    pub sm_high_pct: f64,
    /// Dominance factor between tensor and DRAM activity.
    pub dominance: f64,
}

impl Default for BottleneckPolicy {
    fn default() -> Self {
        BottleneckPolicy {
            idle_below_pct: 10.0,
            memory_floor_pct: 30.0,
            sm_high_pct: 50.0,
            dominance: 2.0,
        }
    }
}

impl BottleneckPolicy {
    /// Label a window from its mean tensor (T), SM (S), and DRAM (D) activity.
    pub fn label(&self, tensor: f64, sm: f64, dram: f64) -> Bottleneck {
        if sm.max(dram) < self.idle_below_pct {
            Bottleneck::Idle
        } else if tensor >= self.dominance * dram
            || (sm >= self.sm_high_pct && dram < self.memory_floor_pct)
        {
            Bottleneck::ComputeBound
        } else if dram >= self.dominance * tensor && dram >= self.memory_floor_pct {
            Bottleneck::MemoryBound
        } else {
            Bottleneck::Mixed
        }
    }
}

/// One classified window with the activity means behind the call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BottleneckLabel {
    pub start_s: f64,
    pub end_s: f64,
    pub label: Bottleneck,
    pub mean_tensor_pct: f64,
    pub mean_sm_pct: f64,
    pub mean_dram_pct: f64,
    pub sample_count: usize,
}

/// Tile the session into `window_s` windows and label each one.
///
/// Activity means are taken across all GPU devices carrying the metric. A
/// missing tensor series counts as zero tensor activity; a session without
/// both (sm or tensor) and dram activity cannot be classified.
pub fn classify_bottlenecks(
    session: &SessionData,
    window_s: f64,
    policy: &BottleneckPolicy,
) -> Result<Vec<BottleneckLabel>, AnalyticsError> {
    if !(window_s > 0.0) {
        return Err(AnalyticsError::BadWindow);
    }
    let first = session.ticks.first().ok_or(AnalyticsError::EmptySession)?;
    let last = session.ticks.last().unwrap();

    let gpus = session.gpu_devices();
    let has = |metric: &str| {
        gpus.iter().any(|d| {
            session
                .ticks
                .iter()
                .any(|t| t.values.contains_key(&(*d, metric.to_string())))
        })
    };
    let has_tensor = has("tensor_active_pct");
    let has_sm = has("sm_active_pct");
    let has_dram = has("dram_active_pct");
    if !(has_tensor || has_sm) || !has_dram {
        return Err(AnalyticsError::ActivityMetricsMissing);
    }

    let t0 = first.mono_elapsed_s;
    let duration = last.mono_elapsed_s - t0;
    let window_count = ((duration / window_s).ceil() as usize).max(1);

    let mut labels = Vec::with_capacity(window_count);
    for w in 0..window_count {
        let start = w as f64 * window_s;
        let end = start + window_s;
        let in_window = |rel: f64| {
            rel >= start && (rel < end || (w == window_count - 1 && rel <= duration))
        };

        let mut acc = [(0.0_f64, 0usize); 3]; // tensor, sm, dram
        let mut samples = 0usize;
        for tick in &session.ticks {
            let rel = tick.mono_elapsed_s - t0;
            if !in_window(rel) {
                continue;
            }
            samples += 1;
            for gpu in &gpus {
                for (slot, metric) in
                    ["tensor_active_pct", "sm_active_pct", "dram_active_pct"].iter().enumerate()
                {
                    if let Some(v) = tick.value(*gpu, metric) {
                        acc[slot].0 += v;
                        acc[slot].1 += 1;
                    }
                }
            }
        }
        let mean = |slot: usize| {
            let (sum, n) = acc[slot];
            if n == 0 {
                0.0
            } else {
                sum / n as f64
            }
        };
        let (tensor, sm, dram) = (mean(0), mean(1), mean(2));
        labels.push(BottleneckLabel {
            start_s: start,
            end_s: end,
            label: policy.label(tensor, sm, dram),
            mean_tensor_pct: tensor,
            mean_sm_pct: sm,
            mean_dram_pct: dram,
            sample_count: samples,
        });
    }
    Ok(labels)
}
