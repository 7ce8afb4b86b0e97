//! Per-forward-pass latency measurement and model comparison tables.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::mparams;
use crate::detector::Detector;
use crate::error::{config_err, Error, Result};
use crate::eval::{netscore, EvalReport};
use crate::nn::{ParamStore, Tensor};
use crate::par::in_worker_thread;

pub const MIN_ITERS: usize = 10;
pub const DEFAULT_WARMUP: usize = 10;
pub const DEFAULT_ITERS: usize = 100;

/// Anything that can be timed by [`time_inference`].
pub trait BenchModel {
    fn name(&self) -> &str;
    /// (total, trainable) parameters in millions.
    fn mparams(&self) -> (f64, f64);
    /// One batch-size-1 forward pass, returning a flat view of the outputs.
    fn forward(&self, input: &Tensor<f32>) -> Result<Vec<f32>>;
}

/// A detector with its weights; the timed pass includes decoding and NMS.
pub struct DetectorModel<'a> {
    pub name: String,
    pub detector: &'a Detector,
    pub params: &'a ParamStore<f32>,
}

impl BenchModel for DetectorModel<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn mparams(&self) -> (f64, f64) {
        (mparams(self.params, false), mparams(self.params, true))
    }

    fn forward(&self, input: &Tensor<f32>) -> Result<Vec<f32>> {
        let dets = self.detector.detect(self.params, input)?;
        Ok(dets
            .iter()
            .flatten()
            .flat_map(|d| [d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max, d.class_id as f32, d.score])
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub mean: f64,
    pub p5: f64,
    pub p95: f64,
}

/// Linear-interpolated percentile of an ascending sample, `q` in `[0, 100]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl LatencySummary {
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() || samples.iter().any(|s| !s.is_finite()) {
            return Err(config_err!("latency summary needs finite samples"));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(LatencySummary {
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            median: percentile(&sorted, 50.0),
            mean: samples.iter().sum::<f64>() / samples.len() as f64,
            p5: percentile(&sorted, 5.0),
            p95: percentile(&sorted, 95.0),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model: String,
    /// (height, width) of the batch-size-1 input.
    pub input_size: (usize, usize),
    pub warmup_iters: usize,
    pub timed_iters: usize,
    /// Seconds per timed forward pass, in run order.
    pub latencies: Vec<f64>,
    pub summary: LatencySummary,
    pub mparams_total: f64,
    pub mparams_trainable: f64,
    pub host: String,
    /// sha256 of the output of every timed pass (they must agree).
    pub output_sha256: String,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// OS, architecture, CPU model and logical core count.
pub fn host_descriptor() -> String {
    let cpus = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| s.lines().find(|l| l.starts_with("model name")).and_then(|l| l.split(':').nth(1)).map(|m| m.trim().to_string()));
    match model {
        Some(m) => format!("{}-{} {m} ({cpus} logical cpus)", std::env::consts::OS, std::env::consts::ARCH),
        None => format!("{}-{} ({cpus} logical cpus)", std::env::consts::OS, std::env::consts::ARCH),
    }
}

fn digest(out: &[f32]) -> String {
    let mut h = Sha256::new();
    for v in out {
        h.update(v.to_le_bytes());
    }
    format!("{:x}", h.finalize())
}

/// Runs `warmup` untimed and `iters` timed forward passes on the same input.
///
/// Must be called from a plain thread: inside a worker of the parallel pool
/// other work could share the timed region, so that is refused.
pub fn time_inference(model: &dyn BenchModel, input: &Tensor<f32>, warmup: usize, iters: usize) -> Result<BenchReport> {
    if iters < MIN_ITERS {
        return Err(config_err!("bench needs at least {MIN_ITERS} timed iterations, got {iters}"));
    }
    if warmup < 1 {
        return Err(config_err!("bench needs at least one warmup iteration"));
    }
    if input.shape().n() != 1 {
        return Err(config_err!("bench input must have batch size 1, got {}", input.shape()));
    }
    if in_worker_thread() {
        return Err(config_err!("refusing to time inference from inside a parallel worker thread"));
    }
    let fail = |phase: &str, i: usize, e: Error| match e {
        Error::Numeric(m) => Error::Numeric(format!("{} {phase} iteration {i}: {m}", model.name())),
        Error::Config(m) => Error::Config(format!("{} {phase} iteration {i}: {m}", model.name())),
        other => Error::Contract(format!("{} {phase} iteration {i}: {other}", model.name())),
    };
    for i in 0..warmup {
        model.forward(input).map_err(|e| fail("warmup", i, e))?;
    }
    let mut latencies = Vec::with_capacity(iters);
    let mut reference: Option<String> = None;
    for i in 0..iters {
        let t0 = Instant::now();
        let out = model.forward(input).map_err(|e| fail("timed", i, e))?;
        latencies.push(t0.elapsed().as_secs_f64());
        let d = digest(&out);
        match &reference {
            None => reference = Some(d),
            Some(r) if *r != d => return Err(Error::Numeric(format!("{}: output changed at timed iteration {i}", model.name()))),
            _ => {}
        }
    }
    let (total, trainable) = model.mparams();
    if !(total > 0.0) {
        return Err(config_err!("{}: model reports no parameters", model.name()));
    }
    Ok(BenchReport {
        model: model.name().to_string(),
        input_size: (input.shape().h(), input.shape().w()),
        warmup_iters: warmup,
        timed_iters: iters,
        summary: LatencySummary::from_samples(&latencies)?,
        latencies,
        mparams_total: total,
        mparams_trainable: trainable,
        host: host_descriptor(),
        output_sha256: reference.unwrap_or_default(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub map: f64,
    pub mparams: f64,
    pub median_seconds: f64,
    /// Median latency relative to the first row (2.0 = twice as slow).
    pub latency_ratio: f64,
    /// First row's median over this row's (2.0 = twice as fast).
    pub speedup: f64,
    pub netscore: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

/// Pairs each bench report with the evaluation of the same model.
///
/// An evaluation whose `config.model` is set must name the same model as its
/// bench report.
pub fn compare_models(reports: &[BenchReport], evals: &[EvalReport]) -> Result<Comparison> {
    if reports.is_empty() {
        return Err(config_err!("nothing to compare"));
    }
    if reports.len() != evals.len() {
        return Err(config_err!("{} bench reports but {} evaluation reports", reports.len(), evals.len()));
    }
    let base = reports[0].summary.median;
    let rows = reports
        .iter()
        .zip(evals)
        .map(|(b, e)| {
            if let Some(name) = e.config.get("model").and_then(|v| v.as_str()) {
                if name != b.model {
                    return Err(config_err!("bench report for {} paired with evaluation of {name}", b.model));
                }
            }
            let median = b.summary.median;
            Ok(ComparisonRow {
                model: b.model.clone(),
                map: e.map,
                mparams: b.mparams_total,
                median_seconds: median,
                latency_ratio: median / base,
                speedup: base / median,
                netscore: netscore(e.map, b.mparams_total, median)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Comparison { rows })
}

impl Comparison {
    pub fn to_table(&self) -> String {
        let mut rows = vec![["model".to_string(), "mAP".into(), "MParams".into(), "median ms".into(), "latency x".into(), "NetScore".into()]];
        for r in &self.rows {
            rows.push([
                r.model.clone(),
                format!("{:.4}", r.map),
                format!("{:.4}", r.mparams),
                format!("{:.3}", r.median_seconds * 1e3),
                format!("{:.3}", r.latency_ratio),
                format!("{:.4}", r.netscore),
            ]);
        }
        let widths: Vec<usize> = (0..6).map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0)).collect();
        rows.iter()
            .map(|r| {
                let cells: Vec<String> = r.iter().zip(&widths).enumerate().map(|(i, (s, w))| if i == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") }).collect();
                cells.join("  ").trim_end().to_string() + "\n"
            })
            .collect()
    }

    /// Comma-separated rows; floats use shortest round-trip formatting.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(|e| config_err!("csv: {e}"))?;
        }
        let bytes = w.into_inner().map_err(|e| config_err!("csv: {e}"))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{EvalCounts, EvalReport};
    use crate::nn::Shape;
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::time::Duration;

    struct Sleeper {
        ms: u64,
        calls: AtomicUsize,
    }

    impl BenchModel for Sleeper {
        fn name(&self) -> &str {
            "sleeper"
        }
        fn mparams(&self) -> (f64, f64) {
            (1.0, 1.0)
        }
        fn forward(&self, _: &Tensor<f32>) -> Result<Vec<f32>> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            std::thread::sleep(Duration::from_millis(self.ms));
            Ok(vec![1.0])
        }
    }

    fn input() -> Tensor<f32> {
        Tensor::zeros(Shape::new(1, 3, 4, 4))
    }

    fn report(name: &str, median: f64, mp: f64) -> BenchReport {
        let lat = vec![median; 10];
        BenchReport {
            model: name.into(),
            input_size: (4, 4),
            warmup_iters: 1,
            timed_iters: 10,
            summary: LatencySummary::from_samples(&lat).unwrap(),
            latencies: lat,
            mparams_total: mp,
            mparams_trainable: mp,
            host: String::new(),
            output_sha256: String::new(),
        }
    }

    fn eval(map: f64) -> EvalReport {
        EvalReport {
            thresholds: vec![],
            classes: vec![],
            map_per_threshold: vec![],
            map,
            map_50: map,
            map_75: map,
            counts: EvalCounts::default(),
            config: serde_json::Value::Null,
        }
    }

    #[test]
    fn sleeping_stub() {
        let m = Sleeper { ms: 10, calls: AtomicUsize::new(0) };
        let r = time_inference(&m, &input(), 2, 20).unwrap();
        assert_eq!(m.calls.load(Ordering::Relaxed), 22);
        assert_eq!(r.latencies.len(), 20);
        assert!(r.summary.median >= 0.009 && r.summary.median <= 0.015, "{:?}", r.summary);
    }

    #[test]
    fn precondition_errors() {
        let m = Sleeper { ms: 0, calls: AtomicUsize::new(0) };
        assert!(matches!(time_inference(&m, &input(), 1, 0), Err(Error::Config(_))));
        assert!(matches!(time_inference(&m, &input(), 1, 9), Err(Error::Config(_))));
        assert!(matches!(time_inference(&m, &input(), 0, 10), Err(Error::Config(_))));
        assert!(time_inference(&m, &Tensor::zeros(Shape::new(2, 3, 4, 4)), 1, 10).is_err());
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn refuses_inside_worker() {
        let m = Sleeper { ms: 0, calls: AtomicUsize::new(0) };
        let r = rayon::scope(|_| time_inference(&m, &input(), 1, 10));
        assert!(r.is_err());
    }

    #[test]
    fn summary_examples() {
        let s = LatencySummary::from_samples(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.min, s.max, s.median, s.mean), (1.0, 4.0, 2.5, 2.5));
        assert!((s.p5 - 1.15).abs() < 1e-12);
        assert!((s.p95 - 3.85).abs() < 1e-12);
    }

    #[test]
    fn comparison_ratios_and_netscore() {
        let c = compare_models(&[report("a", 0.1, 2.0), report("b", 0.2, 5.0)], &[eval(0.5), eval(0.6)]).unwrap();
        assert_eq!(c.rows[0].latency_ratio, 1.0);
        assert_eq!(c.rows[1].latency_ratio, 2.0);
        assert_eq!(c.rows[1].speedup, 0.5);
        assert_eq!(c.rows[1].netscore, (0.6f64 * 100.0).powi(2) / (5.0 * 0.2));
        let csv = c.to_csv().unwrap();
        assert!(csv.starts_with("model,map,mparams,median_seconds,latency_ratio,speedup,netscore\n"), "{csv}");
        assert!(c.to_table().lines().count() == 3);

        let same = compare_models(&[report("a", 0.1, 2.0)], &[eval(0.5)]).unwrap();
        assert_eq!(same.rows[0].speedup, 1.0);
    }

    #[test]
    fn mismatched_pairs() {
        assert!(compare_models(&[report("a", 0.1, 1.0)], &[]).is_err());
        let mut e = eval(0.5);
        e.config = serde_json::json!({ "model": "other" });
        assert!(compare_models(&[report("a", 0.1, 1.0)], &[e]).is_err());
    }

    proptest! {
        #[test]
        fn summary_is_a_pure_function(xs in prop::collection::vec(1e-4f64..1.0, 10..60)) {
            let s = LatencySummary::from_samples(&xs).unwrap();
            prop_assert_eq!(s, LatencySummary::from_samples(&xs).unwrap());
            prop_assert!(s.min <= s.p5 && s.p5 <= s.median && s.median <= s.p95 && s.p95 <= s.max);
            let mut rev = xs.clone();
            rev.reverse();
            let r = LatencySummary::from_samples(&rev).unwrap();
            prop_assert_eq!((s.median, s.p5, s.p95), (r.median, r.p5, r.p95));
        }
    }
}
