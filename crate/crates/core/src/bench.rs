//! Wall-clock scaling harness for the pipeline stages.
//!
//! Times graph construction, Chebyshev filtering, GCN forward, and
//! attention fusion separately across node counts at fixed feature width,
//! reporting median-of-N wall times and fitted log-log slopes per stage.

use std::time::Instant;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::fusion::{attention_weights_t, fuse_t, gate_t};
use crate::gcn::{gcn_forward, GcnLayerParams, GcnStack};
use crate::graph::{build_inter_graph, build_intra_graph, graph_operators, GraphOperators};
use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::spectral::{chebyshev_apply, estimate_lambda_max, ChebyshevFilter};
use crate::tape::Tape;

pub const STAGES: [&str; 4] = [
    "graph_construction",
    "chebyshev_filter",
    "gcn_forward",
    "fusion",
];

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub stage: String,
    pub n: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// (stage, fitted log-log slope of time vs n).
    pub slopes: Vec<(String, f64)>,
    /// Filtering-time ratio when the Chebyshev order doubles at fixed n.
    pub k_doubling_ratio: f64,
    pub sizes: Vec<usize>,
    pub feature_dim: usize,
    pub chebyshev_k: usize,
}

impl BenchReport {
    pub fn slope(&self, stage: &str) -> Option<f64> {
        self.slopes
            .iter()
            .find(|(s, _)| s == stage)
            .map(|(_, v)| *v)
    }

    pub fn timings_csv(&self) -> String {
        let mut out = String::from("stage,n,seconds\n");
        for row in &self.rows {
            out.push_str(&format!("{},{},{}\n", row.stage, row.n, row.seconds));
        }
        out
    }

    pub fn slopes_csv(&self) -> String {
        let mut out = String::from("stage,loglog_slope\n");
        for (stage, slope) in &self.slopes {
            out.push_str(&format!("{stage},{slope}\n"));
        }
        out.push_str(&format!("k_doubling_ratio,{}\n", self.k_doubling_ratio));
        out
    }
}

/// Least-squares slope of ln(seconds) against ln(n).
pub fn fit_loglog_slope(points: &[(usize, f64)]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|(x, _)| (*x as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, y)| y.max(1e-12).ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    num / den
}

fn median_time(reps: usize, mut f: impl FnMut()) -> f64 {
    f(); // warmup
    let mut times: Vec<f64> = (0..reps)
        .map(|_| {
            let t0 = Instant::now();
            f();
            t0.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times[times.len() / 2]
}

fn random_features(n: usize, d: usize, rng: &mut Rng) -> Matrix {
    Matrix::new(n, d, (0..n * d).map(|_| rng.normal()).collect()).unwrap()
}

fn fixture_ops(n: usize, d: usize, rng: &mut Rng) -> Result<GraphOperators> {
    let x = random_features(n, d, rng);
    let g = build_inter_graph(&x, (d as f64).sqrt() * 2.0)?;
    graph_operators(&g, false)
}

/// Run the scaling benchmark. `reps` timed repetitions per point (median
/// reported), one warmup each.
pub fn run_bench(sizes: &[usize], d: usize, k: usize, reps: usize, seed: u64) -> Result<BenchReport> {
    if sizes.len() < 2 {
        return Err(Error::Config("bench needs at least two sizes".into()));
    }
    let mut rng = Rng::from_seed(seed);
    let mut rows = Vec::new();
    let cfg = TrainConfig::default();

    for &n in sizes {
        let x = random_features(n, d, &mut rng);

        // stage 1: dual-graph construction (one intra + one inter graph)
        let secs = median_time(reps, || {
            let eps = 2.0 * d as f64;
            let _ = build_intra_graph(&x, eps, "bench").unwrap();
            let _ = build_inter_graph(&x, (d as f64).sqrt() * 2.0).unwrap();
        });
        rows.push(BenchRow {
            stage: "graph_construction".into(),
            n,
            seconds: secs,
        });

        let ops = fixture_ops(n, d, &mut rng)?;
        let lambda = estimate_lambda_max(&ops)?;

        // stage 2: Chebyshev filtering at order k
        let theta: Vec<f64> = (0..=k).map(|i| 1.0 / (i + 1) as f64).collect();
        let filter = ChebyshevFilter::new(theta, lambda)?;
        let secs = median_time(reps, || {
            let _ = chebyshev_apply(&filter, &ops, &x).unwrap();
        });
        rows.push(BenchRow {
            stage: "chebyshev_filter".into(),
            n,
            seconds: secs,
        });

        // stage 3: multi-scale GCN forward (default depth and hops)
        let hop_scale = 1.0 / ((cfg.hop_k + 1) as f64).sqrt();
        let stack = GcnStack {
            layers: (0..cfg.gcn_layers)
                .map(|_| GcnLayerParams {
                    hop_weights: (0..=cfg.hop_k)
                        .map(|_| random_features(d, d, &mut rng).scale(hop_scale))
                        .collect(),
                    dropout: 0.0,
                })
                .collect(),
        };
        let secs = median_time(reps, || {
            let _ = gcn_forward(&x, &ops, &stack, false, &mut Rng::from_seed(0)).unwrap();
        });
        rows.push(BenchRow {
            stage: "gcn_forward".into(),
            n,
            seconds: secs,
        });

        // stage 4: attention + fuse + gate over three modality streams
        let hs: Vec<Matrix> = (0..3).map(|_| random_features(n, d, &mut rng)).collect();
        let anchors = random_features(n, d, &mut rng);
        let w_a = random_features(d, d, &mut rng).scale(1.0 / d as f64);
        let w_g = random_features(d, d, &mut rng).scale(0.1);
        let b_g = Matrix::zeros(1, d);
        let present = vec![vec![true; n]; 3];
        let secs = median_time(reps, || {
            let mut tape = Tape::new();
            let h_ids: Vec<_> = hs.iter().map(|h| tape.constant(h.clone())).collect();
            let s_id = tape.constant(anchors.clone());
            let wa_id = tape.constant(w_a.clone());
            let alpha = attention_weights_t(&mut tape, &h_ids, s_id, wa_id, &present).unwrap();
            let z = fuse_t(&mut tape, alpha, &h_ids).unwrap();
            let wg_id = tape.constant(w_g.clone());
            let bg_id = tape.constant(b_g.clone());
            let _ = gate_t(&mut tape, z, wg_id, bg_id).unwrap();
        });
        rows.push(BenchRow {
            stage: "fusion".into(),
            n,
            seconds: secs,
        });
    }

    let slopes = STAGES
        .iter()
        .map(|stage| {
            let points: Vec<(usize, f64)> = rows
                .iter()
                .filter(|r| r.stage == *stage)
                .map(|r| (r.n, r.seconds))
                .collect();
            (stage.to_string(), fit_loglog_slope(&points))
        })
        .collect();

    // filtering-cost ratio for doubled order at the largest size
    let n_max = *sizes.iter().max().unwrap();
    let x = random_features(n_max, d, &mut rng);
    let ops = fixture_ops(n_max, d, &mut rng)?;
    let lambda = estimate_lambda_max(&ops)?;
    let time_for = |order: usize, rng_seed: u64| {
        let _ = rng_seed;
        let theta: Vec<f64> = (0..=order).map(|i| 1.0 / (i + 1) as f64).collect();
        let filter = ChebyshevFilter::new(theta, lambda).unwrap();
        median_time(reps, || {
            let _ = chebyshev_apply(&filter, &ops, &x).unwrap();
        })
    };
    let t_k = time_for(k, 0);
    let t_2k = time_for(2 * k, 1);
    let k_doubling_ratio = t_2k / t_k.max(1e-12);

    Ok(BenchReport {
        rows,
        slopes,
        k_doubling_ratio,
        sizes: sizes.to_vec(),
        feature_dim: d,
        chebyshev_k: k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_fit_recovers_exponent() {
        let points: Vec<(usize, f64)> = [8usize, 16, 32, 64]
            .iter()
            .map(|&n| (n, 3.0e-6 * (n as f64).powi(2)))
            .collect();
        let slope = fit_loglog_slope(&points);
        assert!((slope - 2.0).abs() <= 1e-9);
    }

    #[test]
    fn bench_produces_all_stages() {
        let report = run_bench(&[16, 32], 8, 3, 1, 0).unwrap();
        assert_eq!(report.rows.len(), 8);
        for stage in STAGES {
            assert!(report.slope(stage).is_some());
        }
        assert!(report.k_doubling_ratio > 0.0);
        let csv = report.timings_csv();
        assert!(csv.starts_with("stage,n,seconds\n"));
        assert_eq!(csv.lines().count(), 9);
    }
}
