//! Per-scale metric reports.

use std::collections::BTreeMap;
use std::fmt::Write;

use ripnerf_core::train::ViewMetric;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleMetrics {
    pub scale: u32,
    pub views: usize,
    pub psnr: f64,
    /// Absent when views at this scale are smaller than the SSIM window.
    pub ssim: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub psnr: f64,
    pub ssim: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scales: Vec<ScaleMetrics>,
    /// Arithmetic means of the per-scale entries.
    pub average: Averages,
    pub per_view: Vec<ViewMetric>,
    /// Time spent producing this report.
    pub wall_clock_seconds: f64,
    pub train_seconds: Option<f64>,
    pub param_count: usize,
    pub model_size_bytes: usize,
    pub config: serde_json::Value,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

impl MetricReport {
    pub fn from_views(per_view: Vec<ViewMetric>, wall_clock_seconds: f64, param_count: usize, model_size_bytes: usize, config: serde_json::Value) -> Self {
        let mut by_scale: BTreeMap<u32, Vec<&ViewMetric>> = BTreeMap::new();
        for v in &per_view {
            by_scale.entry(v.scale).or_default().push(v);
        }
        let scales: Vec<ScaleMetrics> = by_scale
            .iter()
            .map(|(&scale, vs)| ScaleMetrics {
                scale,
                views: vs.len(),
                psnr: mean(vs.iter().map(|v| v.psnr)),
                ssim: vs.iter().map(|v| v.ssim).collect::<Option<Vec<f64>>>().map(|s| mean(s.into_iter())),
            })
            .collect();
        let average = Averages {
            psnr: mean(scales.iter().map(|s| s.psnr)),
            ssim: scales.iter().map(|s| s.ssim).collect::<Option<Vec<f64>>>().map(|s| mean(s.into_iter())),
        };
        Self { scales, average, per_view, wall_clock_seconds, train_seconds: None, param_count, model_size_bytes, config }
    }

    /// Aligned table with one column per scale plus the average.
    pub fn table(&self) -> String {
        let header = |s: u32| if s == 1 { "Full Res.".to_string() } else { format!("1/{s} Res.") };
        let fmt_opt = |v: Option<f64>, p: usize| v.map_or("n/a".to_string(), |x| format!("{x:.p$}"));
        let mut out = String::new();
        let _ = write!(out, "{:<8}", "Metric");
        for s in &self.scales {
            let _ = write!(out, "{:>11}", header(s.scale));
        }
        let _ = writeln!(out, "{:>11}", "Avg.");
        let _ = write!(out, "{:<8}", "PSNR");
        for s in &self.scales {
            let _ = write!(out, "{:>11.2}", s.psnr);
        }
        let _ = writeln!(out, "{:>11.2}", self.average.psnr);
        let _ = write!(out, "{:<8}", "SSIM");
        for s in &self.scales {
            let _ = write!(out, "{:>11}", fmt_opt(s.ssim, 4));
        }
        let _ = writeln!(out, "{:>11}", fmt_opt(self.average.ssim, 4));
        if let Some(t) = self.train_seconds {
            let _ = writeln!(out, "train time {t:.1} s");
        }
        let _ = writeln!(out, "eval time {:.1} s, {} parameters, {} bytes", self.wall_clock_seconds, self.param_count, self.model_size_bytes);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vm(scale: u32, psnr: f64, ssim: Option<f64>) -> ViewMetric {
        ViewMetric { name: String::new(), scale, psnr, ssim }
    }

    #[test]
    fn averages_are_means_of_scale_entries() {
        let r = MetricReport::from_views(
            vec![vm(1, 30.0, Some(0.9)), vm(1, 32.0, Some(0.8)), vm(2, 25.0, Some(0.7)), vm(8, 20.0, None)],
            1.0,
            10,
            80,
            serde_json::Value::Null,
        );
        assert_eq!(r.scales.len(), 3);
        assert_eq!(r.scales[0].psnr, 31.0);
        assert!((r.scales[0].ssim.unwrap() - 0.85).abs() < 1e-15);
        assert!((r.average.psnr - (31.0 + 25.0 + 20.0) / 3.0).abs() < 1e-12);
        assert_eq!(r.average.ssim, None);
        let t = r.table();
        assert!(t.contains("Full Res.") && t.contains("1/8 Res.") && t.contains("n/a"));
    }
}
