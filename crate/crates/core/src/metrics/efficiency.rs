use std::time::Instant;

use crate::autodiff::Array;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::DepthNet;
use crate::uq::{self, Method, UqConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingStats {
    pub runs: usize,
    pub mean_ms: f64,
    /// Sample standard deviation.
    pub std_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyReport {
    pub trainable_params: usize,
    pub flops_per_forward: u64,
    pub infer_ms_mean: f64,
    pub infer_ms_std: f64,
    pub fps: f64,
    pub runs: usize,
}

/// Calls `f` `warmup` times untimed, then `runs` times timed, serially.
pub fn time_runs(runs: usize, warmup: usize, mut f: impl FnMut() -> Result<()>) -> Result<TimingStats> {
    if runs < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: runs });
    }
    for _ in 0..warmup {
        f()?;
    }
    let mut ms = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t0 = Instant::now();
        f()?;
        ms.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let mean = ms.iter().sum::<f64>() / runs as f64;
    let var = ms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
    Ok(TimingStats {
        runs,
        mean_ms: mean,
        std_ms: var.sqrt(),
    })
}

/// Analytic FLOPs of one prediction with `cfg.method` at `h × w`. Only
/// convolutions are counted; sampling methods multiply the forward cost,
/// while sub-ensembles share a single encoder pass.
pub fn method_flops(net: &DepthNet, cfg: &UqConfig, h: usize, w: usize) -> u64 {
    let (enc, head) = (net.encoder_flops(h, w), net.head_flops(h, w));
    let forward = enc + head;
    match cfg.method {
        Method::Baseline | Method::Lc | Method::Gnll => forward,
        Method::Mcd => cfg.samples as u64 * forward,
        Method::Se => enc + net.config().num_heads as u64 * head,
        Method::Tta => (1 + cfg.flips.count()) as u64 * forward,
    }
}

/// Times complete predictions (all samples plus aggregation) on a fixed
/// synthetic image, on a single worker thread.
pub fn benchmark(net: &DepthNet, size: (usize, usize), cfg: &UqConfig, runs: usize, warmup: usize) -> Result<EfficiencyReport> {
    let (h, w) = size;
    net.check_input(&[1, 3, h, w])?;
    let image = Array::from_fn(&[3, h, w], |i| ((i * 7919) % 256) as f64 / 255.0);
    let floor = LossConfig::default().variance_floor;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let stats = pool.install(|| time_runs(runs, warmup, || uq::predict(net, &image, cfg, floor).map(|_| ())))?;
    Ok(EfficiencyReport {
        trainable_params: net.param_count(),
        flops_per_forward: method_flops(net, cfg, h, w),
        infer_ms_mean: stats.mean_ms,
        infer_ms_std: stats.std_ms,
        fps: 1000.0 / stats.mean_ms,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn timing_stats() {
        assert!(matches!(time_runs(1, 0, || Ok(())), Err(Error::InsufficientSamples { .. })));
        let s = time_runs(50, 2, || Ok(())).unwrap();
        assert!(s.std_ms >= 0.0 && s.mean_ms < 1.0);
    }

    #[test]
    fn flop_ratios() {
        let net = DepthNet::build(ModelConfig::default()).unwrap();
        let base = method_flops(&net, &UqConfig::for_method(Method::Baseline), 64, 64);
        assert_eq!(method_flops(&net, &UqConfig::for_method(Method::Mcd), 64, 64), 10 * base);
        assert_eq!(method_flops(&net, &UqConfig::for_method(Method::Tta), 64, 64), 3 * base);
        let se = DepthNet::build(ModelConfig { num_heads: 10, ..ModelConfig::default() }).unwrap();
        let se_flops = method_flops(&se, &UqConfig::for_method(Method::Se), 64, 64);
        assert_eq!(se_flops, base + 9 * net.head_flops(64, 64));
    }

    #[test]
    fn benchmark_report_is_consistent() {
        let net = DepthNet::build(ModelConfig {
            input_size: (8, 8),
            enc_channels: vec![2],
            bottleneck_channels: 2,
            ..ModelConfig::default()
        })
        .unwrap();
        let r = benchmark(&net, (8, 8), &UqConfig::default(), 5, 1).unwrap();
        assert_eq!(r.trainable_params, net.param_count());
        assert!((r.fps - 1000.0 / r.infer_ms_mean).abs() < 1e-9);
        assert!(benchmark(&net, (8, 8), &UqConfig::default(), 1, 0).is_err());
    }
}
