//! Plot-ready tables: weight histograms and schedule dumps.

use std::fmt::Write as _;

use crate::harness::config::{ExperimentConfig, Method};
use crate::params::ParamStore;
use crate::schedule::{pa_schedule_at, sparsity_and_eta_at, ScheduleError};

/// Histogram of the nonzero prunable values over `bins` equal bins on the
/// symmetric range `[-M, M]`, `M` being the largest magnitude (1 when every
/// value is zero). Returns `(bin center, count)` rows.
pub fn histogram(params: &ParamStore, bins: usize) -> Vec<(f64, usize)> {
    let bins = bins.max(1);
    let values: Vec<f64> = params
        .prunable()
        .flat_map(|p| p.tensor.data().iter().copied())
        .filter(|&v| v != 0.0)
        .collect();
    let m = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let m = if m > 0.0 { m } else { 1.0 };
    let width = 2.0 * m / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        let i = (((v + m) / width).floor() as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (-m + (i as f64 + 0.5) * width, c))
        .collect()
}

pub fn histogram_to_csv(rows: &[(f64, usize)]) -> String {
    let mut s = String::from("bin_center,count\n");
    for (c, n) in rows {
        let _ = writeln!(s, "{c:e},{n}");
    }
    s
}

/// Sample skewness `m3 / m2^{3/2}` (0 for fewer than two values).
pub fn skewness(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    if m2 == 0.0 {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}

/// Per-step schedule table. Iterative methods list `step,sparsity,eta,prune`;
/// prior annealing lists `step,sigma0_sq,eta,tau`.
pub fn dump_schedule(cfg: &ExperimentConfig) -> Result<String, ScheduleError> {
    let mut s = String::new();
    if cfg.method == Method::Pa {
        let pa = cfg
            .pa_config()
            .map_err(|e| ScheduleError::Invalid(e.to_string()))?
            .schedule;
        pa.validate()?;
        s.push_str("step,sigma0_sq,eta,tau\n");
        for t in 1..=pa.total_steps {
            let p = pa_schedule_at(t, &pa)?;
            let _ = writeln!(s, "{t},{:e},{},{}", p.sigma0_sq, p.eta, p.tau);
        }
    } else {
        let sc = cfg.schedule();
        sc.validate()?;
        s.push_str("step,sparsity,eta,prune\n");
        for t in 1..=sc.total_steps {
            let (v, eta) = sparsity_and_eta_at(t, &sc)?;
            let _ = writeln!(s, "{t},{v},{eta},{}", u8::from(sc.is_prune_step(t)));
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::preset;
    use crate::tensor::Tensor;
    use crate::transformer::{init_params, TransformerConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_pruned_store_gives_zero_counts() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::zeros(&[4, 4]), true).unwrap();
        let h = histogram(&s, 10);
        assert_eq!(h.len(), 10);
        assert!(h.iter().all(|&(_, c)| c == 0));
    }

    #[test]
    fn counts_cover_nonzero_prunable_values() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::vector(vec![0.0, -2.0, 2.0, 0.5, -0.1]), true)
            .unwrap();
        s.insert("g", Tensor::vector(vec![9.0]), false).unwrap();
        let h = histogram(&s, 4);
        assert_eq!(h.iter().map(|r| r.1).sum::<usize>(), 4);
        assert_eq!(h[0], (-1.5, 1));
        assert_eq!(h[3], (1.5, 1));
    }

    #[test]
    fn initializer_histogram_is_near_symmetric() {
        let cfg = TransformerConfig {
            d: 32,
            k: 8,
            m_ff: 64,
            heads: 4,
            layers: 8,
            n_max: 16,
            vocab: 16,
            n_classes: 4,
        };
        let s = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert!(s.prunable_count() >= 60_000);
        let values: Vec<f64> = s.prunable().flat_map(|p| p.tensor.data().to_vec()).collect();
        assert!(skewness(&values).abs() < 0.1);
        let h = histogram(&s, 20);
        let (left, right): (usize, usize) = (h[..10].iter().map(|r| r.1).sum(), h[10..].iter().map(|r| r.1).sum());
        let total = (left + right) as f64;
        assert!((left as f64 - right as f64).abs() / total < 0.02);
    }

    #[test]
    fn schedule_dump_shapes() {
        let cfg = preset("desk-90").unwrap();
        let text = dump_schedule(&cfg).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2501);
        assert_eq!(lines[0], "step,sparsity,eta,prune");
        assert_eq!(lines[2500], "2500,0.9,1,1");
        let pa = preset("desk-90-pa").unwrap();
        let text = dump_schedule(&pa).unwrap();
        assert!(text.starts_with("step,sigma0_sq,eta,tau\n1,1e-4,"));
    }
}
