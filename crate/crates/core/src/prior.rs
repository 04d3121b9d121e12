//! Mixture Gaussian prior `λ·N(0, σ1²) + (1−λ)·N(0, σ0²)` over each
//! prunable weight: the spike responsibility `g`, the stable log-prior
//! gradient, the negative log density, the one-shot pruning threshold and
//! penalty-landscape sampling.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::tensor::Tensor;

/// Beyond this exponent `g` is returned as exactly 0 instead of evaluating
/// `exp`, which overflows near 709.
const G_EXP_CUTOFF: f64 = 700.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PriorError {
    #[error("lambda must lie in (0, 1), got {0}")]
    Lambda(f64),
    #[error("{name} must be positive and finite, got {value}")]
    Variance { name: &'static str, value: f64 },
    #[error("spike variance {sigma0_sq} exceeds slab variance {sigma1_sq}")]
    SpikeWiderThanSlab { sigma0_sq: f64, sigma1_sq: f64 },
    #[error("threshold needs sigma0_sq < sigma1_sq strictly (got {sigma0_sq} and {sigma1_sq})")]
    ThresholdVariances { sigma0_sq: f64, sigma1_sq: f64 },
    #[error("threshold log argument {0} is not above 1; (1-lambda)*sigma1 must exceed lambda*sigma0")]
    ThresholdLog(f64),
    #[error("invalid curve grid: {0}")]
    Grid(String),
}

/// Hyperparameters of the mixture prior with the two derived constants of
/// the stable gradient form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MgpParams", into = "MgpParams")]
pub struct MgpConfig {
    lambda: f64,
    sigma0_sq: f64,
    sigma1_sq: f64,
    c1: f64,
    c2: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct MgpParams {
    lambda: f64,
    sigma0_sq: f64,
    sigma1_sq: f64,
}

impl TryFrom<MgpParams> for MgpConfig {
    type Error = PriorError;
    fn try_from(p: MgpParams) -> Result<Self, PriorError> {
        MgpConfig::new(p.lambda, p.sigma0_sq, p.sigma1_sq)
    }
}

impl From<MgpConfig> for MgpParams {
    fn from(c: MgpConfig) -> Self {
        MgpParams {
            lambda: c.lambda,
            sigma0_sq: c.sigma0_sq,
            sigma1_sq: c.sigma1_sq,
        }
    }
}

impl MgpConfig {
    pub fn new(lambda: f64, sigma0_sq: f64, sigma1_sq: f64) -> Result<Self, PriorError> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(PriorError::Lambda(lambda));
        }
        for (name, value) in [("sigma0_sq", sigma0_sq), ("sigma1_sq", sigma1_sq)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(PriorError::Variance { name, value });
            }
        }
        if sigma0_sq > sigma1_sq {
            return Err(PriorError::SpikeWiderThanSlab { sigma0_sq, sigma1_sq });
        }
        let c1 = lambda.ln() - (1.0 - lambda).ln() + 0.5 * sigma0_sq.ln() - 0.5 * sigma1_sq.ln();
        let c2 = 0.5 / sigma0_sq - 0.5 / sigma1_sq;
        Ok(Self {
            lambda,
            sigma0_sq,
            sigma1_sq,
            c1,
            c2,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn sigma0_sq(&self) -> f64 {
        self.sigma0_sq
    }

    pub fn sigma1_sq(&self) -> f64 {
        self.sigma1_sq
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    /// Same λ and slab, new spike variance.
    pub fn with_sigma0_sq(&self, sigma0_sq: f64) -> Result<Self, PriorError> {
        Self::new(self.lambda, sigma0_sq, self.sigma1_sq)
    }

    /// Posterior responsibility of the spike, `(exp(c2·θ² + c1) + 1)⁻¹`.
    pub fn g(&self, theta: f64) -> f64 {
        let e = self.c2 * theta * theta + self.c1;
        if e > G_EXP_CUTOFF {
            0.0
        } else {
            1.0 / (e.exp() + 1.0)
        }
    }

    /// `∂/∂θ log π(θ) = −(θ/σ0²·g(θ) + θ/σ1²·(1 − g(θ)))`.
    pub fn grad_log_prior(&self, theta: f64) -> f64 {
        if self.sigma0_sq == self.sigma1_sq {
            return -theta / self.sigma0_sq;
        }
        let g = self.g(theta);
        -(theta / self.sigma0_sq * g + theta / self.sigma1_sq * (1.0 - g))
    }

    /// `−log π(θ)` for a single coordinate, with normalizing constants.
    pub fn neg_log_density(&self, theta: f64) -> f64 {
        let t2 = theta * theta;
        let slab = self.lambda.ln() - 0.5 * (2.0 * PI * self.sigma1_sq).ln() - t2 / (2.0 * self.sigma1_sq);
        let spike = (-self.lambda).ln_1p() - 0.5 * (2.0 * PI * self.sigma0_sq).ln() - t2 / (2.0 * self.sigma0_sq);
        let (hi, lo) = if slab >= spike { (slab, spike) } else { (spike, slab) };
        -(hi + (lo - hi).exp().ln_1p())
    }

    /// Magnitude at which the spike and slab responsibilities are equal,
    /// `√2·σ0·σ1/√(σ1²−σ0²) · √log((1−λ)/λ · σ1/σ0)`.
    pub fn pa_threshold(&self) -> Result<f64, PriorError> {
        if self.sigma0_sq >= self.sigma1_sq {
            return Err(PriorError::ThresholdVariances {
                sigma0_sq: self.sigma0_sq,
                sigma1_sq: self.sigma1_sq,
            });
        }
        let (s0, s1) = (self.sigma0_sq.sqrt(), self.sigma1_sq.sqrt());
        let arg = (1.0 - self.lambda) / self.lambda * (s1 / s0);
        if arg.is_nan() || arg <= 1.0 {
            return Err(PriorError::ThresholdLog(arg));
        }
        Ok(2f64.sqrt() * s0 * s1 / (self.sigma1_sq - self.sigma0_sq).sqrt() * arg.ln().sqrt())
    }
}

/// Elementwise `∇ log π` over a tensor.
pub fn mgp_grad(theta: &Tensor, cfg: &MgpConfig) -> Tensor {
    theta.map(|t| cfg.grad_log_prior(t))
}

/// `g` evaluated at a scalar.
pub fn g_fn(theta: f64, cfg: &MgpConfig) -> f64 {
    cfg.g(theta)
}

/// `−Σ_j log π(θ_j)` under independence.
pub fn neg_log_prior(theta: &Tensor, cfg: &MgpConfig) -> f64 {
    theta.data().iter().map(|&t| cfg.neg_log_density(t)).sum()
}

pub fn pa_threshold(cfg: &MgpConfig) -> Result<f64, PriorError> {
    cfg.pa_threshold()
}

/// Sampling grid `lo, lo+step, …` up to `hi`, plus an optional dense band
/// around zero for the spike region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
    /// Points in the near-zero band; 0 disables it.
    pub zoom_points: usize,
}

impl CurveGrid {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self, PriorError> {
        if !(lo.is_finite() && hi.is_finite() && step.is_finite()) {
            return Err(PriorError::Grid("bounds and step must be finite".into()));
        }
        if step.is_nan() || step <= 0.0 || hi < lo {
            return Err(PriorError::Grid(format!(
                "need lo <= hi and step > 0, got {lo}:{hi}:{step}"
            )));
        }
        if (hi - lo) / step > 1e7 {
            return Err(PriorError::Grid("more than 1e7 points".into()));
        }
        Ok(Self {
            lo,
            hi,
            step,
            zoom_points: 0,
        })
    }

    /// Parses `LO:HI:STEP`.
    pub fn parse(spec: &str) -> Result<Self, PriorError> {
        let parts: Vec<&str> = spec.split(':').collect();
        let [lo, hi, step] = parts.as_slice() else {
            return Err(PriorError::Grid(format!("expected LO:HI:STEP, got {spec:?}")));
        };
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| PriorError::Grid(format!("not a number: {s:?}")))
        };
        Self::new(num(lo)?, num(hi)?, num(step)?)
    }

    pub fn with_zoom(mut self, points: usize) -> Self {
        self.zoom_points = points;
        self
    }

    fn points(&self, cfg: &MgpConfig) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        let mut pts: Vec<f64> = (0..=n).map(|i| self.lo + i as f64 * self.step).collect();
        if self.zoom_points > 1 {
            let half = cfg
                .pa_threshold()
                .map(|t| 3.0 * t)
                .unwrap_or(10.0 * cfg.sigma0_sq.sqrt());
            let m = self.zoom_points;
            pts.extend((0..m).map(|i| -half + 2.0 * half * i as f64 / (m - 1) as f64));
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }
}

/// One sampled point of the penalty landscape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub theta: f64,
    pub neg_log_prior: f64,
    pub neg_grad: f64,
}

/// Samples `(θ, −log π(θ), −∇log π(θ))` over `grid`.
pub fn penalty_curve(cfg: &MgpConfig, grid: &CurveGrid) -> Vec<CurvePoint> {
    grid.points(cfg)
        .into_iter()
        .map(|theta| CurvePoint {
            theta,
            neg_log_prior: cfg.neg_log_density(theta),
            neg_grad: -cfg.grad_log_prior(theta),
        })
        .collect()
}

/// Comma-separated rendering with a `theta,neg_log_prior,neg_grad` header.
pub fn curve_to_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("theta,neg_log_prior,neg_grad\n");
    for p in points {
        let _ = writeln!(out, "{:e},{:e},{:e}", p.theta, p.neg_log_prior, p.neg_grad);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn preset() -> MgpConfig {
        MgpConfig::new(1e-7, 1e-10, 0.1).unwrap()
    }

    #[test]
    fn derived_constants() {
        let c = preset();
        // c1 = ln(1e-7) - ln(1 - 1e-7) + 0.5 ln(1e-10) - 0.5 ln(0.1)
        assert!((c.c1() - (-26.479_728_469)).abs() < 1e-6, "{}", c.c1());
        assert!((c.c2() - 4_999_999_995.0).abs() < 1e-3);
    }

    #[test]
    fn construction_validates() {
        assert!(matches!(MgpConfig::new(0.0, 1e-10, 0.1), Err(PriorError::Lambda(_))));
        assert!(matches!(MgpConfig::new(1.0, 1e-10, 0.1), Err(PriorError::Lambda(_))));
        assert!(matches!(
            MgpConfig::new(0.5, -1.0, 0.1),
            Err(PriorError::Variance { .. })
        ));
        assert!(matches!(
            MgpConfig::new(0.5, 0.2, 0.1),
            Err(PriorError::SpikeWiderThanSlab { .. })
        ));
        assert!(MgpConfig::new(0.5, 0.1, 0.1).is_ok());
    }

    #[test]
    fn g_examples() {
        let c = preset();
        let g0 = c.g(0.0);
        assert!(1.0 - g0 < 1e-11 && 1.0 - g0 > 0.0);
        let crossing = (-c.c1() / c.c2()).sqrt();
        assert!((crossing - 7.277e-5).abs() < 1e-8);
        assert!((c.g(crossing) - 0.5).abs() < 1e-9);
        let flat = MgpConfig::new(0.5, 0.3, 0.3).unwrap();
        for t in [-5.0, 0.0, 1e-3, 42.0] {
            assert_eq!(flat.g(t), 0.5);
        }
        // overflow branch
        assert_eq!(c.g(1.0), 0.0);
        assert_eq!(c.g(1e3), 0.0);
    }

    #[test]
    fn grad_examples() {
        let c = preset();
        assert_eq!(c.grad_log_prior(0.0), 0.0);
        let collapse = MgpConfig::new(0.3, 0.1, 0.1).unwrap();
        assert_eq!(collapse.grad_log_prior(1.0), -10.0);
        // slab regime: g is exactly 0 at 0.1, gradient is -θ/σ1²
        assert!((c.grad_log_prior(0.1) - (-1.0)).abs() < 1e-12);
        // spike regime: g ≈ 1 - 3.2e-12, gradient ≈ -θ/σ0²
        assert!((c.grad_log_prior(1e-6) - (-1e4)).abs() < 1e-6);
    }

    #[test]
    fn neg_log_prior_examples() {
        let std_normal = MgpConfig::new(0.5, 1.0, 1.0).unwrap();
        let v = neg_log_prior(&Tensor::scalar(0.0), &std_normal);
        assert!((v - 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
        let c = preset();
        for t in [1e-7, 7e-5, 0.3, 12.0] {
            assert_eq!(c.neg_log_density(t), c.neg_log_density(-t));
        }
    }

    #[test]
    fn threshold_examples() {
        let c = preset();
        let t = c.pa_threshold().unwrap();
        assert!((t - 7.277e-5).abs() < 1e-8);
        let same = MgpConfig::new(0.5, 0.1, 0.1).unwrap();
        assert!(matches!(
            same.pa_threshold(),
            Err(PriorError::ThresholdVariances { .. })
        ));
        // λσ0 ≥ (1-λ)σ1: log argument below 1
        let lopsided = MgpConfig::new(0.999_999, 0.01, 0.0101).unwrap();
        assert!(matches!(lopsided.pa_threshold(), Err(PriorError::ThresholdLog(_))));
    }

    #[test]
    fn curve_grid_parsing() {
        let g = CurveGrid::parse("-1:1:0.5").unwrap();
        assert_eq!((g.lo, g.hi, g.step), (-1.0, 1.0, 0.5));
        assert!(CurveGrid::parse("1:0:0.1").is_err());
        assert!(CurveGrid::parse("0:1").is_err());
        assert!(CurveGrid::parse("0:1:0").is_err());
        let pts = penalty_curve(&preset(), &g);
        assert_eq!(pts.len(), 5);
    }

    #[test]
    fn curve_is_even() {
        let c = preset();
        let grid = CurveGrid::parse("-1:1:0.01").unwrap().with_zoom(101);
        let pts = penalty_curve(&c, &grid);
        assert!(pts.len() > 200);
        for p in &pts {
            let m = penalty_curve(
                &c,
                &CurveGrid {
                    lo: -p.theta,
                    hi: -p.theta,
                    step: 1.0,
                    zoom_points: 0,
                },
            )[0];
            assert!((m.neg_log_prior - p.neg_log_prior).abs() <= 1e-12 * p.neg_log_prior.abs().max(1.0));
            assert!((m.neg_grad + p.neg_grad).abs() <= 1e-12 * p.neg_grad.abs().max(1e-300));
        }
    }

    #[test]
    fn smaller_spike_sharpens_near_zero() {
        let wide = MgpConfig::new(1e-7, 1e-9, 0.1).unwrap();
        let narrow = MgpConfig::new(1e-7, 1e-10, 0.1).unwrap();
        let theta = 1e-6;
        assert!(narrow.grad_log_prior(theta).abs() > wide.grad_log_prior(theta).abs());
    }

    #[test]
    fn slab_regime_matches_l2() {
        let c = preset();
        for t in [-1.0, 1.0] {
            let expected = -t / c.sigma1_sq();
            let got = c.grad_log_prior(t);
            assert!(((got - expected) / expected).abs() < 0.01);
        }
    }

    #[test]
    fn csv_header_and_rows() {
        let csv = curve_to_csv(&penalty_curve(&preset(), &CurveGrid::parse("0:1:0.5").unwrap()));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "theta,neg_log_prior,neg_grad");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1].split(',').count(), 3);
    }

    #[test]
    fn serde_revalidates() {
        let c = preset();
        let json = serde_json::to_string(&c).unwrap();
        let back: MgpConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<MgpConfig>(r#"{"lambda":2,"sigma0_sq":1,"sigma1_sq":1}"#).is_err());
    }

    fn any_cfg() -> impl Strategy<Value = MgpConfig> {
        (1e-9f64..0.5, -12.0f64..-3.5, -3.0f64..1.0)
            .prop_map(|(l, a, b)| MgpConfig::new(l, 10f64.powf(a), 10f64.powf(b)).unwrap())
    }

    proptest! {
        #[test]
        fn g_in_unit_interval_even_monotone(cfg in any_cfg(), t in -10.0f64..10.0, s in 0.0f64..1.0) {
            let g = cfg.g(t);
            prop_assert!((0.0..=1.0).contains(&g));
            prop_assert_eq!(g, cfg.g(-t));
            let inner = t.abs() * s;
            prop_assert!(cfg.g(inner) >= g);
        }

        #[test]
        fn grad_opposes_theta_and_is_bounded(cfg in any_cfg(), t in -1e3f64..1e3) {
            let d = cfg.grad_log_prior(t);
            prop_assert!(d.is_finite());
            if t != 0.0 {
                prop_assert!(d * t < 0.0);
            }
            prop_assert!(d.abs() <= t.abs() / cfg.sigma0_sq() * (1.0 + 1e-12));
        }

        #[test]
        fn collapse_is_exact_l2(l in 1e-6f64..0.999, s in -6.0f64..2.0, t in -100.0f64..100.0) {
            let sigma_sq = 10f64.powf(s);
            let cfg = MgpConfig::new(l, sigma_sq, sigma_sq).unwrap();
            prop_assert_eq!(cfg.grad_log_prior(t), -t / sigma_sq);
        }
    }
}
