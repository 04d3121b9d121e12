//! Step-indexed schedulers: the cubic sparsity ramp, the joint
//! sparsity/prior-warm-up schedule, and the linear prior-annealing
//! schedule. Steps are 1-indexed; step 0 is accepted as the state before
//! the first update.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScheduleError {
    #[error("step {step} outside 0..={total}")]
    StepOutOfRange { step: usize, total: usize },
    #[error("invalid schedule: {0}")]
    Invalid(String),
}

/// Cubic sparsity ramp from 0 at `t_i` to `v_final` at `t_f`, pruning every
/// `delta_t` steps until `t_f` and every step afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicScheduleConfig {
    pub v_final: f64,
    pub t_i: usize,
    pub t_f: usize,
    pub total_steps: usize,
    pub delta_t: usize,
}

impl CubicScheduleConfig {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        if !(0.0..=1.0).contains(&self.v_final) {
            return Err(ScheduleError::Invalid(format!(
                "v_final {} outside [0, 1]",
                self.v_final
            )));
        }
        if !(self.t_i < self.t_f && self.t_f <= self.total_steps) {
            return Err(ScheduleError::Invalid(format!(
                "need t_i < t_f <= T, got t_i={} t_f={} T={}",
                self.t_i, self.t_f, self.total_steps
            )));
        }
        if self.delta_t == 0 {
            return Err(ScheduleError::Invalid("delta_t must be >= 1".into()));
        }
        if self.total_steps >= 1 << 20 {
            return Err(ScheduleError::Invalid(format!(
                "T = {} exceeds the supported 2^20 steps",
                self.total_steps
            )));
        }
        Ok(())
    }

    fn check_step(&self, t: usize) -> Result<(), ScheduleError> {
        if t > self.total_steps {
            return Err(ScheduleError::StepOutOfRange {
                step: t,
                total: self.total_steps,
            });
        }
        Ok(())
    }

    pub fn is_prune_step(&self, t: usize) -> bool {
        t >= 1 && t <= self.total_steps && (t.is_multiple_of(self.delta_t) || t > self.t_f)
    }
}

/// Sparsity level `v(t)` of the cubic ramp.
///
/// The ramp value `v·(1 − ((t_f − t)/(t_f − t_i))³)` is evaluated as the
/// correctly rounded `v·(D³ − (t_f − t)³)/D³` with exact integer cubes, so
/// the result is the nearest double to the exact rational value.
pub fn sparsity_at(t: usize, cfg: &CubicScheduleConfig) -> Result<f64, ScheduleError> {
    cfg.check_step(t)?;
    Ok(if t < cfg.t_i {
        0.0
    } else if t <= cfg.t_f {
        let span = (cfg.t_f - cfg.t_i) as u64;
        let rest = (cfg.t_f - t) as u64;
        let den = span * span * span;
        let num = den - rest * rest * rest;
        mul_ratio_rounded(cfg.v_final, num, den)
    } else {
        cfg.v_final
    })
}

/// Sparsity level together with the prior coefficient `η(t)`, which ramps
/// linearly `t/t_i` during warm-up and is 1 afterwards.
pub fn sparsity_and_eta_at(t: usize, cfg: &CubicScheduleConfig) -> Result<(f64, f64), ScheduleError> {
    let v = sparsity_at(t, cfg)?;
    let eta = if t < cfg.t_i { t as f64 / cfg.t_i as f64 } else { 1.0 };
    Ok((v, eta))
}

/// Every step `t ≤ T` with `t mod Δt = 0` or `t > t_f`.
pub fn prune_steps(cfg: &CubicScheduleConfig) -> Vec<usize> {
    (1..=cfg.total_steps).filter(|&t| cfg.is_prune_step(t)).collect()
}

/// Linear annealing of the spike deviation, warm-up of the prior
/// coefficient and cooling of the temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaScheduleConfig {
    pub sigma0_init_sq: f64,
    pub sigma0_end_sq: f64,
    pub tau0: f64,
    pub t_i: usize,
    pub t_f: usize,
    pub total_steps: usize,
}

impl PaScheduleConfig {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        if !(self.sigma0_end_sq > 0.0 && self.sigma0_init_sq >= self.sigma0_end_sq) || !self.sigma0_init_sq.is_finite()
        {
            return Err(ScheduleError::Invalid(format!(
                "need sigma0_init_sq >= sigma0_end_sq > 0, got {} and {}",
                self.sigma0_init_sq, self.sigma0_end_sq
            )));
        }
        if !(self.tau0 > 0.0 && self.tau0.is_finite()) {
            return Err(ScheduleError::Invalid(format!(
                "tau0 must be positive, got {}",
                self.tau0
            )));
        }
        if !(self.t_i < self.t_f && self.t_f <= self.total_steps) {
            return Err(ScheduleError::Invalid(format!(
                "need t_i < t_f <= T, got t_i={} t_f={} T={}",
                self.t_i, self.t_f, self.total_steps
            )));
        }
        Ok(())
    }
}

/// One row of the annealing schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PaPoint {
    pub sigma0_sq: f64,
    pub eta: f64,
    pub tau: f64,
}

/// `(σ0(t)², η(t), τ(t))`. The deviation `σ0` interpolates linearly from
/// `σ0_init` to `σ0_end` over `[t_i, t_f]` and the returned variance is its
/// square. Outside the ramp and at its two end points the configured
/// variances are returned unchanged.
pub fn pa_schedule_at(t: usize, cfg: &PaScheduleConfig) -> Result<PaPoint, ScheduleError> {
    if t > cfg.total_steps {
        return Err(ScheduleError::StepOutOfRange {
            step: t,
            total: cfg.total_steps,
        });
    }
    let point = if t < cfg.t_i {
        PaPoint {
            sigma0_sq: cfg.sigma0_init_sq,
            eta: t as f64 / cfg.t_i as f64,
            tau: cfg.tau0,
        }
    } else if t <= cfg.t_f {
        let sigma0_sq = if t == cfg.t_i {
            cfg.sigma0_init_sq
        } else if t == cfg.t_f {
            cfg.sigma0_end_sq
        } else {
            let frac = (t - cfg.t_i) as f64 / (cfg.t_f - cfg.t_i) as f64;
            let (s_init, s_end) = (cfg.sigma0_init_sq.sqrt(), cfg.sigma0_end_sq.sqrt());
            let s = s_init + (s_end - s_init) * frac;
            s * s
        };
        PaPoint {
            sigma0_sq,
            eta: 1.0,
            tau: cfg.tau0,
        }
    } else {
        PaPoint {
            sigma0_sq: cfg.sigma0_end_sq,
            eta: 1.0,
            tau: cfg.tau0 / (t - cfg.t_f) as f64,
        }
    };
    Ok(point)
}

/// Nearest double (ties to even) to `v · num / den` for finite `v ≥ 0`,
/// `num ≤ den < 2^62`.
fn mul_ratio_rounded(v: f64, num: u64, den: u64) -> f64 {
    debug_assert!(v >= 0.0 && v.is_finite() && num <= den && den > 0);
    if v == 0.0 || num == 0 {
        return 0.0;
    }
    if num == den {
        return v;
    }
    let bits = v.to_bits();
    let raw_exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    let (mant, exp) = if raw_exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), raw_exp - 1075)
    };
    // v·num/den = (mant·num/den)·2^exp
    let n = mant as u128 * num as u128;
    let d = den as u128;
    let bits_of = |x: u128| 128 - x.leading_zeros() as i32;
    let shift = (55 + bits_of(d) - bits_of(n)).max(0);
    let scaled = n << shift;
    let q = scaled / d;
    let sticky = !scaled.is_multiple_of(d);
    let extra = bits_of(q) - 53;
    let mut m = (q >> extra) as u64;
    let dropped = q & ((1u128 << extra) - 1);
    let half = 1u128 << (extra - 1);
    if dropped > half || (dropped == half && (sticky || m & 1 == 1)) {
        m += 1;
    }
    let mut e = exp - shift + extra;
    if m == 1u64 << 53 {
        m >>= 1;
        e += 1;
    }
    // m·2^e with m in [2^52, 2^53): exact when the result is a normal double
    let unbiased = e + 52;
    if !(-1022..=1023).contains(&unbiased) {
        return v * (num as f64 / den as f64);
    }
    f64::from_bits(((unbiased + 1023) as u64) << 52 | (m & ((1u64 << 52) - 1)))
}
