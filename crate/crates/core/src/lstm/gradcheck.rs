//! Central finite-difference check of the analytic gradients.

use serde::Serialize;

use super::network::{forward, gradients, ForwardMode, SeqExample};
use super::params::LstmParams;
use crate::error::Result;

/// Location of one scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamLocation {
    pub block: &'static str,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// The parameter with the largest relative error, if any were checked.
    pub worst: Option<ParamLocation>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "max relative error {:.3e} over {} parameters", self.max_rel_error, self.checked)?;
        if let Some(w) = self.worst {
            write!(
                f,
                " (worst {}[{}]: analytic {:.6e}, numeric {:.6e})",
                w.block, w.index, self.analytic, self.numeric
            )?;
        }
        Ok(())
    }
}

/// Compares every analytic partial derivative of the squared residual on
/// `example` with `(L(θ+eps) − L(θ−eps)) / 2eps`. Dropout is off.
pub fn gradient_check(params: &LstmParams, example: &SeqExample, eps: f64) -> Result<GradCheckReport> {
    let analytic = gradients(params, [example], &mut ForwardMode::Eval)?.grads;
    let loss_at = |p: &LstmParams| -> Result<f64> {
        let s = forward(p, &example.ids, &mut ForwardMode::Eval)?;
        Ok((example.target - s).powi(2))
    };

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let analytic_blocks = analytic.blocks();
    for (b, (name, grads)) in analytic_blocks.iter().enumerate() {
        for (index, &ga) in grads.iter().enumerate() {
            let original = probe.blocks()[b].1[index];
            probe.blocks_mut()[b].1[index] = original + eps;
            let plus = loss_at(&probe)?;
            probe.blocks_mut()[b].1[index] = original - eps;
            let minus = loss_at(&probe)?;
            probe.blocks_mut()[b].1[index] = original;

            let gn = (plus - minus) / (2.0 * eps);
            let rel = (ga - gn).abs() / ga.abs().max(gn.abs()).max(1e-12);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some(ParamLocation { block: name, index });
                report.analytic = ga;
                report.numeric = gn;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::super::params::Dims;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const SMALL: Dims = Dims {
        vocab: 10,
        d_w: 8,
        d_h: 8,
        d_s: 4,
    };

    #[test]
    fn random_params_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p = LstmParams::zeros(SMALL);
        p.fill_uniform(0.5, &mut rng);
        let ids: Vec<u32> = (0..5).map(|_| rng.random_range(0..10)).collect();
        let r = gradient_check(&p, &SeqExample::new(ids, 0.8), 1e-5).unwrap();
        assert!(r.passed(1e-4), "{r}");
        assert_eq!(r.checked, p.num_params());
    }

    #[test]
    fn zero_params_zero_target() {
        let p = LstmParams::zeros(SMALL);
        let r = gradient_check(&p, &SeqExample::new(vec![1, 2, 3], 0.0), 1e-5).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert_eq!(r.analytic, 0.0);
        assert_eq!(r.numeric, 0.0);
    }

    #[test]
    fn a_broken_gradient_is_located() {
        // checking against a perturbed network stands in for a buggy backward
        // pass: the report must name a parameter and exceed the tolerance
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut p = LstmParams::zeros(SMALL);
        p.fill_uniform(0.5, &mut rng);
        let ex = SeqExample::new(vec![1, 2], 0.3);
        let good = gradient_check(&p, &ex, 1e-5).unwrap();
        let bad = gradient_check(&p, &ex, 0.5).unwrap();
        assert!(good.passed(1e-4));
        assert!(bad.max_rel_error >= 1e-3, "{bad}");
        let worst = bad.worst.unwrap();
        assert!(super::super::params::BLOCK_NAMES.contains(&worst.block));
        assert!(bad.to_string().contains(worst.block));
    }
}
