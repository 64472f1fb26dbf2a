use crate::error::{Error, Result};
use crate::model::Gaussian;

/// Closed-form KL(q || p) between diagonal Gaussians.
pub fn kl_diag_gauss(q: &Gaussian, p: &Gaussian) -> Result<f64> {
    let n = q.mu.len();
    if q.sigma.len() != n || p.mu.len() != n || p.sigma.len() != n {
        return Err(Error::Shape("KL operands differ in dimension".into()));
    }
    let mut kl = 0.0;
    for j in 0..n {
        let (sq, sp) = (q.sigma[j], p.sigma[j]);
        if !(sq > 0.0 && sp > 0.0) {
            return Err(Error::Domain(format!("non-positive sigma at dimension {j}")));
        }
        let d = q.mu[j] - p.mu[j];
        let r = sq / sp;
        kl += 0.5 * (r * r + d * d / (sp * sp) - 1.0) - r.ln();
    }
    Ok(kl.max(0.0))
}

/// Concatenates two diagonal Gaussians into one over the joint vector.
pub fn concat_gauss(a: &Gaussian, b: &Gaussian) -> Gaussian {
    Gaussian {
        mu: a.mu.iter().chain(&b.mu).copied().collect(),
        sigma: a.sigma.iter().chain(&b.sigma).copied().collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(mu: f64, sigma: f64) -> Gaussian {
        Gaussian {
            mu: vec![mu],
            sigma: vec![sigma],
        }
    }

    #[test]
    fn closed_form_cases() {
        assert_eq!(kl_diag_gauss(&g(0.3, 1.7), &g(0.3, 1.7)).unwrap(), 0.0);
        assert!((kl_diag_gauss(&g(1.0, 1.0), &g(0.0, 1.0)).unwrap() - 0.5).abs() < 1e-15);
        let want = 0.5 * (4.0 - 1.0 - 4f64.ln());
        assert!((kl_diag_gauss(&g(0.0, 2.0), &g(0.0, 1.0)).unwrap() - want).abs() < 1e-12);
        assert!((want - 0.80685).abs() < 1e-5);
    }

    #[test]
    fn rejects_non_positive_sigma() {
        assert!(matches!(kl_diag_gauss(&g(0.0, 0.0), &g(0.0, 1.0)), Err(Error::Domain(_))));
        assert!(matches!(kl_diag_gauss(&g(0.0, 1.0), &g(0.0, -1.0)), Err(Error::Domain(_))));
    }
}
