use crate::error::{Error, Result};

/// Floor applied to the reference distribution inside [`step_kl`].
pub const KL_FLOOR: f64 = 1e-12;
const NORM_TOL: f64 = 1e-4;

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::NumericDomain("distribution has a negative or non-finite entry".into()));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > NORM_TOL {
        return Err(Error::NotNormalized { sum });
    }
    Ok(())
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    check_distribution(p)?;
    Ok(p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum())
}

/// `KL(p_next ‖ p_prev)` in nats, `p_prev` floored at [`KL_FLOOR`].
pub fn step_kl(p_next: &[f64], p_prev: &[f64]) -> Result<f64> {
    if p_next.len() != p_prev.len() {
        return Err(Error::Shape(format!(
            "distributions of length {} and {}",
            p_next.len(),
            p_prev.len()
        )));
    }
    check_distribution(p_next)?;
    check_distribution(p_prev)?;
    let kl: f64 = p_next
        .iter()
        .zip(p_prev)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &q)| p * (p / q.max(KL_FLOOR)).ln())
        .sum();
    Ok(kl.max(0.0))
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
