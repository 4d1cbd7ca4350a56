//! Losses return the scalar value together with its gradient with respect to
//! the logits.

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Softmax over the entries where `mask` is true; masked entries are exactly
/// zero.
pub fn masked_softmax<T: Real>(logits: &[T], mask: Option<&[bool]>) -> Result<Vec<T>> {
    let allowed = |i: usize| mask.is_none_or(|m| m[i]);
    if let Some(m) = mask {
        if m.len() != logits.len() {
            return Err(Error::Shape(format!("{} logits, {} mask entries", logits.len(), m.len())));
        }
    }
    let max = (0..logits.len())
        .filter(|&i| allowed(i))
        .map(|i| logits[i])
        .fold(None, |acc: Option<T>, v| Some(acc.map_or(v, |a| a.max(v))))
        .ok_or(Error::AllMasked)?;
    let mut out: Vec<T> = (0..logits.len())
        .map(|i| if allowed(i) { (logits[i] - max).exp() } else { T::zero() })
        .collect();
    let z: T = out.iter().copied().sum();
    for v in &mut out {
        *v /= z;
    }
    Ok(out)
}

/// Log-probabilities of the masked softmax; masked entries are `-inf`.
pub fn masked_log_softmax<T: Real>(logits: &[T], mask: &[bool]) -> Result<Vec<T>> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .fold(None, |acc: Option<T>, v| Some(acc.map_or(v, |a| a.max(v))))
        .ok_or(Error::AllMasked)?;
    let lse = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| (v - max).exp())
        .sum::<T>()
        .ln()
        + max;
    Ok(logits
        .iter()
        .zip(mask)
        .map(|(&v, &m)| if m { v - lse } else { T::neg_infinity() })
        .collect())
}

/// Entropy of a distribution, skipping zero-probability entries.
pub fn entropy<T: Real>(probs: &[T]) -> T {
    probs.iter().filter(|&&p| p > T::zero()).map(|&p| -p * p.ln()).sum()
}

/// Gradient of [`entropy`] of `masked_softmax(logits)` with respect to the
/// logits: `dH/dz_i = -p_i (log p_i + H)` on unmasked entries.
pub fn entropy_grad<T: Real>(probs: &[T]) -> Vec<T> {
    let h = entropy(probs);
    probs
        .iter()
        .map(|&p| if p > T::zero() { -p * (p.ln() + h) } else { T::zero() })
        .collect()
}

/// `log(1 + exp(x))` without overflow.
fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Mean binary cross-entropy over the entries where `mask` is true.
///
/// Written as `softplus(z) - y z`, which equals
/// `-[y log s(z) + (1 - y) log(1 - s(z))]` and stays finite for any logit.
/// An all-false mask yields zero loss and zero gradient.
pub fn bce_with_logits<T: Real>(logits: &Tensor<T>, targets: &Tensor<T>, mask: &[bool]) -> Result<(T, Tensor<T>)> {
    if logits.shape() != targets.shape() || mask.len() != logits.len() {
        return Err(Error::Shape(format!(
            "bce: logits {:?}, targets {:?}, mask {}",
            logits.shape(),
            targets.shape(),
            mask.len()
        )));
    }
    let count = mask.iter().filter(|&&m| m).count();
    let mut grad = Tensor::zeros(logits.shape());
    if count == 0 {
        return Ok((T::zero(), grad));
    }
    let inv = T::one() / T::from_f64(count as f64);
    let mut total = T::zero();
    for (i, ((&z, &y), &m)) in logits.data().iter().zip(targets.data()).zip(mask).enumerate() {
        if m {
            total += softplus(z) - y * z;
            grad.data_mut()[i] = (sigmoid(z) - y) * inv;
        }
    }
    Ok((total * inv, grad))
}

/// Mean categorical cross-entropy of `logits` (`[n, k]`) against class
/// indices, over rows whose target is `Some`. Rows may carry a validity
/// mask restricting the softmax support.
pub fn cross_entropy<T: Real>(
    logits: &Tensor<T>,
    targets: &[Option<usize>],
    support: Option<&[bool]>,
) -> Result<(T, Tensor<T>)> {
    let (n, k) = logits.dims2();
    if targets.len() != n || support.is_some_and(|s| s.len() != n * k) {
        return Err(Error::Shape(format!("cross entropy: {n} rows, {} targets", targets.len())));
    }
    let count = targets.iter().filter(|t| t.is_some()).count();
    let mut grad = Tensor::zeros(&[n, k]);
    if count == 0 {
        return Ok((T::zero(), grad));
    }
    let inv = T::one() / T::from_f64(count as f64);
    let mut total = T::zero();
    for (i, target) in targets.iter().enumerate() {
        let Some(t) = *target else { continue };
        if t >= k {
            return Err(Error::Shape(format!("class {t} out of range for {k} logits")));
        }
        let mask = support.map(|s| &s[i * k..(i + 1) * k]);
        if mask.is_some_and(|m| !m[t]) {
            return Err(Error::Shape(format!("target class {t} is masked out on row {i}")));
        }
        let p = masked_softmax(logits.row(i), mask)?;
        total -= p[t].max(T::min_positive_value()).ln();
        let g = grad.row_mut(i);
        for j in 0..k {
            g[j] = (p[j] - if j == t { T::one() } else { T::zero() }) * inv;
        }
    }
    Ok((total * inv, grad))
}
