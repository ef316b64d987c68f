use serde::{Deserialize, Serialize};

use crate::error::{MsaeError, Result};
use crate::model::scalar::Scalar;

/// Which grid positions enter the reconstruction loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossOn {
    #[default]
    Masked,
    All,
}

/// Returns the loss and its gradient with respect to `pred`.
pub(crate) fn mse_with_grad<T: Scalar>(
    pred: &[T],
    target: &[T],
    hidden: &[bool],
    loss_on: LossOn,
) -> Result<(T, Vec<T>)> {
    assert_eq!(pred.len(), target.len());
    assert_eq!(pred.len(), 2 * hidden.len());
    let selected = |i: usize| loss_on == LossOn::All || hidden[i / 2];
    let count = (0..pred.len()).filter(|&i| selected(i)).count();
    if count == 0 {
        return Err(MsaeError::EmptyLossSupport);
    }
    let inv = T::one() / T::of(count as f64);
    let two = T::of(2.0);
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); pred.len()];
    for i in (0..pred.len()).filter(|&i| selected(i)) {
        let e = pred[i] - target[i];
        loss += e * e;
        grad[i] = two * e * inv;
    }
    Ok((loss * inv, grad))
}

/// Mean squared coordinate error over hidden positions (or over the whole
/// grid with [`LossOn::All`]). `indicator` is frame-major and true at hidden
/// positions.
pub fn masked_mse<T: Scalar>(pred: &[[T; 2]], target: &[[T; 2]], indicator: &[bool], loss_on: LossOn) -> Result<T> {
    if pred.len() != target.len() || pred.len() != indicator.len() {
        return Err(MsaeError::InvalidSequence(format!(
            "grid sizes differ: pred {}, target {}, indicator {}",
            pred.len(),
            target.len(),
            indicator.len()
        )));
    }
    let flat = |g: &[[T; 2]]| -> Vec<T> { g.iter().flatten().copied().collect() };
    mse_with_grad(&flat(pred), &flat(target), indicator, loss_on).map(|(l, _)| l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_cases() {
        let t = vec![[1.0, 2.0], [3.0, -4.0], [0.5, 0.0]];
        assert_eq!(masked_mse(&t, &t, &[true, false, true], LossOn::Masked).unwrap(), 0.0);
        let shifted: Vec<[f64; 2]> = t.iter().map(|p| [p[0] + 1.0, p[1] + 1.0]).collect();
        assert_eq!(masked_mse(&shifted, &t, &[true; 3], LossOn::Masked).unwrap(), 1.0);
        assert!(matches!(
            masked_mse(&shifted, &t, &[false; 3], LossOn::Masked),
            Err(MsaeError::EmptyLossSupport)
        ));
        assert_eq!(masked_mse(&shifted, &t, &[false; 3], LossOn::All).unwrap(), 1.0);
    }

    #[test]
    fn loss_on_serializes_lowercase() {
        assert_eq!(serde_json::to_string(&LossOn::All).unwrap(), "\"all\"");
        assert_eq!(serde_json::from_str::<LossOn>("\"masked\"").unwrap(), LossOn::Masked);
    }
}
