use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Mean binary cross-entropy on logits; labels must be exactly 0 or 1.
pub fn bce_with_logits<T: Scalar>(g: &mut Graph<T>, logits: Var, labels: &[T]) -> Result<Var> {
    g.bce_with_logits(logits, labels)
}

/// Mean squared error over the masked time steps only, across all channels.
///
/// `pred` and `target` are `T × C`; `mask[t]` marks masked positions.
pub fn mse_masked<T: Scalar>(
    g: &mut Graph<T>,
    pred: Var,
    target: &Tensor<T>,
    mask: &[bool],
) -> Result<Var> {
    let (t, c) = g.value(pred).dims2()?;
    if target.shape() != [t, c] || mask.len() != t {
        return Err(Error::dim(
            "mse_masked",
            format!(
                "pred {:?}, target {:?}, mask of {}",
                g.shape(pred),
                target.shape(),
                mask.len()
            ),
        ));
    }
    let masked = mask.iter().filter(|&&m| m).count();
    if masked == 0 {
        return Err(Error::Contract("mse_masked needs at least one masked position".into()));
    }
    let weights: Vec<T> = mask
        .iter()
        .flat_map(|&m| std::iter::repeat_n(if m { T::one() } else { T::zero() }, c))
        .collect();
    let tv = g.constant(target.clone());
    let wv = g.constant(Tensor::new([t, c], weights)?);
    let diff = g.sub(pred, tv)?;
    let sq = g.mul(diff, diff)?;
    let sq = g.mul(sq, wv)?;
    let total = g.sum(sq, None)?;
    Ok(g.scale(total, T::from_f64(1.0 / (masked * c) as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_prediction_is_zero() {
        let mut g = Graph::<f64>::new();
        let target = Tensor::from_f64([3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let p = g.variable(target.clone());
        let l = mse_masked(&mut g, p, &target, &[true, false, true]).unwrap();
        assert_eq!(g.value(l).data(), &[0.0]);
    }

    #[test]
    fn single_masked_position() {
        let mut g = Graph::<f64>::new();
        let target = Tensor::from_f64([2, 1], &[0.0, 0.0]).unwrap();
        let p = g.variable(Tensor::from_f64([2, 1], &[2.0, 9.0]).unwrap());
        let l = mse_masked(&mut g, p, &target, &[true, false]).unwrap();
        assert_eq!(g.value(l).data(), &[4.0]);
        g.backward(l).unwrap();
        // unmasked positions get no gradient
        assert_eq!(g.grad(p).unwrap(), &[4.0, 0.0]);
    }

    #[test]
    fn empty_mask_is_contract_error() {
        let mut g = Graph::<f64>::new();
        let target = Tensor::zeros([2, 1]);
        let p = g.variable(Tensor::zeros([2, 1]));
        assert!(matches!(
            mse_masked(&mut g, p, &target, &[false, false]),
            Err(Error::Contract(_))
        ));
    }
}
