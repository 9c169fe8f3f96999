use crate::error::{Error, Result};
use crate::nn::{ops, Tensor, Var};
use crate::patches::PatchStack;
use crate::scalar::Scalar;

fn check(pred: &PatchStack<impl Scalar>, target: &PatchStack<impl Scalar>) -> Result<()> {
    if pred.len() != target.len() || pred.patch_shape() != target.patch_shape() {
        return Err(Error::shape(format!(
            "loss: {} x {:?} vs {} x {:?}",
            pred.len(),
            pred.patch_shape(),
            target.len(),
            target.patch_shape()
        )));
    }
    Ok(())
}

/// Mean absolute error over every slot and pixel of a stack.
pub fn stack_l1_loss<T: Scalar>(pred: &PatchStack<T>, target: &PatchStack<T>) -> Result<f64> {
    check(pred, target)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (p, t) in pred.patches().iter().zip(target.patches()) {
        total += p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a - b).abs().as_f64())
            .sum::<f64>();
        count += p.len();
    }
    Ok(total / count as f64)
}

/// L1 loss of each slot separately; their mean is [`stack_l1_loss`].
pub fn per_slot_l1<T: Scalar>(pred: &PatchStack<T>, target: &PatchStack<T>) -> Result<Vec<f64>> {
    check(pred, target)?;
    Ok(pred
        .patches()
        .iter()
        .zip(target.patches())
        .map(|(p, t)| {
            p.data()
                .iter()
                .zip(t.data())
                .map(|(&a, &b)| (a - b).abs().as_f64())
                .sum::<f64>()
                / p.len() as f64
        })
        .collect())
}

/// Differentiable stack loss on packed `[B * N, C, H, W]` predictions.
pub fn stack_l1<'g, T: Scalar>(pred: Var<'g, T>, target: &Tensor<T>) -> Result<Var<'g, T>> {
    ops::l1_loss(pred, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Image;

    fn stack(vals: &[f64]) -> PatchStack<f64> {
        PatchStack::new(vals.iter().map(|&v| Image::filled(4, 5, 3, v).unwrap()).collect()).unwrap()
    }

    #[test]
    fn closed_forms() {
        let t = stack(&[0.1, 0.2, 0.3]);
        assert_eq!(stack_l1_loss(&t, &t).unwrap(), 0.0);
        let p = stack(&[0.6, 0.7, 0.8]);
        assert!((stack_l1_loss(&p, &t).unwrap() - 0.5).abs() < 1e-12);
        assert!(stack_l1_loss(&p, &stack(&[0.1])).is_err());
    }

    #[test]
    fn mean_of_slots() {
        let t = stack(&[0.1, 0.2, 0.3, 0.4]);
        let p = stack(&[0.0, 0.9, 0.35, 0.4]);
        let slots = per_slot_l1(&p, &t).unwrap();
        let mean = slots.iter().sum::<f64>() / slots.len() as f64;
        assert!((mean - stack_l1_loss(&p, &t).unwrap()).abs() <= 1e-12);
    }
}
