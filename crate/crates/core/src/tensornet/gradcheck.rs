use super::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Largest relative disagreement between reverse-mode and central-difference
/// gradients of the scalar built by `f` from leaves holding `params`.
///
/// Relative error per element is `|a - n| / max(1e-6, |a| + |n|)`. The floor
/// sits above the round-off of central differences (about `1e-16 |L| / h`),
/// which would otherwise dominate entries of order `1e-9`.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

pub fn grad_check<F>(f: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if !(h > 0.0) {
        return Err(Error::Invalid(format!("finite-difference step {h}")));
    }
    let mut g = Graph::new();
    let leaves: Vec<NodeId> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &leaves)?;
    if !g.value(loss).is_finite() {
        return Err(Error::NonFinite("grad_check loss".into()));
    }
    let grads = g.backward(loss)?;

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let leaves: Vec<NodeId> = ps.iter().map(|p| g.input(p.clone())).collect();
        let l = f(&mut g, &leaves)?;
        let v = g.value(l).item();
        if !v.is_finite() {
            return Err(Error::NonFinite("grad_check loss".into()));
        }
        Ok(v)
    };

    let mut worst: f64 = 0.0;
    let mut work = params.to_vec();
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get(*leaf).cloned().unwrap_or_else(|| Tensor::zeros(params[i].shape()));
        for j in 0..params[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let fp = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let fm = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.data()[j];
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(GRAD_CHECK_FLOOR);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
