use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Real, Tensor};

/// Label-smoothed cross-entropy averaged over non-pad rows.
///
/// Row targets are `(1 - s) * onehot + s / V`; rows whose target equals
/// `pad_id` are skipped.
pub fn smoothed_ce<T: Real>(
    g: &mut Graph<T>,
    logits: Var,
    targets: &[usize],
    smoothing: f64,
    pad_id: Option<usize>,
) -> Result<Var> {
    let (rows, classes) = match g.shape(logits) {
        &[r, c] => (r, c),
        s => return Err(Error::invalid("smoothed_ce", format!("expected a matrix, got {s:?}"))),
    };
    if targets.len() != rows {
        return Err(Error::invalid("smoothed_ce", format!("{} targets for {rows} rows", targets.len())));
    }
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::invalid("smoothed_ce", format!("smoothing {smoothing} outside [0, 1)")));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= classes) {
        return Err(Error::invalid("smoothed_ce", format!("target {t} outside {classes} classes")));
    }
    let live = targets.iter().filter(|&&t| Some(t) != pad_id).count();
    if live == 0 {
        return Err(Error::invalid("smoothed_ce", "all targets are padding"));
    }
    let norm = -1.0 / live as f64;
    let off = smoothing / classes as f64;
    let mut weights = vec![T::zero(); rows * classes];
    for (r, &t) in targets.iter().enumerate() {
        if Some(t) == pad_id {
            continue;
        }
        for c in 0..classes {
            let q = if c == t { 1.0 - smoothing + off } else { off };
            weights[r * classes + c] = T::of(q * norm);
        }
    }
    let logp = g.log_softmax(logits)?;
    let w = g.constant(Tensor::new(vec![rows, classes], weights)?);
    let prod = g.mul(logp, w)?;
    Ok(g.sum(prod))
}
