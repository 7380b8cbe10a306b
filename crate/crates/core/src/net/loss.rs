//! Joint objective: cross entropy of the class prediction on the selected
//! patch plus λ times the summed per-patch binary cross entropy of the scorer.

use dyngest_tensor::{Element, Graph, Var};

use super::{Forward, PatchLabels};
use crate::error::{config_err, Result};

/// Batch-mean loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub classification_term: f64,
    pub selection_term: f64,
    pub lambda: f64,
}

/// Records the loss on the graph and returns its scalar variable with the
/// term values. The selection term is left out of the graph entirely when
/// `lambda == 0` (and for the static pipeline), so scorer gradients stay
/// exactly zero rather than signed zeros.
pub fn compute_loss<T: Element>(
    g: &mut Graph<T>,
    fwd: &Forward,
    y_clip: &[usize],
    y_patches: &[PatchLabels],
    lambda: f64,
) -> Result<(Var, LossBreakdown)> {
    let cls = g.cross_entropy(fwd.logits, y_clip)?;
    let classification_term = g.value(cls).data()[0].to_f64_lossy();
    let Some(sel_logits) = fwd.selector_logits else {
        let b = LossBreakdown { total: classification_term, classification_term, selection_term: 0.0, lambda };
        return Ok((cls, b));
    };
    let sel = selection_loss(g, sel_logits, y_patches)?;
    let selection_term = g.value(sel).data()[0].to_f64_lossy();
    let total = if lambda == 0.0 { cls } else { g.add_scaled(cls, sel, T::from_f64_lossy(lambda))? };
    let b = LossBreakdown {
        total: g.value(total).data()[0].to_f64_lossy(),
        classification_term,
        selection_term,
        lambda,
    };
    Ok((total, b))
}

/// Σ over patches of BCE(score, label), averaged over the batch.
pub fn selection_loss<T: Element>(g: &mut Graph<T>, sel_logits: Var, y_patches: &[PatchLabels]) -> Result<Var> {
    let shape = g.shape(sel_logits).to_vec();
    if y_patches.len() != shape[0] || y_patches.iter().any(|l| l.labels.len() != shape[1]) {
        return Err(config_err(format!(
            "patch labels ({} samples) do not match selector logits {shape:?}",
            y_patches.len()
        )));
    }
    if let Some(bad) = y_patches.iter().flat_map(|l| &l.labels).find(|&&v| v > 1) {
        return Err(config_err(format!("patch label {bad} is not 0 or 1")));
    }
    let flat: Vec<T> = y_patches.iter().flat_map(|l| l.labels.iter().map(|&v| T::from_f64_lossy(f64::from(v)))).collect();
    Ok(g.bce_with_logits(sel_logits, &flat)?)
}
