use super::dataset::Sample;
use super::report::Csv;
use crate::blocks::Ctx;
use crate::error::Result;
use crate::model::HiTSRModel;
use crate::tensor::{Scalar, Tape};

/// Gate values and attention row-sum ranges of one forward pass.
#[derive(Clone, Debug)]
pub struct AttentionAudit {
    /// `block, head, sigma`
    pub gates: Csv,
    /// `block, layer, windows, min_row_sum, max_row_sum`, one row per
    /// attention layer in evaluation order.
    pub row_sums: Csv,
}

impl AttentionAudit {
    /// Largest deviation of any attention row sum from one.
    pub fn max_row_error(&self) -> f64 {
        let cols = |name| self.row_sums.column(name).unwrap_or_default();
        cols("min_row_sum")
            .into_iter()
            .chain(cols("max_row_sum"))
            .filter_map(|v| v.parse::<f64>().ok())
            .map(|v| (v - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Runs `sample` through the model with auditing enabled.
pub fn audit_attention<E: Scalar>(model: &HiTSRModel<E>, sample: &Sample) -> Result<AttentionAudit> {
    let mut gates = Csv::new(&["block", "head", "sigma"]);
    for g in model.gate_readings() {
        for (h, s) in g.sigma.iter().enumerate() {
            gates.push(vec![g.block.to_string(), h.to_string(), format!("{s:.9}")])?;
        }
    }
    let tape = Tape::no_grad();
    tape.set_audit(true);
    let ctx = Ctx::bind(&tape, &model.params, false);
    let lr = tape.constant(sample.lr()?.cast());
    let r = model.uses_reference().then(|| tape.constant(sample.reference.cast()));
    model.forward(&ctx, &lr, r.as_ref())?;
    let mut row_sums = Csv::new(&["block", "layer", "windows", "min_row_sum", "max_row_sum"]);
    let mut layer_in_block = (usize::MAX, 0);
    for event in tape.events() {
        let Some(rest) = event.strip_prefix("rowsum:") else { continue };
        let f: Vec<&str> = rest.split(':').collect();
        let block: usize = f[0].parse().unwrap_or_default();
        layer_in_block = if layer_in_block.0 == block { (block, layer_in_block.1 + 1) } else { (block, 0) };
        let row = vec![f[0].into(), layer_in_block.1.to_string(), f[1].into(), f[2].into(), f[3].into()];
        row_sums.push(row)?;
    }
    Ok(AttentionAudit { gates, row_sums })
}
