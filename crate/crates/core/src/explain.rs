//! Grad-CAM attribution on the last convolutional feature map.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MeshSample, Model};
use crate::nn::Tape;

/// Per-vertex attribution scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub values: Vec<f64>,
    pub layer: usize,
    /// True when the raw map was identically zero.
    pub all_zero: bool,
}

impl Heatmap {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Fraction of the heat carried by the top 10% of vertices that falls on `mask`.
    pub fn top_decile_mass_in(&self, mask: &[bool]) -> f64 {
        let mut order: Vec<usize> = (0..self.values.len()).collect();
        order.sort_by(|&a, &b| self.values[b].total_cmp(&self.values[a]).then(a.cmp(&b)));
        let k = self.values.len().div_ceil(10);
        let top = &order[..k.max(1).min(order.len())];
        let total: f64 = top.iter().map(|&i| self.values[i]).sum();
        if total <= 0.0 {
            return 0.0;
        }
        top.iter().filter(|&&i| mask[i]).map(|&i| self.values[i]).sum::<f64>() / total
    }
}

/// Grad-CAM of the pre-sigmoid logit with respect to the output of the last
/// convolution: `α_c = mean_i ∂logit/∂A_ic`, `m_i = relu(Σ_c α_c A_ic)`,
/// divided by its maximum.
pub fn gradcam(model: &Model, sample: &MeshSample) -> Result<Heatmap> {
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, sample)?;
    let features = out.conv_features.ok_or(Error::NoConvFeatureMap)?;
    let grads = tape.backward(out.logit)?;
    let a = tape.value(features);
    let (n, d) = (a.rows(), a.cols());
    let mut alpha = alloc::vec![0.0; d];
    if let Some(g) = grads.wrt(features) {
        for i in 0..n {
            for (al, gv) in alpha.iter_mut().zip(g.row(i)) {
                *al += gv;
            }
        }
        alpha.iter_mut().for_each(|x| *x /= n as f64);
    }
    let raw: Vec<f64> = (0..n)
        .map(|i| a.row(i).iter().zip(&alpha).map(|(x, w)| x * w).sum::<f64>().max(0.0))
        .collect();
    let max = raw.iter().copied().fold(0.0f64, f64::max);
    let layer = model.config().n_tetcnn_layers.saturating_sub(1);
    if !(max > 0.0) {
        return Ok(Heatmap {
            values: alloc::vec![0.0; n],
            layer,
            all_zero: true,
        });
    }
    Ok(Heatmap {
        values: raw.iter().map(|v| v / max).collect(),
        layer,
        all_zero: false,
    })
}
