//! Projection of deep codes and dictionaries back into image space.

use crate::error::Result;
use crate::model::NetworkConfig;
use crate::ops::{predict, predict_covered};
use ndarray::{Array3, Array4, Axis};

/// A deep layer's atoms expressed in the input (visual) space, where they can
/// be read as receptive fields.
#[derive(Debug, Clone)]
pub struct EffectiveDictionary {
    /// `[features, input_channels, kh, kw]`
    pub atoms: Array4<f32>,
}

impl EffectiveDictionary {
    pub fn num_features(&self) -> usize {
        self.atoms.dim().0
    }

    pub fn kernel_hw(&self) -> (usize, usize) {
        let d = self.atoms.dim();
        (d.2, d.3)
    }
}

/// Cascades one feature's unit activation down through the dictionaries of
/// layers `layer..=1`, yielding its image-space footprint.
fn unit_footprint(net: &NetworkConfig, layer: usize, feature: usize) -> Result<Array3<f32>> {
    let mut code = Array3::zeros((net.layers[layer].dictionary.num_features(), 1, 1));
    code[(feature, 0, 0)] = 1.0;
    let mut field = code;
    for i in (0..=layer).rev() {
        field = predict_covered(&net.layers[i].dictionary, field.view())?;
    }
    Ok(field)
}

/// Back-projects layer `layer`'s dictionary (0-based) into the input space.
///
/// Layer 0 comes back unchanged; deeper layers compose through every
/// dictionary below, so their spatial extent grows with the lower kernels
/// and strides.
pub fn effective_dictionary(net: &NetworkConfig, layer: usize) -> Result<EffectiveDictionary> {
    let f = net.layers[layer].dictionary.num_features();
    let first = unit_footprint(net, layer, 0)?;
    let (c, kh, kw) = first.dim();
    let mut atoms = Array4::zeros((f, c, kh, kw));
    atoms.index_axis_mut(Axis(0), 0).assign(&first);
    for feature in 1..f {
        let fp = unit_footprint(net, layer, feature)?;
        atoms.index_axis_mut(Axis(0), feature).assign(&fp);
    }
    Ok(EffectiveDictionary { atoms })
}

/// Back-projects an activity map from layer `layer` (0-based) into the input
/// space by cascading predictions down the stack, each step targeting the
/// spatial extent the layer below actually has for `input_dim`.
pub fn back_project(
    net: &NetworkConfig,
    gamma: &Array3<f32>,
    layer: usize,
    input_dim: (usize, usize, usize),
) -> Result<Array3<f32>> {
    let dims = net.layer_dims(input_dim)?;
    let mut field = gamma.clone();
    for i in (0..=layer).rev() {
        let (_, h, w) = dims[i];
        field = predict(&net.layers[i].dictionary, field.view(), (h, w))?;
    }
    Ok(field)
}
