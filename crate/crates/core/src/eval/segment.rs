use rayon::prelude::*;

use crate::data::{LabelMap, VolumeSet};
use crate::error::{param_err, shape_err, Result};
use crate::layers::{softmax, Mode};
use crate::models::{NexusModel, CLASSES, MODALITIES};
use crate::rng::Rng;

/// Pixels classified per forward pass.
pub const SEGMENT_BATCH: usize = 256;

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(probs: &[f64]) -> u8 {
    let mut best = 0;
    for (k, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = k;
        }
    }
    best as u8
}

/// Labels every brain pixel (nonzero in some modality) of a preprocessed
/// volume; other pixels stay 0. Slices run in parallel on the current
/// rayon pool, each with its own copy of the model.
pub fn segment_volume(model: &NexusModel, vol: &VolumeSet) -> Result<LabelMap> {
    Ok(segment_volume_heads(&[model], vol)?.remove(0))
}

/// One label map per model for models that differ only in their output
/// layer (see [`NexusModel::same_body`]); features are computed once.
pub fn segment_volume_heads(models: &[&NexusModel], vol: &VolumeSet) -> Result<Vec<LabelMap>> {
    let Some(first) = models.first() else {
        return Err(param_err!("no models to segment with"));
    };
    if models.iter().any(|m| !first.same_body(m)) {
        return Err(param_err!("models passed together must share everything but the output layer"));
    }
    if vol.modalities.len() != MODALITIES {
        return Err(shape_err!("segmentation needs {MODALITIES} modalities, got {}", vol.modalities.len()));
    }
    let dims = vol.dims()?;
    let [d, h, w] = dims;
    let slices = (0..d)
        .into_par_iter()
        .map_init(
            || models.iter().map(|m| (*m).clone()).collect::<Vec<_>>(),
            |models, z| -> Result<Vec<Vec<u8>>> {
                let planes: Vec<&[f32]> = vol.modalities.iter().map(|m| m.slice(z)).collect();
                let brain: Vec<(usize, usize)> = (0..h * w)
                    .filter(|&i| planes.iter().any(|p| p[i] != 0.0))
                    .map(|i| (i / w, i % w))
                    .collect();
                let mut labels = vec![vec![0u8; h * w]; models.len()];
                if brain.is_empty() {
                    return Ok(labels);
                }
                let ctx = models[0].slice_context(&planes, h, w)?;
                let mut rng = Rng::new(0);
                for chunk in brain.chunks(SEGMENT_BATCH) {
                    let feats = models[0].infer_features(&ctx, chunk)?;
                    for (model, out) in models.iter_mut().zip(labels.iter_mut()) {
                        let probs = softmax(&model.head_logits(&feats, Mode::Infer, &mut rng)?)?;
                        for (&(y, x), p) in chunk.iter().zip(probs.data().chunks(CLASSES)) {
                            out[y * w + x] = argmax(p);
                        }
                    }
                }
                Ok(labels)
            },
        )
        .collect::<Result<Vec<_>>>()?;
    (0..models.len())
        .map(|k| LabelMap::new(dims, slices.iter().flat_map(|s| s[k].iter().copied()).collect()))
        .collect()
}
