use super::volume::{Volume, VolumeSet};
use crate::tensor::Tensor;

/// Slices whose brain-pixel spread falls below this come out all zero.
pub const SIGMA_FLOOR: f64 = 1e-8;
pub const LOW_PERCENTILE: f64 = 1.0;
pub const HIGH_PERCENTILE: f64 = 99.0;

/// Scope of the intensity statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormScope {
    #[default]
    Slice,
    Volume,
}

/// Linear-interpolated percentile of sorted values (`q` in 0..=100).
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty slice");
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn normalize_values(values: &mut [f64]) {
    let mask: Vec<bool> = values.iter().map(|&v| v != 0.0).collect();
    let mut brain: Vec<f64> = values.iter().copied().filter(|&v| v != 0.0).collect();
    if brain.is_empty() {
        return;
    }
    brain.sort_by(f64::total_cmp);
    let lo = percentile(&brain, LOW_PERCENTILE);
    let hi = percentile(&brain, HIGH_PERCENTILE);
    let n = brain.len() as f64;
    let brain_values = || values.iter().zip(&mask).filter(|(_, m)| **m).map(|(v, _)| v.clamp(lo, hi));
    let mean = brain_values().sum::<f64>() / n;
    let sigma = (brain_values().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    for (v, _) in values.iter_mut().zip(&mask).filter(|(_, m)| **m) {
        *v = if sigma < SIGMA_FLOOR { 0.0 } else { (v.clamp(lo, hi) - mean) / sigma };
    }
}

/// Percentile clamp then z-score over the nonzero pixels of one slice.
/// Background (zero) pixels stay zero.
pub fn normalize_slice(x: &Tensor) -> Tensor {
    let mut data = x.data().to_vec();
    normalize_values(&mut data);
    Tensor::from_vec(x.shape(), data).expect("shape unchanged")
}

fn normalize_volume(v: &Volume, scope: NormScope) -> Volume {
    let mut out = v.clone();
    let chunk = match scope {
        NormScope::Slice => v.slice_len(),
        NormScope::Volume => v.data().len(),
    };
    for part in out.data_mut().chunks_mut(chunk) {
        let mut values: Vec<f64> = part.iter().map(|&x| f64::from(x)).collect();
        normalize_values(&mut values);
        for (dst, src) in part.iter_mut().zip(values) {
            *dst = src as f32;
        }
    }
    out
}

/// Normalizes every modality; labels pass through. Bias-field correction
/// would run before this step and is expected to be done externally.
pub fn preprocess_volume(set: &VolumeSet, scope: NormScope) -> VolumeSet {
    VolumeSet {
        modalities: set.modalities.iter().map(|m| normalize_volume(m, scope)).collect(),
        labels: set.labels.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nonzero_stats(t: &Tensor) -> (f64, f64) {
        let v: Vec<f64> = t.data().iter().copied().filter(|&x| x != 0.0).collect();
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
    }

    #[test]
    fn constant_slice_goes_to_zero() {
        let x = Tensor::new(&[6, 5], 42.0).unwrap();
        assert!(normalize_slice(&x).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_level_slice_standardizes_exactly() {
        // Half 8, half 12: mean 10, std 2. No percentile clamp bites on two levels.
        let mut data = vec![0.0; 64];
        for (i, v) in data.iter_mut().enumerate().skip(8).take(48) {
            *v = if i % 2 == 0 { 8.0 } else { 12.0 };
        }
        let x = Tensor::from_vec(&[8, 8], data).unwrap();
        let (m, s) = nonzero_stats(&x);
        assert!((m - 10.0).abs() < 1e-12 && (s - 2.0).abs() < 1e-12);
        let y = normalize_slice(&x);
        let (m, s) = nonzero_stats(&y);
        assert!(m.abs() < 1e-9 && (s - 1.0).abs() < 1e-9);
        assert!(y.data()[..8].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn outlier_is_clamped_to_99th_percentile() {
        let mut data: Vec<f64> = (0..400).map(|i| 1.0 + (i % 17) as f64 * 0.01).collect();
        data[123] = 1e6;
        let mut sorted = data.clone();
        sorted.sort_by(f64::total_cmp);
        // Sorting oracle: rank (n-1)*0.99 interpolated.
        let pos: f64 = 399.0 * 0.99;
        let hi = sorted[pos as usize] + (sorted[pos as usize + 1] - sorted[pos as usize]) * (pos - pos.floor());
        let pos: f64 = 399.0 * 0.01;
        let lo = sorted[pos as usize] + (sorted[pos as usize + 1] - sorted[pos as usize]) * (pos - pos.floor());
        let clamped: Vec<f64> = data.iter().map(|v| v.clamp(lo, hi)).collect();
        let n = clamped.len() as f64;
        let mean = clamped.iter().sum::<f64>() / n;
        let sd = (clamped.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let y = normalize_slice(&Tensor::from_vec(&[20, 20], data).unwrap());
        assert!((y.data()[123] - (hi - mean) / sd).abs() < 1e-9);
        assert!(y.data().iter().all(|v| v.abs() < 10.0));
    }

    #[test]
    fn percentile_interpolates() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&s, 50.0), 3.0);
        assert_eq!(percentile(&s, 0.0), 1.0);
        assert!((percentile(&s, 99.0) - 4.96).abs() < 1e-12);
    }

    #[test]
    fn volume_scope_uses_whole_volume() {
        let mut data = vec![0f32; 2 * 3 * 3];
        for (i, v) in data.iter_mut().enumerate() {
            *v = if i < 9 { 5.0 } else { 9.0 };
        }
        let v = Volume::new([2, 3, 3], data).unwrap();
        let set = VolumeSet::new(vec![v], None).unwrap();
        let per_slice = preprocess_volume(&set, NormScope::Slice);
        assert!(per_slice.modalities[0].data().iter().all(|&x| x == 0.0));
        let whole = preprocess_volume(&set, NormScope::Volume);
        assert!((whole.modalities[0].data()[0] + 1.0).abs() < 1e-6);
        assert!((whole.modalities[0].data()[17] - 1.0).abs() < 1e-6);
    }
}
