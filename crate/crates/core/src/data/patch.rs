use super::volume::VolumeSet;
use crate::error::{shape_err, Error, Result};
use crate::models::{BIG_PATCH, MODALITIES, SMALL_PATCH};
use crate::tensor::Tensor;

/// `(slice, row, col)`.
pub type Center = (usize, usize, usize);

/// Planes whose variance falls below this are emitted as zeros.
pub const PLANE_VAR_FLOOR: f64 = 1e-12;

/// Co-centric big and small crops around one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub big: Tensor,
    pub small: Tensor,
    pub center: Center,
    pub label: Option<u8>,
}

fn check_center(vol: &VolumeSet, center: Center) -> Result<[usize; 3]> {
    let dims = vol.dims()?;
    if vol.modalities.len() != MODALITIES {
        return Err(shape_err!("expected {MODALITIES} modalities, got {}", vol.modalities.len()));
    }
    let (z, y, x) = center;
    if z >= dims[0] || y >= dims[1] || x >= dims[2] {
        return Err(Error::Bounds(format!("center {center:?} outside volume {dims:?}")));
    }
    Ok(dims)
}

/// Copies a zero-padded `size`×`size` window per modality into `out`
/// (`[MODALITIES, size, size]`). The caller guarantees a valid center.
pub(crate) fn copy_window(vol: &VolumeSet, center: Center, size: usize, out: &mut [f64]) {
    let [_, h, w] = vol.modalities[0].dims();
    let (z, cy, cx) = center;
    let half = (size / 2) as isize;
    let plane = size * size;
    out.fill(0.0);
    for (m, modality) in vol.modalities.iter().enumerate() {
        let slice = modality.slice(z);
        for r in 0..size {
            let y = cy as isize + r as isize - half;
            if y < 0 || y >= h as isize {
                continue;
            }
            let row = &slice[y as usize * w..(y as usize + 1) * w];
            let x0 = cx as isize - half;
            let lo = (-x0).max(0) as usize;
            let hi = ((w as isize - x0).min(size as isize)).max(0) as usize;
            let dst = &mut out[m * plane + r * size..m * plane + (r + 1) * size];
            for c in lo..hi {
                dst[c] = f64::from(row[(x0 + c as isize) as usize]);
            }
        }
    }
}

/// Mean 0, variance 1 per plane; constant planes become zeros.
pub fn standardize_planes(data: &mut [f64], plane: usize) {
    for p in data.chunks_mut(plane) {
        let n = p.len() as f64;
        let mean = p.iter().sum::<f64>() / n;
        let var = p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        if var < PLANE_VAR_FLOOR {
            p.fill(0.0);
        } else {
            let s = var.sqrt();
            p.iter_mut().for_each(|v| *v = (*v - mean) / s);
        }
    }
}

/// Unstandardized crops (zero-padded outside the volume).
pub fn extract_raw_pair(vol: &VolumeSet, center: Center) -> Result<(Tensor, Tensor)> {
    check_center(vol, center)?;
    let mut big = vec![0.0; MODALITIES * BIG_PATCH * BIG_PATCH];
    let mut small = vec![0.0; MODALITIES * SMALL_PATCH * SMALL_PATCH];
    copy_window(vol, center, BIG_PATCH, &mut big);
    copy_window(vol, center, SMALL_PATCH, &mut small);
    Ok((
        Tensor::from_vec(&[MODALITIES, BIG_PATCH, BIG_PATCH], big)?,
        Tensor::from_vec(&[MODALITIES, SMALL_PATCH, SMALL_PATCH], small)?,
    ))
}

/// Writes the standardized big and small crops for `center` into the
/// given buffers (one sample's worth each).
pub(crate) fn fill_pair(vol: &VolumeSet, center: Center, big: &mut [f64], small: &mut [f64]) {
    copy_window(vol, center, BIG_PATCH, big);
    copy_window(vol, center, SMALL_PATCH, small);
    standardize_planes(big, BIG_PATCH * BIG_PATCH);
    standardize_planes(small, SMALL_PATCH * SMALL_PATCH);
}

pub fn extract_patch_pair(vol: &VolumeSet, center: Center) -> Result<PatchPair> {
    let (mut big, mut small) = extract_raw_pair(vol, center)?;
    standardize_planes(big.data_mut(), BIG_PATCH * BIG_PATCH);
    standardize_planes(small.data_mut(), SMALL_PATCH * SMALL_PATCH);
    let label = vol.labels.as_ref().map(|l| l.at(center.0, center.1, center.2));
    Ok(PatchPair { big, small, center, label })
}

/// Stacks pairs into `[N, 4, 33, 33]` and `[N, 4, 15, 15]` batches.
pub fn batch_pairs(pairs: &[PatchPair]) -> Result<(Tensor, Tensor)> {
    let bigs: Vec<Tensor> = pairs.iter().map(|p| p.big.clone()).collect();
    let smalls: Vec<Tensor> = pairs.iter().map(|p| p.small.clone()).collect();
    Ok((Tensor::stack(&bigs)?, Tensor::stack(&smalls)?))
}

/// Builds standardized batches directly from centers.
pub fn batch_centers(vol: &VolumeSet, centers: &[Center]) -> Result<(Tensor, Tensor)> {
    for &c in centers {
        check_center(vol, c)?;
    }
    let bs = MODALITIES * BIG_PATCH * BIG_PATCH;
    let ss = MODALITIES * SMALL_PATCH * SMALL_PATCH;
    let mut big = vec![0.0; centers.len() * bs];
    let mut small = vec![0.0; centers.len() * ss];
    for ((&c, b), s) in centers.iter().zip(big.chunks_mut(bs)).zip(small.chunks_mut(ss)) {
        fill_pair(vol, c, b, s);
    }
    let n = centers.len();
    Ok((
        Tensor::from_vec(&[n, MODALITIES, BIG_PATCH, BIG_PATCH], big)?,
        Tensor::from_vec(&[n, MODALITIES, SMALL_PATCH, SMALL_PATCH], small)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::volume::{LabelMap, Volume};

    fn ramp_set(dims: [usize; 3]) -> VolumeSet {
        let n: usize = dims.iter().product();
        let mods = (0..MODALITIES)
            .map(|m| Volume::new(dims, (0..n).map(|i| 1.0 + (i * (m + 3) % 97) as f32).collect()).unwrap())
            .collect();
        let labels = LabelMap::new(dims, (0..n).map(|i| (i % 5) as u8).collect()).unwrap();
        VolumeSet::new(mods, Some(labels)).unwrap()
    }

    #[test]
    fn middle_patch_has_no_padding() {
        let set = ramp_set([2, 50, 50]);
        let (big, _) = extract_raw_pair(&set, (1, 25, 25)).unwrap();
        assert!(big.data().iter().all(|&v| v != 0.0));
        // Oracle: direct indexing.
        for m in 0..MODALITIES {
            for r in 0..BIG_PATCH {
                for c in 0..BIG_PATCH {
                    let want = f64::from(set.modalities[m].at(1, 25 + r - 16, 25 + c - 16));
                    assert_eq!(big.get(&[m, r, c]).unwrap(), want);
                }
            }
        }
    }

    #[test]
    fn corner_patch_pads_top_left() {
        let set = ramp_set([1, 40, 40]);
        let (big, _) = extract_raw_pair(&set, (0, 0, 0)).unwrap();
        for m in 0..MODALITIES {
            for r in 0..BIG_PATCH {
                for c in 0..BIG_PATCH {
                    let v = big.get(&[m, r, c]).unwrap();
                    assert_eq!(v == 0.0, r < 16 || c < 16, "({m},{r},{c})");
                }
            }
        }
    }

    #[test]
    fn small_is_center_crop_of_big() {
        let set = ramp_set([1, 20, 23]);
        for center in [(0, 0, 0), (0, 10, 11), (0, 19, 22), (0, 3, 20)] {
            let (big, small) = extract_raw_pair(&set, center).unwrap();
            for m in 0..MODALITIES {
                for r in 0..SMALL_PATCH {
                    for c in 0..SMALL_PATCH {
                        assert_eq!(small.get(&[m, r, c]).unwrap(), big.get(&[m, r + 9, c + 9]).unwrap());
                    }
                }
            }
        }
    }

    #[test]
    fn emitted_planes_are_standardized() {
        let set = ramp_set([1, 30, 30]);
        let pair = extract_patch_pair(&set, (0, 2, 27)).unwrap();
        assert_eq!(pair.label, Some(set.labels.as_ref().unwrap().at(0, 2, 27)));
        for (t, plane) in [(&pair.big, BIG_PATCH * BIG_PATCH), (&pair.small, SMALL_PATCH * SMALL_PATCH)] {
            for p in t.data().chunks(plane) {
                let n = p.len() as f64;
                let m = p.iter().sum::<f64>() / n;
                let v = p.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
                assert!(m.abs() < 1e-6 && (v - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn constant_plane_is_zeroed() {
        let dims = [1, 40, 40];
        let mods = (0..MODALITIES).map(|_| Volume::new(dims, vec![3.0; 1600]).unwrap()).collect();
        let set = VolumeSet::new(mods, None).unwrap();
        let pair = extract_patch_pair(&set, (0, 20, 20)).unwrap();
        assert!(pair.big.data().iter().all(|&v| v == 0.0));
        assert_eq!(pair.label, None);
    }

    #[test]
    fn out_of_volume_center_is_bounds_error() {
        let set = ramp_set([2, 10, 10]);
        assert!(matches!(extract_patch_pair(&set, (2, 0, 0)), Err(Error::Bounds(_))));
        assert!(matches!(extract_patch_pair(&set, (0, 0, 10)), Err(Error::Bounds(_))));
    }

    #[test]
    fn batch_centers_matches_single_extraction() {
        let set = ramp_set([2, 20, 20]);
        let centers = [(0, 1, 1), (1, 10, 19)];
        let (big, small) = batch_centers(&set, &centers).unwrap();
        let pairs: Vec<_> = centers.iter().map(|&c| extract_patch_pair(&set, c).unwrap()).collect();
        let (b2, s2) = batch_pairs(&pairs).unwrap();
        assert_eq!(big, b2);
        assert_eq!(small, s2);
    }
}
