use super::volume::{LabelMap, Volume, VolumeSet};
use crate::error::{shape_err, Result};
use crate::models::MODALITIES;
use crate::rng::Rng;

/// Tissue intensities per modality (T1, T1c, T2, T2-Flair).
const WHITE: [f32; MODALITIES] = [800.0, 820.0, 350.0, 450.0];
const GREY: [f32; MODALITIES] = [600.0, 620.0, 500.0, 550.0];
const CSF: [f32; MODALITIES] = [250.0, 260.0, 950.0, 200.0];

/// Tumor zones from the core outwards: outer edge of each zone as a
/// fraction of the tumor ellipsoid, its label, and its offset from white
/// matter per modality.
const ZONES: [(f64, u8, [f32; MODALITIES]); 4] = [
    (0.3, 1, [-500.0, -500.0, 500.0, 50.0]),
    (0.5, 4, [-250.0, 180.0, 250.0, 300.0]),
    (0.7, 3, [-350.0, -320.0, 400.0, 350.0]),
    (1.0, 2, [-200.0, -200.0, 450.0, 500.0]),
];

const HEAD_FILL: f64 = 0.45;
const GREY_INNER: f64 = 0.65;
const CSF_INNER: f64 = 0.88;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TumorSpec {
    None,
    /// Center and radii drawn from the phantom seed.
    Random,
    /// Voxel units, `(slice, row, col)`.
    Fixed { center: [f64; 3], radii: [f64; 3] },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub tumor: TumorSpec,
    pub noise_std: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self { dims: [64, 64, 64], tumor: TumorSpec::Random, noise_std: 25.0 }
    }
}

fn random_tumor(dims: [usize; 3], rng: &mut Rng) -> ([f64; 3], [f64; 3]) {
    let half = dims.map(|d| d as f64 / 2.0);
    let in_plane = half[1].min(half[2]);
    let r = in_plane * (0.35 + 0.15 * rng.uniform());
    let radii = [half[0] * (0.5 + 0.2 * rng.uniform()), r * (0.85 + 0.3 * rng.uniform()), r * (0.85 + 0.3 * rng.uniform())];
    let mut center = [0.0; 3];
    for a in 0..3 {
        let room = (half[a] * 2.0 * HEAD_FILL - radii[a]).max(0.0) * 0.5;
        center[a] = half[a] - 0.5 + room * (2.0 * rng.uniform() - 1.0);
    }
    (center, radii)
}

/// Synthetic four-modality head with concentric tumor zones.
pub fn generate_phantom(seed: u64, spec: &PhantomSpec) -> Result<VolumeSet> {
    let [d, h, w] = spec.dims;
    if spec.dims.contains(&0) {
        return Err(shape_err!("phantom extents {:?}", spec.dims));
    }
    let mut rng = Rng::new(seed);
    let tumor = match spec.tumor {
        TumorSpec::None => None,
        TumorSpec::Random => Some(random_tumor(spec.dims, &mut rng)),
        TumorSpec::Fixed { center, radii } => Some((center, radii)),
    }
    .filter(|(_, radii)| radii.iter().all(|&r| r > 0.0));
    // Grey/white boundary ripple.
    let phase = [rng.uniform() * std::f64::consts::TAU, rng.uniform() * std::f64::consts::TAU];

    let n = d * h * w;
    let mut mods = vec![vec![0f32; n]; MODALITIES];
    let mut labels = vec![0u8; n];
    let head_center = [d, h, w].map(|e| e as f64 / 2.0 - 0.5);
    let head_axes = [d, h, w].map(|e| (e as f64 * HEAD_FILL).max(0.5));
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let p = [z as f64, y as f64, x as f64];
                let u: Vec<f64> = (0..3).map(|a| (p[a] - head_center[a]) / head_axes[a]).collect();
                let rho = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
                if rho > 1.0 {
                    continue;
                }
                let theta = u[1].atan2(u[2]);
                let ripple = 0.04 * (5.0 * theta + phase[0]).sin() * (3.0 * u[0] + phase[1]).cos();
                let tissue = if rho > CSF_INNER {
                    CSF
                } else if rho > GREY_INNER + ripple {
                    GREY
                } else {
                    WHITE
                };
                let mut value = tissue;
                let i = (z * h + y) * w + x;
                if let Some((c, r)) = &tumor {
                    let t = (0..3).map(|a| ((p[a] - c[a]) / r[a]).powi(2)).sum::<f64>().sqrt();
                    if let Some((_, label, offset)) = ZONES.iter().find(|(edge, _, _)| t < *edge) {
                        labels[i] = *label;
                        for m in 0..MODALITIES {
                            value[m] = WHITE[m] + offset[m];
                        }
                    }
                }
                for m in 0..MODALITIES {
                    let noisy = f64::from(value[m]) + spec.noise_std * rng.normal();
                    // Brain voxels never read as background.
                    mods[m][i] = noisy.max(1.0) as f32;
                }
            }
        }
    }
    let modalities = mods.into_iter().map(|data| Volume::new(spec.dims, data)).collect::<Result<_>>()?;
    VolumeSet::new(modalities, Some(LabelMap::new(spec.dims, labels)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(tumor: TumorSpec, noise_std: f64) -> PhantomSpec {
        PhantomSpec { dims: [12, 40, 40], tumor, noise_std }
    }

    #[test]
    fn zero_radius_is_tumor_free() {
        let spec = small(TumorSpec::Fixed { center: [6.0, 20.0, 20.0], radii: [0.0, 5.0, 5.0] }, 25.0);
        let v = generate_phantom(1, &spec).unwrap();
        assert!(v.labels.unwrap().labels().iter().all(|&l| l == 0));
        let v = generate_phantom(1, &small(TumorSpec::None, 25.0)).unwrap();
        assert!(v.labels.unwrap().labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn default_spec_has_every_class() {
        for seed in 0..4 {
            let v = generate_phantom(seed, &PhantomSpec::default()).unwrap();
            let hist = v.labels.unwrap().histogram();
            assert!(hist.iter().all(|&c| c > 0), "seed {seed}: {hist:?}");
        }
    }

    #[test]
    fn noiseless_is_piecewise_constant_by_label() {
        let spec = PhantomSpec { dims: [16, 48, 48], tumor: TumorSpec::Random, noise_std: 0.0 };
        let v = generate_phantom(7, &spec).unwrap();
        let labels = v.labels.as_ref().unwrap().labels();
        for (i, &l) in labels.iter().enumerate() {
            let got: Vec<f32> = v.modalities.iter().map(|m| m.data()[i]).collect();
            if l > 0 {
                let (_, _, off) = ZONES.iter().find(|z| z.1 == l).unwrap();
                let want: Vec<f32> = (0..MODALITIES).map(|m| WHITE[m] + off[m]).collect();
                assert_eq!(got, want);
            } else if got[0] != 0.0 {
                assert!([WHITE, GREY, CSF].iter().any(|t| t[..] == got[..]));
            } else {
                assert!(got.iter().all(|&g| g == 0.0));
            }
        }
    }

    #[test]
    fn background_is_exactly_zero_and_brain_nonzero() {
        let v = generate_phantom(3, &small(TumorSpec::Random, 40.0)).unwrap();
        let mask = v.brain_mask();
        let outside = mask.iter().filter(|&&m| !m).count();
        assert!(outside > 0 && outside < mask.len());
        for (i, &m) in mask.iter().enumerate() {
            assert_eq!(v.modalities.iter().all(|x| x.data()[i] != 0.0), m);
        }
    }

    #[test]
    fn seeded() {
        let spec = small(TumorSpec::Random, 25.0);
        assert_eq!(generate_phantom(5, &spec).unwrap(), generate_phantom(5, &spec).unwrap());
        assert_ne!(generate_phantom(5, &spec).unwrap(), generate_phantom(6, &spec).unwrap());
    }
}
