use super::patch::{extract_patch_pair, Center, PatchPair};
use super::volume::VolumeSet;
use crate::error::{param_err, Error, Result};
use crate::models::CLASSES;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerMode {
    /// Equal counts per present class.
    Balanced,
    /// Uniform over brain pixels.
    TrueDistribution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerSpec {
    pub mode: SamplerMode,
    pub count: usize,
    pub seed: u64,
}

/// A labeled center in one of the sampled volumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Site {
    pub volume: usize,
    pub center: Center,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteSample {
    pub sites: Vec<Site>,
    /// Classes with no eligible pixel anywhere; their share went to the rest.
    pub missing: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    pub pairs: Vec<PatchPair>,
    pub missing: Vec<u8>,
}

fn site_at(vols: &[VolumeSet], volume: usize, flat: usize) -> Site {
    let labels = vols[volume].labels.as_ref().expect("checked");
    let [_, h, w] = labels.dims();
    let center = (flat / (h * w), flat / w % h, flat % w);
    Site { volume, center, label: labels.labels()[flat] }
}

/// Brain pixels of every volume grouped by class, as `(volume, flat index)`.
fn class_index(vols: &[VolumeSet]) -> Result<[Vec<(usize, usize)>; CLASSES]> {
    let mut index: [Vec<(usize, usize)>; CLASSES] = Default::default();
    for (v, vol) in vols.iter().enumerate() {
        vol.dims()?;
        let labels = vol
            .labels
            .as_ref()
            .ok_or_else(|| Error::Config(format!("volume {v} has no labels to sample from")))?;
        let mask = vol.brain_mask();
        for (i, &l) in labels.labels().iter().enumerate() {
            // Tumor pixels count as brain even if every modality reads zero.
            if l > 0 || mask.get(i).copied().unwrap_or(false) {
                index[l as usize].push((v, i));
            }
        }
    }
    Ok(index)
}

/// Draws centers with replacement. Balanced output is interleaved class by
/// class, so every run of `k·P` consecutive sites holds `k` of each of the
/// `P` present classes.
pub fn sample_sites(vols: &[VolumeSet], spec: &SamplerSpec) -> Result<SiteSample> {
    if spec.count == 0 {
        return Err(param_err!("sample count must be positive"));
    }
    let index = class_index(vols)?;
    let missing: Vec<u8> = (0..CLASSES as u8).filter(|&c| index[c as usize].is_empty()).collect();
    let present: Vec<usize> = (0..CLASSES).filter(|&c| !index[c].is_empty()).collect();
    if present.is_empty() {
        return Err(Error::Config("no brain pixels to sample".into()));
    }
    let mut rng = Rng::new(spec.seed);
    let sites = match spec.mode {
        SamplerMode::Balanced => (0..spec.count)
            .map(|i| {
                let pool = &index[present[i % present.len()]];
                let (v, flat) = pool[rng.below(pool.len())];
                site_at(vols, v, flat)
            })
            .collect(),
        SamplerMode::TrueDistribution => {
            let total: usize = index.iter().map(Vec::len).sum();
            (0..spec.count)
                .map(|_| {
                    let mut k = rng.below(total);
                    let mut c = 0;
                    while k >= index[c].len() {
                        k -= index[c].len();
                        c += 1;
                    }
                    let (v, flat) = index[c][k];
                    site_at(vols, v, flat)
                })
                .collect()
        }
    };
    Ok(SiteSample { sites, missing })
}

/// Same draw as [`sample_sites`], with patches extracted.
pub fn sample_patches(vols: &[VolumeSet], spec: &SamplerSpec) -> Result<PatchSample> {
    let sample = sample_sites(vols, spec)?;
    let pairs = sample
        .sites
        .iter()
        .map(|s| extract_patch_pair(&vols[s.volume], s.center))
        .collect::<Result<_>>()?;
    Ok(PatchSample { pairs, missing: sample.missing })
}

/// Shuffles within each class, then deals classes round-robin so batches
/// stay balanced from one epoch to the next.
pub fn stratified_shuffle(sites: &mut [Site], rng: &mut Rng) {
    stratified_shuffle_by(sites, |s| s.label, rng);
}

/// [`stratified_shuffle`] over anything carrying a class label.
pub fn stratified_shuffle_by<T: Copy>(items: &mut [T], label: impl Fn(&T) -> u8, rng: &mut Rng) {
    let mut groups: [Vec<T>; CLASSES] = Default::default();
    for item in items.iter() {
        groups[label(item) as usize].push(*item);
    }
    for g in groups.iter_mut() {
        rng.shuffle(g);
    }
    let mut cursors = [0usize; CLASSES];
    let mut out = 0;
    while out < items.len() {
        for c in 0..CLASSES {
            if cursors[c] < groups[c].len() {
                items[out] = groups[c][cursors[c]];
                cursors[c] += 1;
                out += 1;
            }
        }
    }
}

pub fn class_counts(sites: &[Site]) -> [usize; CLASSES] {
    let mut counts = [0; CLASSES];
    for s in sites {
        counts[s.label as usize] += 1;
    }
    counts
}
