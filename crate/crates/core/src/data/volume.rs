use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{shape_err, Error, Result};
use crate::models::CLASSES;
use crate::tensor::{read_u32, Tensor};

const VOLUME_MAGIC: &[u8; 4] = b"NXV1";
const VOLUME_VERSION: u32 = 1;

/// One scalar 3-D image, `[D, H, W]` (slice-major), stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], data: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) || dims.iter().product::<usize>() != data.len() {
            return Err(shape_err!("volume {dims:?} with {} values", data.len()));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, vec![0.0; dims.iter().product()])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn slice_len(&self) -> usize {
        self.dims[1] * self.dims[2]
    }

    pub fn slice(&self, z: usize) -> &[f32] {
        let n = self.slice_len();
        &self.data[z * n..(z + 1) * n]
    }

    pub fn slice_mut(&mut self, z: usize) -> &mut [f32] {
        let n = self.slice_len();
        &mut self.data[z * n..(z + 1) * n]
    }

    pub fn at(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[(z * self.dims[1] + y) * self.dims[2] + x]
    }

    /// `[H, W]` tensor of one slice.
    pub fn slice_tensor(&self, z: usize) -> Tensor {
        let data = self.slice(z).iter().map(|&v| f64::from(v)).collect();
        Tensor::from_vec(&[self.dims[1], self.dims[2]], data).expect("slice extents are positive")
    }
}

/// Per-voxel class labels in `0..5`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    dims: [usize; 3],
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(dims: [usize; 3], labels: Vec<u8>) -> Result<Self> {
        if dims.contains(&0) || dims.iter().product::<usize>() != labels.len() {
            return Err(shape_err!("label map {dims:?} with {} values", labels.len()));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= CLASSES) {
            return Err(Error::Format(format!("label {bad} outside 0..{CLASSES}")));
        }
        Ok(Self { dims, labels })
    }

    pub fn zeros(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, vec![0; dims.iter().product()])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Writes are checked against the label range in debug builds only.
    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn at(&self, z: usize, y: usize, x: usize) -> u8 {
        self.labels[(z * self.dims[1] + y) * self.dims[2] + x]
    }

    pub fn slice(&self, z: usize) -> &[u8] {
        let n = self.dims[1] * self.dims[2];
        &self.labels[z * n..(z + 1) * n]
    }

    pub fn slice_mut(&mut self, z: usize) -> &mut [u8] {
        let n = self.dims[1] * self.dims[2];
        &mut self.labels[z * n..(z + 1) * n]
    }

    pub fn histogram(&self) -> [usize; CLASSES] {
        let mut h = [0; CLASSES];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    /// Label-only `NXV1` file (modality count 0).
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        VolumeSet { modalities: Vec::new(), labels: Some(self.clone()) }.write(path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        VolumeSet::read(path)?
            .labels
            .ok_or_else(|| Error::Format(format!("{} carries no labels", path.display())))
    }
}

/// Co-registered modalities (T1, T1c, T2, T2-Flair) and optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeSet {
    pub modalities: Vec<Volume>,
    pub labels: Option<LabelMap>,
}

impl VolumeSet {
    pub fn new(modalities: Vec<Volume>, labels: Option<LabelMap>) -> Result<Self> {
        let set = Self { modalities, labels };
        set.dims()?;
        Ok(set)
    }

    /// Shared extents; errors if the parts disagree or the set is empty.
    pub fn dims(&self) -> Result<[usize; 3]> {
        let mut dims = self.modalities.iter().map(Volume::dims).chain(self.labels.iter().map(LabelMap::dims));
        let first = dims.next().ok_or_else(|| shape_err!("volume set has neither modalities nor labels"))?;
        if let Some(other) = dims.find(|d| *d != first) {
            return Err(shape_err!("volume set extents disagree: {first:?} vs {other:?}"));
        }
        Ok(first)
    }

    /// Voxels where any modality is nonzero.
    pub fn brain_mask(&self) -> Vec<bool> {
        let n = self.modalities.first().map_or(0, |m| m.data().len());
        (0..n).map(|i| self.modalities.iter().any(|m| m.data()[i] != 0.0)).collect()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    /// Little-endian `NXV1`: magic, u32 version, u32 D/H/W, u8 modality
    /// count, u8 has-labels, modalities as f32, labels as u8.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let dims = self.dims()?;
        let count = u8::try_from(self.modalities.len()).map_err(|_| shape_err!("too many modalities"))?;
        w.write_all(VOLUME_MAGIC)?;
        w.write_all(&VOLUME_VERSION.to_le_bytes())?;
        for d in dims {
            let d = u32::try_from(d).map_err(|_| shape_err!("extent {d} exceeds u32"))?;
            w.write_all(&d.to_le_bytes())?;
        }
        w.write_all(&[count, u8::from(self.labels.is_some())])?;
        for m in &self.modalities {
            let mut buf = Vec::with_capacity(m.data.len() * 4);
            for v in &m.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        if let Some(labels) = &self.labels {
            w.write_all(&labels.labels)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != VOLUME_MAGIC {
            return Err(Error::Format(format!("bad volume magic {magic:?}")));
        }
        let version = read_u32(r)?;
        if version != VOLUME_VERSION {
            return Err(Error::Version(format!("volume format version {version}, expected {VOLUME_VERSION}")));
        }
        let dims = [read_u32(r)? as usize, read_u32(r)? as usize, read_u32(r)? as usize];
        let n: usize = dims.iter().product();
        let mut flags = [0u8; 2];
        r.read_exact(&mut flags)?;
        let mut modalities = Vec::with_capacity(flags[0] as usize);
        for _ in 0..flags[0] {
            let mut bytes = vec![0u8; n * 4];
            r.read_exact(&mut bytes)?;
            let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            modalities.push(Volume::new(dims, data)?);
        }
        let labels = match flags[1] {
            0 => None,
            1 => {
                let mut bytes = vec![0u8; n];
                r.read_exact(&mut bytes)?;
                Some(LabelMap::new(dims, bytes)?)
            }
            f => return Err(Error::Format(format!("has-labels flag {f}"))),
        };
        Self::new(modalities, labels)
    }
}
