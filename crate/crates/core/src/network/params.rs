//! Named parameter storage, initialization and checkpoint files.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

const MAGIC: &[u8; 8] = b"DSWPARAM";
const VERSION: u32 = 1;

/// Trainable tensors plus normalization running statistics, keyed by
/// dotted names such as `feature.3.weight` or `feature.3.bn.running_var`.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub tensors: BTreeMap<String, Tensor<T>>,
}

impl<T> Default for Params<T> {
    fn default() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }
}

/// Running statistics are stored alongside the weights but never trained.
pub fn is_buffer(name: &str) -> bool {
    name.ends_with(".running_mean") || name.ends_with(".running_var")
}

impl<T: Real> Params<T> {
    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter '{name}'")))
    }

    pub fn insert(&mut self, name: String, value: Tensor<T>) {
        self.tensors.insert(name, value);
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &str> {
        self.tensors
            .keys()
            .map(String::as_str)
            .filter(|n| !is_buffer(n))
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.tensors
            .iter()
            .filter(|(n, _)| !is_buffer(n))
            .map(|(_, t)| t.numel())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Errors unless `other` has exactly the same names and shapes.
    pub fn check_layout(&self, other: &Params<T>) -> Result<()> {
        for (name, t) in &self.tensors {
            match other.tensors.get(name) {
                None => return Err(Error::InvalidArgument(format!("checkpoint lacks '{name}'"))),
                Some(o) if o.shape() != t.shape() => {
                    return Err(Error::Shape(format!(
                        "'{name}' has shape {:?}, expected {:?}",
                        o.shape(),
                        t.shape()
                    )))
                }
                _ => {}
            }
        }
        if let Some(extra) = other
            .tensors
            .keys()
            .find(|k| !self.tensors.contains_key(*k))
        {
            return Err(Error::InvalidArgument(format!(
                "unexpected parameter '{extra}'"
            )));
        }
        Ok(())
    }

    /// Fan-in scaled uniform weights for a ReLU network.
    pub(crate) fn init_weight(
        &mut self,
        rng: &mut ChaCha8Rng,
        name: String,
        shape: &[usize],
        fan_in: usize,
    ) {
        let bound = (6.0 / fan_in as f64).sqrt();
        let t = Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..bound)));
        self.insert(name, t);
    }

    pub(crate) fn init_const(&mut self, name: String, shape: &[usize], value: f64) {
        self.insert(name, Tensor::full(shape, T::of(value)));
    }
}

impl Params<f32> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = bytes;
        let bad = |m: &str| Error::format(path, m.to_string());
        let take = |n: usize, r: &mut &[u8]| -> Result<Vec<u8>> {
            let mut buf = vec![0; n];
            r.read_exact(&mut buf)
                .map_err(|_| bad("truncated checkpoint"))?;
            Ok(buf)
        };
        let u32_of = |b: Vec<u8>| u32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        if take(8, &mut r)? != MAGIC {
            return Err(bad("not a parameter checkpoint"));
        }
        let version = u32_of(take(4, &mut r)?);
        if version != VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let count = u32_of(take(4, &mut r)?);
        let mut params = Params::default();
        for _ in 0..count {
            let len = u32_of(take(4, &mut r)?) as usize;
            let name = String::from_utf8(take(len, &mut r)?)
                .map_err(|_| bad("parameter name is not UTF-8"))?;
            let ndim = u32_of(take(4, &mut r)?) as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let b = take(8, &mut r)?;
                let d = u64::from_le_bytes(b.try_into().expect("8 bytes"));
                shape.push(usize::try_from(d).map_err(|_| bad("extent too large"))?);
            }
            let n: usize = shape.iter().product();
            let raw = take(4 * n, &mut r)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Tensor::new(&shape, data).map_err(|e| bad(&format!("'{name}': {e}")))?;
            params.insert(name, t);
        }
        if !r.is_empty() {
            return Err(bad("trailing bytes after last record"));
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let mut p = Params::<f32>::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        p.init_weight(&mut rng, "a.weight".into(), &[2, 3, 3], 27);
        p.init_const("a.bn.running_var".into(), &[2], 1.0);
        p.insert(
            "b".into(),
            Tensor::new(&[1], vec![f32::MIN_POSITIVE]).unwrap(),
        );
        let back = Params::from_bytes(&p.to_bytes(), Path::new("x")).unwrap();
        assert_eq!(back, p);
        assert_eq!(
            p.trainable_names().collect::<Vec<_>>(),
            vec!["a.weight", "b"]
        );
    }

    #[test]
    fn truncated_checkpoint_rejected() {
        let mut p = Params::<f32>::default();
        p.init_const("w".into(), &[4], 0.5);
        let bytes = p.to_bytes();
        assert!(Params::from_bytes(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        assert!(Params::from_bytes(b"NOTMAGIC", Path::new("x")).is_err());
    }

    #[test]
    fn layout_check_names_missing_entry() {
        let mut a = Params::<f32>::default();
        a.init_const("w".into(), &[4], 0.5);
        let b = Params::<f32>::default();
        assert!(a.check_layout(&b).unwrap_err().to_string().contains("'w'"));
    }
}
