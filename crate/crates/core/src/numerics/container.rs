//! Self-describing binary container for checkpoints and cached windows.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    "DDCK"
//! version  u32
//! n_meta   u32, then n_meta × (u32 len, utf-8 key, u32 len, utf-8 value)
//! n_array  u32, then n_array × (u32 len, utf-8 name, u8 dtype, u32 ndim,
//!                                ndim × u64 dim, u64 payload_len, payload)
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DDCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    U8 = 1,
    I64 = 2,
    F64 = 3,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U8 => 1,
            DType::I64 | DType::F64 => 8,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => DType::F32,
            1 => DType::U8,
            2 => DType::I64,
            3 => DType::F64,
            other => return Err(Error::Format(format!("unknown dtype tag {other}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub payload: Vec<u8>,
}

impl NamedArray {
    pub fn from_f32(name: impl Into<String>, tensor: &Tensor<f32>) -> Self {
        NamedArray {
            name: name.into(),
            dtype: DType::F32,
            shape: tensor.shape().to_vec(),
            payload: tensor.data().iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    pub fn from_f64(name: impl Into<String>, shape: Vec<usize>, values: &[f64]) -> Self {
        NamedArray {
            name: name.into(),
            dtype: DType::F64,
            shape,
            payload: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    pub fn from_u8(name: impl Into<String>, shape: Vec<usize>, values: &[u8]) -> Self {
        NamedArray {
            name: name.into(),
            dtype: DType::U8,
            shape,
            payload: values.to_vec(),
        }
    }

    pub fn from_i64(name: impl Into<String>, shape: Vec<usize>, values: &[i64]) -> Self {
        NamedArray {
            name: name.into(),
            dtype: DType::I64,
            shape,
            payload: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    fn expect(&self, dtype: DType) -> Result<()> {
        if self.dtype != dtype {
            return Err(Error::Format(format!(
                "array {} has dtype {:?}, expected {:?}",
                self.name, self.dtype, dtype
            )));
        }
        Ok(())
    }

    pub fn to_f32(&self) -> Result<Tensor<f32>> {
        self.expect(DType::F32)?;
        let data = self
            .payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(self.shape.clone(), data)
    }

    pub fn to_f64_vec(&self) -> Result<Vec<f64>> {
        self.expect(DType::F64)?;
        Ok(self
            .payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn to_i64_vec(&self) -> Result<Vec<i64>> {
        self.expect(DType::I64)?;
        Ok(self
            .payload
            .chunks_exact(8)
            .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn as_u8(&self) -> Result<&[u8]> {
        self.expect(DType::U8)?;
        Ok(&self.payload)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub metadata: BTreeMap<String, String>,
    pub arrays: Vec<NamedArray>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.metadata.insert(key.into(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("missing metadata key {key}")))
    }

    pub fn meta_parse<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let raw = self.meta(key)?;
        raw.parse()
            .map_err(|_| Error::Format(format!("metadata {key}={raw} does not parse")))
    }

    pub fn push(&mut self, array: NamedArray) -> Result<()> {
        if self.arrays.iter().any(|a| a.name == array.name) {
            return Err(Error::Format(format!("duplicate array {}", array.name)));
        }
        if array.payload.len() != array.numel() * array.dtype.size() {
            return Err(Error::Format(format!("array {} payload size mismatch", array.name)));
        }
        self.arrays.push(array);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Format(format!("missing array {name}")))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        for (k, v) in &self.metadata {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for a in &self.arrays {
            put_str(&mut out, &a.name);
            out.push(a.dtype as u8);
            out.extend_from_slice(&(a.shape.len() as u32).to_le_bytes());
            for &d in &a.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&(a.payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&a.payload);
        }
        out
    }

    /// Parses a container, rejecting anything truncated, oversized or
    /// internally inconsistent.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let mut metadata = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            if metadata.insert(k.clone(), v).is_some() {
                return Err(Error::Format(format!("duplicate metadata key {k}")));
            }
        }
        let mut c = Container {
            metadata,
            arrays: Vec::new(),
        };
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let dtype = DType::from_tag(r.u8()?)?;
            let ndim = r.u32()? as usize;
            if ndim > 16 {
                return Err(Error::Format(format!("array {name} has {ndim} dimensions")));
            }
            let mut shape = Vec::with_capacity(ndim);
            let mut numel: usize = 1;
            for _ in 0..ndim {
                let d = usize::try_from(r.u64()?)
                    .map_err(|_| Error::Format("dimension overflows usize".into()))?;
                if d == 0 {
                    return Err(Error::Format(format!("array {name} has a zero dimension")));
                }
                numel = numel
                    .checked_mul(d)
                    .ok_or_else(|| Error::Format("element count overflow".into()))?;
                shape.push(d);
            }
            let len = r.u64()?;
            let expected = numel
                .checked_mul(dtype.size())
                .ok_or_else(|| Error::Format("payload size overflow".into()))?;
            if len != expected as u64 {
                return Err(Error::Format(format!(
                    "array {name}: payload {len} bytes, shape needs {expected}"
                )));
            }
            let payload = r.take(expected)?.to_vec();
            c.push(NamedArray {
                name,
                dtype,
                shape,
                payload,
            })?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    /// Hex SHA-256 of the encoded bytes.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.encode()))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid utf-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Container {
        let mut c = Container::new();
        c.set_meta("format", "checkpoint");
        c.set_meta("k", 200);
        c.push(NamedArray::from_f32(
            "w",
            &Tensor::new(vec![2, 2], vec![1.5, -0.0, f32::MIN_POSITIVE, 3.25]).unwrap(),
        ))
        .unwrap();
        c.push(NamedArray::from_u8("mask", vec![3], &[0, 1, 1])).unwrap();
        c.push(NamedArray::from_i64("ids", vec![2], &[-4, 9])).unwrap();
        c
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let bytes = c.encode();
        let back = Container::decode(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.encode(), bytes);
        let w = back.get("w").unwrap().to_f32().unwrap();
        assert_eq!(w.data()[1].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn rejects_truncation_and_trailing_bytes() {
        let bytes = sample().encode();
        for cut in [0, 3, 10, bytes.len() - 1] {
            assert!(Container::decode(&bytes[..cut]).is_err());
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Container::decode(&extra).is_err());
    }

    #[test]
    fn rejects_wrong_dtype_access() {
        let c = sample();
        assert!(c.get("mask").unwrap().to_f32().is_err());
        assert!(c.get("missing").is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_f32_arrays_round_trip(values in proptest::collection::vec(any::<f32>(), 1..64),
                                           key in "[a-z]{1,8}", val in ".{0,16}") {
            let mut c = Container::new();
            c.set_meta(key, val);
            let n = values.len();
            c.push(NamedArray {
                name: "a".into(),
                dtype: DType::F32,
                shape: vec![n],
                payload: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
            }).unwrap();
            let back = Container::decode(&c.encode()).unwrap();
            prop_assert_eq!(back, c);
        }

        #[test]
        fn decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = Container::decode(&bytes);
        }
    }
}
