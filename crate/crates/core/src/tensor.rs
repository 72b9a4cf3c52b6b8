//! Dense row-major tensors and named parameter collections.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Row-major `f64` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "tensor shape {shape:?} has a zero dimension"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidArgument(format!(
                "tensor shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    /// Builds a `rows x cols` matrix from row slices.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension (batch size for activations).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all trailing dimensions.
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamKind {
    ConvWeight,
    DenseWeight,
    Bias,
    Other,
}

/// Convolution weight geometry: `in_channels x out_channels x d1 x d2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvDims {
    pub in_channels: usize,
    pub out_channels: usize,
    pub d1: usize,
    pub d2: usize,
}

impl ConvDims {
    pub fn shape(&self) -> Vec<usize> {
        vec![self.in_channels, self.out_channels, self.d1, self.d2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub kind: ParamKind,
    pub conv: Option<ConvDims>,
    pub tensor: Tensor,
}

impl ParamEntry {
    pub fn new(kind: ParamKind, tensor: Tensor) -> Self {
        Self {
            kind,
            conv: None,
            tensor,
        }
    }

    pub fn conv(dims: ConvDims, tensor: Tensor) -> Result<Self> {
        if tensor.shape() != dims.shape().as_slice() {
            return Err(Error::InvalidArgument(format!(
                "conv dims {:?} disagree with tensor shape {:?}",
                dims.shape(),
                tensor.shape()
            )));
        }
        Ok(Self {
            kind: ParamKind::ConvWeight,
            conv: Some(dims),
            tensor,
        })
    }

    fn same_layout(&self, other: &ParamEntry) -> bool {
        self.kind == other.kind
            && self.conv == other.conv
            && self.tensor.shape() == other.tensor.shape()
    }
}

/// Ordered, uniquely named collection of parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet {
    entries: IndexMap<String, ParamEntry>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, entry: ParamEntry) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name `{name}`"
            )));
        }
        self.entries.insert(name, entry);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamEntry)> {
        self.entries.iter_mut()
    }

    pub fn values(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.tensor.len()).sum()
    }

    pub fn is_congruent(&self, other: &ParameterSet) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(other.entries.iter())
                .all(|((na, a), (nb, b))| na == nb && a.same_layout(b))
    }

    pub fn ensure_congruent(&self, other: &ParameterSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Incongruent(format!(
                "{} entries vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for ((na, a), (nb, b)) in self.entries.iter().zip(other.entries.iter()) {
            if na != nb {
                return Err(Error::Incongruent(format!("`{na}` vs `{nb}`")));
            }
            if !a.same_layout(b) {
                return Err(Error::Incongruent(format!(
                    "`{na}`: {:?}{:?} vs {:?}{:?}",
                    a.kind,
                    a.tensor.shape(),
                    b.kind,
                    b.tensor.shape()
                )));
            }
        }
        Ok(())
    }

    /// Same layout, all values zero.
    pub fn zeros_like(&self) -> ParameterSet {
        let entries = self
            .entries
            .iter()
            .map(|(n, e)| {
                let mut e = e.clone();
                e.tensor.data_mut().fill(0.0);
                (n.clone(), e)
            })
            .collect();
        ParameterSet { entries }
    }

    /// Flattened values in entry order.
    pub fn flatten(&self) -> Vec<f64> {
        self.entries
            .values()
            .flat_map(|e| e.tensor.data().iter().copied())
            .collect()
    }

    pub fn max_abs_diff(&self, other: &ParameterSet) -> f64 {
        self.entries
            .values()
            .zip(other.entries.values())
            .map(|(a, b)| a.tensor.max_abs_diff(&b.tensor))
            .fold(0.0, f64::max)
    }

    /// Order-sensitive digest of every value's bit pattern.
    pub fn checksum(&self) -> u64 {
        // FNV-1a over names and raw bits
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for (name, e) in &self.entries {
            eat(name.as_bytes());
            for v in e.tensor.data() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(|e| e.tensor.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert(
            "w",
            ParamEntry::new(
                ParamKind::DenseWeight,
                Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap(),
            ),
        )
        .unwrap();
        p.insert(
            "b",
            ParamEntry::new(ParamKind::Bias, Tensor::new(vec![2], vec![0.5, -0.5]).unwrap()),
        )
        .unwrap();
        p
    }

    #[test]
    fn tensor_rejects_bad_value_count() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![0, 3], vec![]).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = sample();
        let e = p.get("b").unwrap().clone();
        assert!(p.insert("b", e).is_err());
    }

    #[test]
    fn congruence_checks_names_shapes_kinds() {
        let a = sample();
        assert!(a.is_congruent(&a.zeros_like()));

        let mut b = ParameterSet::new();
        b.insert("w", a.get("w").unwrap().clone()).unwrap();
        assert!(!a.is_congruent(&b));

        let mut c = a.clone();
        c.get_mut("b").unwrap().kind = ParamKind::Other;
        assert!(a.ensure_congruent(&c).is_err());
    }

    #[test]
    fn conv_dims_must_match_shape() {
        let dims = ConvDims {
            in_channels: 2,
            out_channels: 1,
            d1: 2,
            d2: 2,
        };
        assert!(ParamEntry::conv(dims, Tensor::zeros(vec![2, 1, 2, 2])).is_ok());
        assert!(ParamEntry::conv(dims, Tensor::zeros(vec![1, 2, 2, 2])).is_err());
    }

    #[test]
    fn checksum_tracks_values() {
        let a = sample();
        let mut b = a.clone();
        assert_eq!(a.checksum(), b.checksum());
        b.get_mut("w").unwrap().tensor.data_mut()[0] += 1e-12;
        assert_ne!(a.checksum(), b.checksum());
    }
}
