//! Frequency-guided memory preservation.
//!
//! Every weight tensor is viewed as a 2-D real matrix (convolution kernels
//! are unfolded, dense weights are used as-is, biases become a single row),
//! transformed with a 2-D DFT and split into amplitude and phase. The
//! low-frequency amplitudes of the trained model replace those of the model
//! being unlearned inside a centered rectangular mask; the phase of the
//! model being unlearned is kept, and the result is transformed back.
//!
//! The mask is defined on the centered (shifted) spectrum so that its center
//! is the DC term. Before blending it is closed under `k -> -k` so that the
//! blended spectrum stays conjugate-symmetric and the inverse transform is
//! real.

pub mod fft;

use num_complex::Complex64;

use crate::tensor::{ConvDims, ParamEntry, ParamKind, ParameterSet, Tensor};
use crate::{Error, Result};
use fft::Direction;

/// Maximum tolerated imaginary part after the inverse transform, relative to
/// `max(1, max |w|)`.
pub const IMAGINARY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows == 0 || cols == 0 || rows * cols != data.len() {
            return Err(Error::InvalidArgument(format!(
                "complex matrix {rows}x{cols} with {} entries",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }
}

fn matrix_dims(m: &Tensor) -> Result<(usize, usize)> {
    match *m.shape() {
        [r, c] => Ok((r, c)),
        [n] => Ok((1, n)),
        ref s => Err(Error::InvalidArgument(format!(
            "expected a 1-D or 2-D real matrix, got shape {s:?}"
        ))),
    }
}

fn transform_2d(rows: usize, cols: usize, data: &mut [Complex64], dir: Direction) {
    for row in data.chunks_mut(cols) {
        fft::transform(row, dir);
    }
    if rows > 1 {
        let mut column = vec![Complex64::new(0.0, 0.0); rows];
        for c in 0..cols {
            for r in 0..rows {
                column[r] = data[r * cols + c];
            }
            fft::transform(&mut column, dir);
            for r in 0..rows {
                data[r * cols + c] = column[r];
            }
        }
    }
}

/// Unnormalized forward 2-D DFT of a real matrix (a 1-D tensor is one row).
pub fn fft2(m: &Tensor) -> Result<ComplexMatrix> {
    let (rows, cols) = matrix_dims(m)?;
    let mut data: Vec<Complex64> = m.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform_2d(rows, cols, &mut data, Direction::Forward);
    ComplexMatrix::new(rows, cols, data)
}

/// Inverse 2-D DFT with `1/(rows*cols)` normalization.
///
/// Returns the real part as a `rows x cols` matrix together with the largest
/// discarded imaginary magnitude.
pub fn ifft2(c: &ComplexMatrix) -> (Tensor, f64) {
    let mut data = c.data.clone();
    transform_2d(c.rows, c.cols, &mut data, Direction::Inverse);
    let scale = 1.0 / (c.rows * c.cols) as f64;
    let residue = data.iter().map(|v| (v.im * scale).abs()).fold(0.0, f64::max);
    let real = data.iter().map(|v| v.re * scale).collect();
    (
        Tensor::new(vec![c.rows, c.cols], real).expect("dims from a valid matrix"),
        residue,
    )
}

/// Polar form of a spectrum; phase lies in `(-pi, pi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudePhase {
    pub rows: usize,
    pub cols: usize,
    pub amplitude: Vec<f64>,
    pub phase: Vec<f64>,
}

pub fn decompose(c: &ComplexMatrix) -> AmplitudePhase {
    let (amplitude, phase) = c
        .data
        .iter()
        .map(|z| {
            let a = z.norm();
            if a == 0.0 {
                return (0.0, 0.0);
            }
            let mut p = z.im.atan2(z.re);
            if p <= -std::f64::consts::PI {
                p = std::f64::consts::PI;
            }
            (a, p)
        })
        .unzip();
    AmplitudePhase {
        rows: c.rows,
        cols: c.cols,
        amplitude,
        phase,
    }
}

pub fn recompose(ap: &AmplitudePhase) -> ComplexMatrix {
    let data = ap
        .amplitude
        .iter()
        .zip(&ap.phase)
        .map(|(&a, &p)| Complex64::from_polar(a, p))
        .collect();
    ComplexMatrix {
        rows: ap.rows,
        cols: ap.cols,
        data,
    }
}

/// Binary low-frequency selector in centered-spectrum coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyMask {
    pub rows: usize,
    pub cols: usize,
    pub ratio: f64,
    bits: Vec<bool>,
}

/// `floor(r * n)`, guarded against `r * n` landing a hair below an integer.
fn band(r: f64, n: usize) -> usize {
    let x = r * n as f64;
    let f = x.floor();
    let b = if (x - (f + 1.0)).abs() < 1e-9 { f + 1.0 } else { f };
    (b as usize).min(n)
}

fn check_ratio(r: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::InvalidArgument(format!(
            "low-frequency ratio {r} outside [0, 1]"
        )));
    }
    Ok(())
}

impl FrequencyMask {
    /// Centered `floor(r*rows) x floor(r*cols)` rectangle of ones.
    pub fn build(rows: usize, cols: usize, r: f64) -> Result<Self> {
        check_ratio(r)?;
        Ok(Self::with_extent(rows, cols, band(r, rows), band(r, cols), r))
    }

    /// 1-D variant used for vectors: all rows, `floor(r*cols)` centered columns.
    pub fn build_1d(len: usize, r: f64) -> Result<Self> {
        check_ratio(r)?;
        Ok(Self::with_extent(1, len, 1, band(r, len), r))
    }

    fn with_extent(rows: usize, cols: usize, h: usize, w: usize, ratio: f64) -> Self {
        let mut bits = vec![false; rows * cols];
        if h > 0 && w > 0 {
            let r0 = rows / 2 - h / 2;
            let c0 = cols / 2 - w / 2;
            for r in r0..r0 + h {
                bits[r * cols + c0..r * cols + c0 + w].fill(true);
            }
        }
        Self {
            rows,
            cols,
            ratio,
            bits,
        }
    }

    /// Mask bit at centered coordinates.
    pub fn bit(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.cols + c]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> FrequencyMask {
        FrequencyMask {
            bits: self.bits.iter().map(|b| !b).collect(),
            ..self.clone()
        }
    }

    /// Mask in natural DFT ordering (DC at index 0): undoes the centering shift.
    pub fn unshifted(&self) -> Vec<bool> {
        let (rows, cols) = (self.rows, self.cols);
        let mut out = vec![false; rows * cols];
        for k1 in 0..rows {
            let r = (k1 + rows / 2) % rows;
            for k2 in 0..cols {
                let c = (k2 + cols / 2) % cols;
                out[k1 * cols + k2] = self.bits[r * cols + c];
            }
        }
        out
    }

    /// Natural-order mask closed under `k -> -k`.
    pub fn symmetric_unshifted(&self) -> Vec<bool> {
        let (rows, cols) = (self.rows, self.cols);
        let nat = self.unshifted();
        let mut out = nat.clone();
        for k1 in 0..rows {
            for k2 in 0..cols {
                let m1 = (rows - k1) % rows;
                let m2 = (cols - k2) % cols;
                out[k1 * cols + k2] |= nat[m1 * cols + m2];
            }
        }
        out
    }
}

/// Unfolds `[N, H, d1, d2]` into `(d1*N) x (d2*H)` with
/// `row = n*d1 + x`, `col = h*d2 + y`.
pub fn reshape_2d(w: &Tensor, dims: &ConvDims) -> Result<Tensor> {
    if w.shape() != dims.shape().as_slice() {
        return Err(Error::InvalidArgument(format!(
            "conv tensor shape {:?} disagrees with dims {:?}",
            w.shape(),
            dims.shape()
        )));
    }
    let ConvDims {
        in_channels: nn,
        out_channels: hh,
        d1,
        d2,
    } = *dims;
    let cols = d2 * hh;
    let mut out = vec![0.0; w.len()];
    let src = w.data();
    for n in 0..nn {
        for h in 0..hh {
            for x in 0..d1 {
                for y in 0..d2 {
                    out[(n * d1 + x) * cols + h * d2 + y] = src[((n * hh + h) * d1 + x) * d2 + y];
                }
            }
        }
    }
    Tensor::new(vec![d1 * nn, cols], out)
}

/// Inverse of [`reshape_2d`].
pub fn reshape_4d(m: &Tensor, dims: &ConvDims) -> Result<Tensor> {
    let ConvDims {
        in_channels: nn,
        out_channels: hh,
        d1,
        d2,
    } = *dims;
    if m.shape() != [d1 * nn, d2 * hh] {
        return Err(Error::InvalidArgument(format!(
            "matrix shape {:?} cannot fold into {:?}",
            m.shape(),
            dims.shape()
        )));
    }
    let cols = d2 * hh;
    let mut out = vec![0.0; m.len()];
    let src = m.data();
    for n in 0..nn {
        for h in 0..hh {
            for x in 0..d1 {
                for y in 0..d2 {
                    out[((n * hh + h) * d1 + x) * d2 + y] = src[(n * d1 + x) * cols + h * d2 + y];
                }
            }
        }
    }
    Tensor::new(dims.shape(), out)
}

/// Amplitude blend of two congruent real matrices under a natural-order mask.
/// Returns the blended matrix and the discarded imaginary residue.
fn blend_matrix(trained: &Tensor, unlearned: &Tensor, mask: &[bool]) -> Result<(Tensor, f64)> {
    let f_tr = fft2(trained)?;
    let f_un = fft2(unlearned)?;
    let mut ap = decompose(&f_un);
    for (i, a) in ap.amplitude.iter_mut().enumerate() {
        if mask[i] {
            *a = f_tr.data[i].norm();
        }
    }
    let (out, residue) = ifft2(&recompose(&ap));
    Ok((out, residue))
}

fn check_residue(name: &str, out: &Tensor, residue: f64) -> Result<()> {
    let scale = out.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if residue > IMAGINARY_TOLERANCE * scale {
        return Err(Error::ImaginaryResidue {
            name: name.to_string(),
            residue,
        });
    }
    Ok(())
}

/// Blends two congruent real matrices (or vectors); see the module docs.
///
/// Returns the blended values in the input's shape and the largest
/// imaginary magnitude discarded by the inverse transform.
pub fn fgmp_blend_with_residue(trained: &Tensor, unlearned: &Tensor, r: f64) -> Result<(Tensor, f64)> {
    if trained.shape() != unlearned.shape() {
        return Err(Error::Incongruent(format!(
            "{:?} vs {:?}",
            trained.shape(),
            unlearned.shape()
        )));
    }
    let (rows, cols) = matrix_dims(trained)?;
    let mask = if trained.shape().len() == 1 {
        FrequencyMask::build_1d(cols, r)?
    } else {
        FrequencyMask::build(rows, cols, r)?
    };
    let (out, residue) = blend_matrix(trained, unlearned, &mask.symmetric_unshifted())?;
    let out = Tensor::new(trained.shape().to_vec(), out.into_data())?;
    Ok((out, residue))
}

/// [`fgmp_blend_with_residue`] that rejects a non-negligible imaginary residue.
pub fn fgmp_blend(trained: &Tensor, unlearned: &Tensor, r: f64) -> Result<Tensor> {
    let (out, residue) = fgmp_blend_with_residue(trained, unlearned, r)?;
    check_residue("matrix", &out, residue)?;
    Ok(out)
}

/// Blends one parameter entry, unfolding convolution kernels first.
pub fn fgmp_blend_entry(trained: &ParamEntry, unlearned: &ParamEntry, r: f64) -> Result<Tensor> {
    match (trained.kind, trained.conv) {
        (ParamKind::ConvWeight, Some(dims)) => {
            let a = reshape_2d(&trained.tensor, &dims)?;
            let b = reshape_2d(&unlearned.tensor, &dims)?;
            reshape_4d(&fgmp_blend(&a, &b, r)?, &dims)
        }
        (ParamKind::ConvWeight, None) => Err(Error::InvalidArgument(
            "conv weight without declared dims".into(),
        )),
        _ => match trained.tensor.shape().len() {
            1 | 2 => fgmp_blend(&trained.tensor, &unlearned.tensor, r),
            _ => {
                // treat higher-rank tensors as [lead, rest]
                let shape = trained.tensor.shape().to_vec();
                let lead = shape[0];
                let rest = trained.tensor.len() / lead;
                let a = Tensor::new(vec![lead, rest], trained.tensor.data().to_vec())?;
                let b = Tensor::new(vec![lead, rest], unlearned.tensor.data().to_vec())?;
                Tensor::new(shape, fgmp_blend(&a, &b, r)?.into_data())
            }
        },
    }
}

/// Builds `M'_un`: every entry of `unlearned` gets the low-frequency
/// amplitudes of the matching entry in `trained`.
pub fn fgmp_apply(trained: &ParameterSet, unlearned: &ParameterSet, r: f64) -> Result<ParameterSet> {
    check_ratio(r)?;
    trained.ensure_congruent(unlearned)?;
    let mut out = unlearned.clone();
    for ((name, tr), (_, dst)) in trained.iter().zip(out.iter_mut()) {
        let blended = fgmp_blend_entry(tr, dst, r).map_err(|e| match e {
            Error::ImaginaryResidue { residue, .. } => Error::ImaginaryResidue {
                name: name.clone(),
                residue,
            },
            other => other,
        })?;
        dst.tensor = blended;
    }
    Ok(out)
}
