//! Hypercube and pixel-spectra containers.
//!
//! A [`HyperCube`] stores `bands × height × width` samples band-major, then
//! row-major, so each band is a contiguous `height × width` image. Viewing a
//! cube as a [`SpectrumBatch`] gives one row per pixel, pixel `(r, c)` at row
//! `r * width + c`.

mod io;
mod wald;

pub use io::{load_cube, load_matrix_csv, load_spectra_csv, save_cube, save_matrix_csv, save_spectra_csv};
pub use wald::{minmax_scale, split_top_bottom, wald_synthesize, Observations};

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    data: Array3<f64>,
}

impl HyperCube {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (b, h, w) = data.dim();
        if b == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!("empty cube {b}x{h}x{w}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("cube contains non-finite values".into()));
        }
        Ok(Self {
            data: data.as_standard_layout().into_owned(),
        })
    }

    pub fn from_vec(bands: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        let n = bands
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Error::DimensionOverflow(format!("{bands}x{height}x{width}")))?;
        if values.len() != n {
            return Err(shape_err("HyperCube::from_vec", n, values.len()));
        }
        Self::new(Array3::from_shape_vec((bands, height, width), values).expect("length checked"))
    }

    pub fn filled(bands: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(Array3::from_elem((bands, height, width), value))
    }

    pub fn zeros(bands: usize, height: usize, width: usize) -> Self {
        assert!(bands > 0 && height > 0 && width > 0, "empty cube");
        Self {
            data: Array3::zeros((bands, height, width)),
        }
    }

    pub fn bands(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn pixels(&self) -> usize {
        self.height() * self.width()
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    /// Mutable access; callers keep the values finite.
    pub fn data_mut(&mut self) -> &mut Array3<f64> {
        &mut self.data
    }

    pub fn into_inner(self) -> Array3<f64> {
        self.data
    }

    pub fn as_slice(&self) -> &[f64] {
        self.data.as_slice().expect("standard layout")
    }

    pub fn as_slice_mut(&mut self) -> &mut [f64] {
        self.data.as_slice_mut().expect("standard layout")
    }

    pub fn band(&self, b: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(0), b)
    }

    pub fn same_shape(&self, other: &HyperCube) -> bool {
        self.dims() == other.dims()
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &HyperCube) -> f64 {
        self.as_slice().iter().zip(other.as_slice()).map(|(a, b)| a * b).sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.as_slice().iter().map(|v| v * v).sum()
    }

    pub fn mean_square(&self) -> f64 {
        self.sum_squares() / self.data.len() as f64
    }

    /// `self - other`, shapes must agree.
    pub fn sub(&self, other: &HyperCube) -> Result<HyperCube> {
        if !self.same_shape(other) {
            return Err(shape_err("HyperCube::sub", fmt_dims(self.dims()), fmt_dims(other.dims())));
        }
        Ok(HyperCube {
            data: &self.data - &other.data,
        })
    }

    /// Spatial crop `rows × cols` starting at `(row0, col0)`, all bands.
    pub fn crop(&self, row0: usize, col0: usize, rows: usize, cols: usize) -> Result<HyperCube> {
        if rows == 0 || cols == 0 || row0 + rows > self.height() || col0 + cols > self.width() {
            return Err(Error::InvalidArgument(format!(
                "crop {rows}x{cols}@({row0},{col0}) outside {}x{}",
                self.height(),
                self.width()
            )));
        }
        let view = self
            .data
            .slice(ndarray::s![.., row0..row0 + rows, col0..col0 + cols]);
        HyperCube::new(view.to_owned())
    }
}

pub(crate) fn fmt_dims((b, h, w): (usize, usize, usize)) -> String {
    format!("{b}x{h}x{w}")
}

/// `count × bands` matrix, one spectrum per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumBatch {
    data: Array2<f64>,
}

impl SpectrumBatch {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "empty spectrum batch {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("spectra contain non-finite values".into()));
        }
        Ok(Self {
            data: data.as_standard_layout().into_owned(),
        })
    }

    pub fn count(&self) -> usize {
        self.data.nrows()
    }

    pub fn bands(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }

    /// Rows by index, in the given order.
    pub fn select(&self, rows: &[usize]) -> SpectrumBatch {
        SpectrumBatch {
            data: self.data.select(Axis(0), rows),
        }
    }

    /// Per-band mean spectrum.
    pub fn mean_spectrum(&self) -> Vec<f64> {
        self.data
            .mean_axis(Axis(0))
            .expect("non-empty batch")
            .to_vec()
    }
}

/// Pixel spectra of a cube; pixel `(r, c)` becomes row `r * width + c`.
pub fn cube_to_spectra(cube: &HyperCube) -> SpectrumBatch {
    let (b, h, w) = cube.dims();
    let flat = cube
        .data()
        .view()
        .into_shape_with_order((b, h * w))
        .expect("standard layout");
    SpectrumBatch {
        data: flat.t().as_standard_layout().into_owned(),
    }
}

/// Inverse of [`cube_to_spectra`].
pub fn spectra_to_cube(batch: &SpectrumBatch, height: usize, width: usize) -> Result<HyperCube> {
    if batch.count() != height * width {
        return Err(shape_err(
            "spectra_to_cube",
            format!("{} rows ({height}x{width})", height * width),
            batch.count(),
        ));
    }
    let b = batch.bands();
    let bands_major = batch.data().t().as_standard_layout().into_owned();
    let data = bands_major
        .into_shape_with_order((b, height, width))
        .expect("length checked");
    HyperCube::new(data)
}

/// Same as [`spectra_to_cube`] for a raw pixel-major matrix.
pub(crate) fn matrix_to_cube(m: &Array2<f64>, height: usize, width: usize) -> Result<HyperCube> {
    spectra_to_cube(&SpectrumBatch { data: m.clone() }, height, width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(b: usize, h: usize, w: usize) -> HyperCube {
        HyperCube::from_vec(b, h, w, (0..b * h * w).map(|i| i as f64 / 100.0).collect()).unwrap()
    }

    #[test]
    fn single_pixel_two_bands() {
        let c = HyperCube::from_vec(2, 1, 1, vec![0.2, 0.7]).unwrap();
        let s = cube_to_spectra(&c);
        assert_eq!(s.count(), 1);
        assert_eq!(s.data().row(0).to_vec(), vec![0.2, 0.7]);
    }

    #[test]
    fn pixel_row_mapping() {
        let c = ramp(3, 2, 2);
        let s = cube_to_spectra(&c);
        // pixel (1, 0) → row 2
        for b in 0..3 {
            assert_eq!(s.data()[[2, b]], c.data()[[b, 1, 0]]);
        }
    }

    #[test]
    fn count_mismatch() {
        let s = cube_to_spectra(&ramp(3, 2, 2));
        assert!(matches!(spectra_to_cube(&s, 3, 2), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(HyperCube::from_vec(0, 1, 1, vec![]).is_err());
        assert!(HyperCube::from_vec(1, 1, 1, vec![f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn reshape_round_trip(b in 1usize..6, h in 1usize..5, w in 1usize..5) {
            let c = ramp(b, h, w);
            let back = spectra_to_cube(&cube_to_spectra(&c), h, w).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
