//! Dense raster math shared by every stage of the explainer.
//!
//! Rasters are stored row-major in `f64`. Every constructor rejects
//! non-finite samples, and every operation here maps finite inputs to finite
//! outputs, so downstream code never has to re-check.

use crate::error::{CamError, Result};

/// A dense single-channel raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Grid2D {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(CamError::invalid(format!(
                "grid dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(CamError::invalid(format!(
                "grid {width}x{height} needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(CamError::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// # Panics
    /// Panics if either dimension is zero.
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "grid dimensions must be positive");
        assert!(value.is_finite());
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    /// Builds a grid by evaluating `f(x, y)` at every pixel.
    ///
    /// # Panics
    /// Panics on zero dimensions or if `f` returns a non-finite value.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "grid dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                assert!(v.is_finite(), "non-finite sample at ({x}, {y})");
                data.push(v);
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub(crate) fn set(&mut self, x: usize, y: usize, v: f64) {
        debug_assert!(v.is_finite());
        self.data[y * self.width + x] = v;
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Index of the largest sample as `(x, y)`; first occurrence wins.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid2D {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Grid2D {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn relu(&self) -> Grid2D {
        self.map(|v| v.max(0.0))
    }

    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }
}

/// Three same-sized planes (R, G, B), values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    planes: [Grid2D; 3],
}

impl RgbImage {
    pub fn new(r: Grid2D, g: Grid2D, b: Grid2D) -> Result<Self> {
        if r.dims() != g.dims() || r.dims() != b.dims() {
            return Err(CamError::invalid("image planes differ in size"));
        }
        Ok(Self { planes: [r, g, b] })
    }

    pub fn black(width: usize, height: usize) -> Self {
        let z = Grid2D::zeros(width, height);
        Self {
            planes: [z.clone(), z.clone(), z],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Self {
        let mut r = Vec::with_capacity(width * height);
        let mut g = Vec::with_capacity(width * height);
        let mut b = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let [pr, pg, pb] = f(x, y);
                r.push(pr);
                g.push(pg);
                b.push(pb);
            }
        }
        let mk = |d| Grid2D::new(width, height, d).expect("pixel closure produced invalid data");
        Self {
            planes: [mk(r), mk(g), mk(b)],
        }
    }

    pub fn width(&self) -> usize {
        self.planes[0].width()
    }

    pub fn height(&self) -> usize {
        self.planes[0].height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.planes[0].dims()
    }

    pub fn planes(&self) -> &[Grid2D; 3] {
        &self.planes
    }

    pub fn red(&self) -> &Grid2D {
        &self.planes[0]
    }

    pub fn green(&self) -> &Grid2D {
        &self.planes[1]
    }

    pub fn blue(&self) -> &Grid2D {
        &self.planes[2]
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        [
            self.planes[0].get(x, y),
            self.planes[1].get(x, y),
            self.planes[2].get(x, y),
        ]
    }
}

/// An ordered set of same-sized rasters.
///
/// A stack may hold zero channels (e.g. after every channel has been
/// suppressed); it still remembers its raster size.
#[derive(Debug, Clone, PartialEq)]
pub struct GridStack {
    width: usize,
    height: usize,
    grids: Vec<Grid2D>,
}

impl GridStack {
    pub fn new(grids: Vec<Grid2D>) -> Result<Self> {
        let first = grids
            .first()
            .ok_or_else(|| CamError::invalid("cannot infer size of an empty stack"))?;
        let (width, height) = first.dims();
        Self::with_dims(width, height, grids)
    }

    pub fn with_dims(width: usize, height: usize, grids: Vec<Grid2D>) -> Result<Self> {
        if let Some(i) = grids.iter().position(|g| g.dims() != (width, height)) {
            return Err(CamError::invalid(format!(
                "channel {i} is {}x{}, stack is {width}x{height}",
                grids[i].width(),
                grids[i].height()
            )));
        }
        Ok(Self {
            width,
            height,
            grids,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            grids: Vec::new(),
        }
    }

    pub fn channels(&self) -> usize {
        self.grids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grids.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn grids(&self) -> &[Grid2D] {
        &self.grids
    }

    pub fn get(&self, channel: usize) -> &Grid2D {
        &self.grids[channel]
    }

    pub fn into_grids(self) -> Vec<Grid2D> {
        self.grids
    }

    /// Keeps the channels at `indices`, in the order given.
    pub fn select(&self, indices: &[usize]) -> Result<GridStack> {
        let grids = indices
            .iter()
            .map(|&i| {
                self.grids.get(i).cloned().ok_or_else(|| {
                    CamError::invalid(format!("channel {i} out of range ({})", self.channels()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GridStack {
            width: self.width,
            height: self.height,
            grids,
        })
    }
}

/// A discrete probability distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    values: Vec<f64>,
}

impl ProbVector {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(CamError::invalid("empty distribution"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(CamError::invalid(
                "distribution has negative or non-finite mass",
            ));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(CamError::invalid(format!("distribution sums to {sum}")));
        }
        Ok(Self { values })
    }

    /// Min-shift, add `epsilon`, renormalize. Handles negative samples.
    pub fn from_samples(samples: &[f64], epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(CamError::invalid(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        if samples.is_empty() {
            return Err(CamError::invalid("empty distribution"));
        }
        let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let shifted: Vec<f64> = samples.iter().map(|&v| v - min + epsilon).collect();
        let total: f64 = shifted.iter().sum();
        Ok(Self {
            values: shifted.into_iter().map(|v| v / total).collect(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Bilinear resampling with half-pixel-centre mapping.
///
/// Output pixel `d` samples the source at `(d + 0.5) * src/dst - 0.5`, clamped
/// to the valid source range. Only upsampling is supported.
pub fn bilinear_upsample(src: &Grid2D, target_w: usize, target_h: usize) -> Result<Grid2D> {
    if target_w == 0 || target_h == 0 {
        return Err(CamError::invalid(format!(
            "zero-sized upsample target {target_w}x{target_h}"
        )));
    }
    if target_w < src.width() || target_h < src.height() {
        return Err(CamError::invalid(format!(
            "upsample target {target_w}x{target_h} smaller than source {}x{}",
            src.width(),
            src.height()
        )));
    }
    let xs = axis_taps(src.width(), target_w);
    let ys = axis_taps(src.height(), target_h);
    let mut data = Vec::with_capacity(target_w * target_h);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src.get(x0, y0) * (1.0 - fx) + src.get(x1, y0) * fx;
            let bottom = src.get(x0, y1) * (1.0 - fx) + src.get(x1, y1) * fx;
            data.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Grid2D::new(target_w, target_h, data)
}

/// Per-output-index `(lo, hi, frac)` taps along one axis.
fn axis_taps(src_len: usize, dst_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = src_len as f64 / dst_len as f64;
    let last = (src_len - 1) as f64;
    (0..dst_len)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src_len - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

/// Affine rescale to `[0, 1]`; a constant grid maps to all zeros.
pub fn minmax_normalize(g: &Grid2D) -> Grid2D {
    let (min, max) = (g.min(), g.max());
    let range = max - min;
    if range > 0.0 {
        g.map(|v| ((v - min) / range).clamp(0.0, 1.0))
    } else {
        g.map(|_| 0.0)
    }
}

/// Multiplies every image plane elementwise by `mask`.
pub fn hadamard_mask(image: &RgbImage, mask: &Grid2D) -> Result<RgbImage> {
    if mask.dims() != image.dims() {
        return Err(CamError::invalid(format!(
            "mask is {}x{}, image is {}x{}",
            mask.width(),
            mask.height(),
            image.width(),
            image.height()
        )));
    }
    let apply = |plane: &Grid2D| {
        let data = plane
            .data()
            .iter()
            .zip(mask.data())
            .map(|(p, m)| p * m)
            .collect();
        Grid2D::new(plane.width(), plane.height(), data)
    };
    RgbImage::new(
        apply(image.red())?,
        apply(image.green())?,
        apply(image.blue())?,
    )
}

/// Softmax across channels at every pixel, max-stabilized.
pub fn pixelwise_channel_softmax(stack: &GridStack) -> Result<GridStack> {
    if stack.is_empty() {
        return Err(CamError::invalid("softmax over an empty stack"));
    }
    let n = stack.width() * stack.height();
    let mut out: Vec<Vec<f64>> = vec![Vec::with_capacity(n); stack.channels()];
    let mut exps = vec![0.0f64; stack.channels()];
    for i in 0..n {
        let max = stack
            .grids()
            .iter()
            .map(|g| g.data()[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (e, g) in exps.iter_mut().zip(stack.grids()) {
            *e = (g.data()[i] - max).exp();
            total += *e;
        }
        for (o, e) in out.iter_mut().zip(&exps) {
            o.push(e / total);
        }
    }
    let grids = out
        .into_iter()
        .map(|d| Grid2D::new(stack.width(), stack.height(), d))
        .collect::<Result<Vec<_>>>()?;
    GridStack::with_dims(stack.width(), stack.height(), grids)
}

/// Softmax of a plain score vector, max-stabilized.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Flattens a raster into a distribution over its pixels.
pub fn to_distribution(g: &Grid2D, epsilon: f64) -> Result<ProbVector> {
    ProbVector::from_samples(g.data(), epsilon)
}

/// `KL(p || q) = sum p_i ln(p_i / q_i)`, with `0 ln 0 = 0`.
pub fn kl_divergence(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(CamError::invalid(format!(
            "distribution lengths differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    let mut acc = 0.0;
    for (&pi, &qi) in p.values().iter().zip(q.values()) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(CamError::invalid(
                    "reference distribution has zero mass where p > 0",
                ));
            }
            acc += pi * (pi / qi).ln();
        }
    }
    // Gibbs: the true value is nonnegative; only rounding can push it below.
    Ok(acc.max(0.0))
}
