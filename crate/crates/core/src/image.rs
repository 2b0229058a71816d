//! Dense 2D pixel buffers shared by every pass.
//!
//! Buffers are row-major. Parallel construction splits work by rows, and
//! every pixel is computed independently, so the result never depends on
//! how many workers run it.

use glam::{Vec2, Vec3, Vec4};
use rayon::prelude::*;

/// Linear-light RGB color.
pub type Rgb = Vec3;

/// A row-major 2D buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Image<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "buffer length mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    /// Sequential construction, mostly for tests and small buffers.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn pixels(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn pixels_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    /// Fetch with clamp-to-edge addressing.
    #[inline]
    pub fn get_clamped(&self, x: i64, y: i64) -> T {
        let cx = x.clamp(0, self.width as i64 - 1) as usize;
        let cy = y.clamp(0, self.height as i64 - 1) as usize;
        self.data[cy * self.width + cx]
    }

    #[inline]
    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copy of the rectangle `[x0, x0+w) × [y0, y0+h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Image<T> {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop out of bounds");
        Image::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y))
    }
}

impl<T: Copy + Send + Sync> Image<T> {
    /// Pixel-parallel construction; `f` receives `(x, y)`.
    pub fn par_from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> T + Sync) -> Self
    where
        T: Default,
    {
        let mut data = vec![T::default(); width * height];
        if width > 0 {
            data.par_chunks_mut(width)
                .enumerate()
                .for_each(|(y, row)| {
                    for (x, px) in row.iter_mut().enumerate() {
                        *px = f(x, y);
                    }
                });
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn par_map<U: Copy + Send + Sync + Default>(&self, f: impl Fn(T) -> U + Sync) -> Image<U> {
        Image::par_from_fn(self.width, self.height, |x, y| f(self.get(x, y)))
    }
}

/// Values that can be linearly interpolated for bilinear fetches.
pub trait Lerp: Copy {
    fn lerp_to(self, other: Self, t: f32) -> Self;
    fn scaled(self, s: f32) -> Self;
    fn add(self, other: Self) -> Self;
    fn zero() -> Self;
}

impl Lerp for f32 {
    #[inline]
    fn lerp_to(self, other: Self, t: f32) -> Self {
        self + (other - self) * t
    }
    #[inline]
    fn scaled(self, s: f32) -> Self {
        self * s
    }
    #[inline]
    fn add(self, other: Self) -> Self {
        self + other
    }
    #[inline]
    fn zero() -> Self {
        0.0
    }
}

macro_rules! impl_lerp_vec {
    ($t:ty) => {
        impl Lerp for $t {
            #[inline]
            fn lerp_to(self, other: Self, t: f32) -> Self {
                self + (other - self) * t
            }
            #[inline]
            fn scaled(self, s: f32) -> Self {
                self * s
            }
            #[inline]
            fn add(self, other: Self) -> Self {
                self + other
            }
            #[inline]
            fn zero() -> Self {
                <$t>::ZERO
            }
        }
    };
}

impl_lerp_vec!(Vec2);
impl_lerp_vec!(Vec3);
impl_lerp_vec!(Vec4);

impl<T: Lerp> Image<T> {
    /// Bilinear fetch at continuous pixel coordinates where integer
    /// coordinates address pixel centers. Clamp-to-edge.
    pub fn sample_bilinear(&self, x: f32, y: f32) -> T {
        let x = x.clamp(0.0, (self.width - 1) as f32);
        let y = y.clamp(0.0, (self.height - 1) as f32);
        let x0 = x.floor();
        let y0 = y.floor();
        let tx = x - x0;
        let ty = y - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let a = self.get_clamped(x0, y0);
        let b = self.get_clamped(x0 + 1, y0);
        let c = self.get_clamped(x0, y0 + 1);
        let d = self.get_clamped(x0 + 1, y0 + 1);
        a.lerp_to(b, tx).lerp_to(c.lerp_to(d, tx), ty)
    }
}

/// Rec. 709 luminance.
#[inline]
pub fn luminance(c: Rgb) -> f32 {
    0.2126 * c.x + 0.7152 * c.y + 0.0722 * c.z
}

/// Half-resolution dimensions: `ceil(n / 2)`.
#[inline]
pub fn half_dims(width: usize, height: usize) -> (usize, usize) {
    (width.div_ceil(2), height.div_ceil(2))
}

/// Bilinear upsample of a half-resolution buffer onto a full-resolution grid.
pub fn upsample_half<T: Lerp + Send + Sync + Default>(half: &Image<T>, width: usize, height: usize) -> Image<T> {
    Image::par_from_fn(width, height, |x, y| {
        let hx = (x as f32 + 0.5) * 0.5 - 0.5;
        let hy = (y as f32 + 0.5) * 0.5 - 0.5;
        half.sample_bilinear(hx, hy)
    })
}

/// Normalized 5×5 Gaussian (σ = 1) taps.
pub fn gaussian5_weights() -> [[f32; 5]; 5] {
    let mut w = [[0.0f32; 5]; 5];
    let mut sum = 0.0f32;
    for (j, row) in w.iter_mut().enumerate() {
        for (i, v) in row.iter_mut().enumerate() {
            let dx = i as f32 - 2.0;
            let dy = j as f32 - 2.0;
            *v = (-(dx * dx + dy * dy) / 2.0).exp();
            sum += *v;
        }
    }
    for row in w.iter_mut() {
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    w
}

/// 5×5 Gaussian blur (σ = 1), clamp-to-edge.
pub fn gaussian_blur5<T: Lerp + Send + Sync + Default>(img: &Image<T>) -> Image<T> {
    let w = gaussian5_weights();
    Image::par_from_fn(img.width(), img.height(), |x, y| {
        let mut acc = T::zero();
        for (j, row) in w.iter().enumerate() {
            for (i, &wt) in row.iter().enumerate() {
                let v = img.get_clamped(x as i64 + i as i64 - 2, y as i64 + j as i64 - 2);
                acc = acc.add(v.scaled(wt));
            }
        }
        acc
    })
}

/// Quantize linear RGB to 8-bit (clamped, no transfer curve).
pub fn to_rgb8(img: &Image<Rgb>) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.len() * 3);
    for c in img.pixels() {
        for v in [c.x, c.y, c.z] {
            out.push((v.clamp(0.0, 1.0) * 255.0 + 0.5) as u8);
        }
    }
    out
}

/// Grayscale visualization of a scalar buffer mapped from `[lo, hi]`.
pub fn scalar_to_rgb(img: &Image<f32>, lo: f32, hi: f32) -> Image<Rgb> {
    let span = (hi - lo).max(f32::MIN_POSITIVE);
    img.map(|v| {
        let t = if v.is_finite() { ((v - lo) / span).clamp(0.0, 1.0) } else { 1.0 };
        Vec3::splat(t)
    })
}

/// Portable float map (PFM) encoding of an RGB buffer, bottom-to-top rows,
/// little-endian.
pub fn encode_pfm(img: &Image<Rgb>) -> Vec<u8> {
    let mut out = format!("PF\n{} {}\n-1.0\n", img.width(), img.height()).into_bytes();
    for y in (0..img.height()).rev() {
        for x in 0..img.width() {
            let c = img.get(x, y);
            for v in [c.x, c.y, c.z] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

/// Inverse of [`encode_pfm`] for little-endian color maps.
pub fn decode_pfm(bytes: &[u8]) -> Option<Image<Rgb>> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return None;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).ok()?);
    }
    pos += 1;
    if fields[0] != "PF" {
        return None;
    }
    let w: usize = fields[1].parse().ok()?;
    let h: usize = fields[2].parse().ok()?;
    let scale: f32 = fields[3].parse().ok()?;
    if scale >= 0.0 {
        return None;
    }
    let body = bytes.get(pos..)?;
    if body.len() < w * h * 12 {
        return None;
    }
    let mut img = Image::filled(w, h, Vec3::ZERO);
    let mut vals = body.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
    for y in (0..h).rev() {
        for x in 0..w {
            let r = vals.next()?;
            let g = vals.next()?;
            let b = vals.next()?;
            img.set(x, y, Vec3::new(r, g, b));
        }
    }
    Some(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_hits_centers_exactly() {
        let img = Image::from_fn(4, 3, |x, y| (x + 10 * y) as f32);
        assert_eq!(img.sample_bilinear(2.0, 1.0), 12.0);
        assert_eq!(img.sample_bilinear(2.5, 1.0), 12.5);
        assert_eq!(img.sample_bilinear(-3.0, 0.0), 0.0);
    }

    #[test]
    fn gaussian_weights_normalized() {
        let s: f32 = gaussian5_weights().iter().flatten().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn pfm_round_trip() {
        let img = Image::from_fn(3, 2, |x, y| Vec3::new(x as f32, y as f32, 0.25));
        let back = decode_pfm(&encode_pfm(&img)).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn par_and_seq_construction_agree() {
        let f = |x: usize, y: usize| (x * 7 + y * 13) as f32;
        assert_eq!(Image::par_from_fn(17, 9, f), Image::from_fn(17, 9, f));
    }
}
