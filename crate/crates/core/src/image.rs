//! RGB rasters and the pixel-level similarity and difference metrics used to
//! filter candidate pairs.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

pub const CHANNELS: usize = 3;
/// Smallest side accepted for an [`Image`]; one full SSIM window.
pub const MIN_SIDE: usize = 8;
/// Side of the non-overlapping SSIM windows.
pub const SSIM_WINDOW: usize = 8;
pub const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
pub const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);
/// Default per-pixel intensity threshold for [`diff_ratio`].
pub const DEFAULT_PIXEL_THRESHOLD: f64 = 30.0;

/// Dense row-major 8-bit RGB raster.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl core::fmt::Debug for Image {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "Image({}x{})", self.width, self.height)
    }
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width < MIN_SIDE || height < MIN_SIDE {
            return Err(Error::InvalidImage(format!(
                "{width}x{height} is smaller than {MIN_SIDE}x{MIN_SIDE}"
            )));
        }
        if data.len() != width * height * CHANNELS {
            return Err(Error::InvalidImage(format!(
                "expected {} samples for {width}x{height}, got {}",
                width * height * CHANNELS,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
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
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        self.data[i..i + CHANNELS].copy_from_slice(&rgb);
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_dims(&self, other: &Image) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::SizeMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ))
        }
    }

    /// ITU-R BT.601 luma per pixel, unrounded.
    pub fn luma(&self) -> Vec<f64> {
        self.data
            .chunks_exact(CHANNELS)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    }

    /// Order-sensitive FNV-1a digest of dimensions and samples, for golden tests.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for b in (self.width as u32).to_le_bytes() {
            feed(b);
        }
        for b in (self.height as u32).to_le_bytes() {
            feed(b);
        }
        for &b in &self.data {
            feed(b);
        }
        h
    }
}

/// Mean SSIM over non-overlapping 8x8 windows of the BT.601 luma planes.
///
/// Partial windows at the right and bottom edges are ignored.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_dims(b)?;
    Ok(ssim_luma(&a.luma(), &b.luma(), a.width, a.height))
}

pub(crate) fn ssim_luma(la: &[f64], lb: &[f64], width: usize, height: usize) -> f64 {
    let wx = width / SSIM_WINDOW;
    let wy = height / SSIM_WINDOW;
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    for by in 0..wy {
        for bx in 0..wx {
            let (mut sa, mut sb) = (0.0, 0.0);
            for y in by * SSIM_WINDOW..(by + 1) * SSIM_WINDOW {
                let row = y * width;
                for x in bx * SSIM_WINDOW..(bx + 1) * SSIM_WINDOW {
                    sa += la[row + x];
                    sb += lb[row + x];
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let (mut vaa, mut vbb, mut vab) = (0.0, 0.0, 0.0);
            for y in by * SSIM_WINDOW..(by + 1) * SSIM_WINDOW {
                let row = y * width;
                for x in bx * SSIM_WINDOW..(bx + 1) * SSIM_WINDOW {
                    let da = la[row + x] - ma;
                    let db = lb[row + x] - mb;
                    vaa += da * da;
                    vbb += db * db;
                    vab += da * db;
                }
            }
            let (vaa, vbb, vab) = (vaa / n, vbb / n, vab / n);
            let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * vab + SSIM_C2);
            let den = (ma * ma + mb * mb + SSIM_C1) * (vaa + vbb + SSIM_C2);
            total += num / den;
        }
    }
    total / (wx * wy) as f64
}

/// Per-pixel channel-averaged absolute difference, `(|dr|+|dg|+|db|) / 3`.
pub fn diff_map(a: &Image, b: &Image) -> Result<Vec<f64>> {
    a.check_dims(b)?;
    Ok(a
        .data
        .chunks_exact(CHANNELS)
        .zip(b.data.chunks_exact(CHANNELS))
        .map(|(p, q)| channel_sum_abs(p, q) as f64 / 3.0)
        .collect())
}

#[inline]
fn channel_sum_abs(p: &[u8], q: &[u8]) -> u32 {
    p.iter()
        .zip(q)
        .map(|(&x, &y)| (x as i32 - y as i32).unsigned_abs())
        .sum()
}

/// Fraction of pixels whose channel-averaged absolute difference is strictly
/// greater than `pixel_threshold`.
pub fn diff_ratio(a: &Image, b: &Image, pixel_threshold: f64) -> Result<f64> {
    a.check_dims(b)?;
    let differing = a
        .data
        .chunks_exact(CHANNELS)
        .zip(b.data.chunks_exact(CHANNELS))
        .filter(|(p, q)| channel_sum_abs(p, q) as f64 / 3.0 > pixel_threshold)
        .count();
    Ok(differing as f64 / a.pixel_count() as f64)
}

/// Plain per-sample mean squared error. Reported alongside the filters only.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_dims(b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data.len() as f64)
}

/// Axis-aligned source rectangle in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn full(img: &Image) -> Self {
        Rect { x: 0, y: 0, w: img.width, h: img.height }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && y >= self.y && x < self.x + self.w && y < self.y + self.h
    }
}

/// Bilinear resample of `rect` of `src` onto `out_w x out_h` using the
/// half-pixel-centre convention, sampling only inside `rect`.
pub(crate) fn resample_raw(
    src: &[u8],
    src_w: usize,
    rect: Rect,
    out_w: usize,
    out_h: usize,
) -> Vec<u8> {
    let sx = rect.w as f64 / out_w as f64;
    let sy = rect.h as f64 / out_h as f64;
    let max_x = (rect.w - 1) as f64;
    let max_y = (rect.h - 1) as f64;
    // Horizontal taps are shared by every output row.
    let taps_x: Vec<(usize, usize, f64)> = (0..out_w)
        .map(|dx| {
            let fx = ((dx as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
            let x0 = math::floor(fx) as usize;
            let x1 = (x0 + 1).min(rect.w - 1);
            (rect.x + x0, rect.x + x1, fx - x0 as f64)
        })
        .collect();
    let mut out = vec![0u8; out_w * out_h * CHANNELS];
    for dy in 0..out_h {
        let fy = ((dy as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
        let y0 = math::floor(fy) as usize;
        let y1 = (y0 + 1).min(rect.h - 1);
        let ty = fy - y0 as f64;
        let r0 = (rect.y + y0) * src_w;
        let r1 = (rect.y + y1) * src_w;
        for (dx, &(x0, x1, tx)) in taps_x.iter().enumerate() {
            let o = (dy * out_w + dx) * CHANNELS;
            for c in 0..CHANNELS {
                let p00 = src[(r0 + x0) * CHANNELS + c] as f64;
                let p01 = src[(r0 + x1) * CHANNELS + c] as f64;
                let p10 = src[(r1 + x0) * CHANNELS + c] as f64;
                let p11 = src[(r1 + x1) * CHANNELS + c] as f64;
                let top = p00 + (p01 - p00) * tx;
                let bot = p10 + (p11 - p10) * tx;
                out[o + c] = math::to_u8(top + (bot - top) * ty);
            }
        }
    }
    out
}

/// Bilinear resample of `rect` to `w x h`.
pub fn crop_resize(img: &Image, rect: Rect, w: usize, h: usize) -> Result<Image> {
    if rect.w == 0 || rect.h == 0 || rect.x + rect.w > img.width || rect.y + rect.h > img.height
    {
        return Err(Error::InvalidConfig(format!(
            "crop {rect:?} outside {}x{}",
            img.width, img.height
        )));
    }
    if rect.x == 0 && rect.y == 0 && rect.w == img.width && rect.h == img.height
        && w == img.width && h == img.height
    {
        return Ok(img.clone());
    }
    Image::new(w, h, resample_raw(&img.data, img.width, rect, w, h))
}

/// Bilinear resize of the whole image.
pub fn resize(img: &Image, w: usize, h: usize) -> Result<Image> {
    crop_resize(img, Rect::full(img), w, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gradient(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| [(x * 7 % 256) as u8, (y * 5 % 256) as u8, ((x + y) % 256) as u8])
            .unwrap()
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(Image::new(7, 8, vec![0; 7 * 8 * 3]).is_err());
        assert!(Image::new(8, 8, vec![0; 10]).is_err());
    }

    #[test]
    fn ssim_identity() {
        let a = gradient(32, 24);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_constant_black_vs_white_matches_closed_form() {
        let a = Image::filled(16, 16, [0, 0, 0]).unwrap();
        let b = Image::filled(16, 16, [255, 255, 255]).unwrap();
        let expected = SSIM_C1 / (255.0 * 255.0 + SSIM_C1);
        let got = ssim(&a, &b).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!((expected - 1.0e-4).abs() < 1e-6);
    }

    #[test]
    fn ssim_size_mismatch() {
        let a = gradient(16, 16);
        let b = gradient(16, 24);
        assert_eq!(ssim(&a, &b), Err(Error::SizeMismatch(16, 16, 16, 24)));
        assert!(diff_ratio(&a, &b, 30.0).is_err());
    }

    #[test]
    fn diff_ratio_counts_strictly_above_threshold() {
        let a = Image::filled(10, 10, [100, 100, 100]).unwrap();
        assert_eq!(diff_ratio(&a, &a, 30.0).unwrap(), 0.0);

        let mut b = a.clone();
        b.set_pixel(3, 4, [150, 150, 150]);
        assert!((diff_ratio(&a, &b, 30.0).unwrap() - 0.01).abs() < 1e-15);

        let mut c = a.clone();
        c.set_pixel(3, 4, [130, 130, 130]);
        assert_eq!(diff_ratio(&a, &c, 30.0).unwrap(), 0.0);
        // Averaged 30 exactly from uneven channels is still not counted.
        c.set_pixel(3, 4, [190, 100, 100]);
        assert_eq!(diff_ratio(&a, &c, 30.0).unwrap(), 0.0);
        c.set_pixel(3, 4, [191, 100, 100]);
        assert!((diff_ratio(&a, &c, 30.0).unwrap() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn mse_of_unit_offset() {
        let a = Image::filled(8, 8, [10, 10, 10]).unwrap();
        let b = Image::filled(8, 8, [12, 10, 10]).unwrap();
        assert!((mse(&a, &b).unwrap() - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let a = Image::filled(9, 13, [17, 200, 3]).unwrap();
        for (w, h) in [(8, 8), (40, 31), (100, 9)] {
            let r = resize(&a, w, h).unwrap();
            assert!(r.as_raw().chunks(3).all(|p| p == [17, 200, 3]));
        }
    }

    #[test]
    fn resize_same_size_is_identity() {
        let a = gradient(20, 11);
        assert_eq!(resize(&a, 20, 11).unwrap(), a);
        // The fast path is not what makes it exact: the sampler lands on centres.
        let raw = resample_raw(a.as_raw(), 20, Rect::full(&a), 20, 11);
        assert_eq!(raw, a.as_raw());
    }

    #[test]
    fn two_by_two_checker_averages_to_128() {
        // Hand arithmetic: the single output centre maps to source (0.5, 0.5),
        // weights 1/4 each over {0, 255, 255, 0} = 127.5, rounded half up.
        let src = [0, 0, 0, 255, 255, 255, 255, 255, 255, 0, 0, 0];
        let out = resample_raw(&src, 2, Rect { x: 0, y: 0, w: 2, h: 2 }, 1, 1);
        assert_eq!(out, [128, 128, 128]);

        // Same arithmetic on a valid-size image: 16x16 checker of period 2 to 8x8.
        let checker = Image::from_fn(16, 16, |x, y| {
            if (x + y) % 2 == 0 { [0, 0, 0] } else { [255, 255, 255] }
        })
        .unwrap();
        let r = resize(&checker, 8, 8).unwrap();
        assert!(r.as_raw().iter().all(|&v| v == 128));
    }

    fn arb_image() -> impl Strategy<Value = Image> {
        (8usize..24, 8usize..24).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<u8>(), w * h * 3)
                .prop_map(move |d| Image::new(w, h, d).unwrap())
        })
    }

    fn arb_image_pair() -> impl Strategy<Value = (Image, Image)> {
        (8usize..24, 8usize..24).prop_flat_map(|(w, h)| {
            (
                proptest::collection::vec(any::<u8>(), w * h * 3),
                proptest::collection::vec(any::<u8>(), w * h * 3),
            )
                .prop_map(move |(a, b)| (Image::new(w, h, a).unwrap(), Image::new(w, h, b).unwrap()))
        })
    }

    proptest! {
        #[test]
        fn ssim_self_is_one(a in arb_image()) {
            prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn ssim_symmetric_and_bounded((a, b) in arb_image_pair()) {
            let ab = ssim(&a, &b).unwrap();
            let ba = ssim(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }

        #[test]
        fn diff_ratio_symmetric_and_zero_on_self((a, b) in arb_image_pair()) {
            prop_assert_eq!(diff_ratio(&a, &a, 30.0).unwrap(), 0.0);
            prop_assert_eq!(diff_ratio(&a, &b, 30.0).unwrap(), diff_ratio(&b, &a, 30.0).unwrap());
        }

        #[test]
        fn diff_ratio_monotone_in_perturbed_pixels(a in arb_image(), k in 0usize..64) {
            let mut b = a.clone();
            let mut last = 0.0;
            let n = a.pixel_count();
            for i in 0..k.min(n) {
                let (x, y) = (i % a.width(), i / a.width());
                let p = a.pixel(x, y);
                b.set_pixel(x, y, p.map(|v| if v < 128 { v + 100 } else { v - 100 }));
                let r = diff_ratio(&a, &b, 30.0).unwrap();
                prop_assert!(r >= last);
                last = r;
            }
        }
    }
}
