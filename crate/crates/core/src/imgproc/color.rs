//! sRGB ↔ CIELAB conversion under D65.
//!
//! Both directions go through linear RGB and XYZ with the standard sRGB
//! primaries and D65 white point. Out-of-gamut values on the way back are
//! clamped per linear-RGB channel before re-encoding.

use crate::{Error, Result};

pub const L_MAX: f64 = 100.0;
pub const AB_MIN: f64 = -128.0;
pub const AB_MAX: f64 = 127.0;

// sRGB D65 reference white and RGB↔XYZ matrices.
const WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];
const XYZ_TO_RGB: [[f64; 3]; 3] = [
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
];

// CIE f(t) breakpoints: (6/29)^3 and 29^3/(3*6^2)/... expressed as the
// usual epsilon/kappa pair.
const EPSILON: f64 = 216.0 / 24389.0;
const KAPPA: f64 = 24389.0 / 27.0;

/// 8-bit sRGB image, row-major interleaved RGB triples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions(format!("image {width}x{height}")));
        }
        if data.len() != width * height * 3 {
            return Err(Error::InvalidDimensions(format!(
                "rgb data length {} != {width}x{height}x3",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }
}

/// CIELAB image stored as three planar channels.
///
/// Construction clamps L to [0, 100] and a/b to [−128, 127].
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    pub width: usize,
    pub height: usize,
    pub l: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl LabImage {
    pub fn new(width: usize, height: usize, l: Vec<f64>, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions(format!("image {width}x{height}")));
        }
        let n = width * height;
        if l.len() != n || a.len() != n || b.len() != n {
            return Err(Error::InvalidDimensions(format!(
                "lab channel lengths {}/{}/{} != {n}",
                l.len(),
                a.len(),
                b.len()
            )));
        }
        let mut img = Self {
            width,
            height,
            l,
            a,
            b,
        };
        img.clamp_channels();
        Ok(img)
    }

    fn clamp_channels(&mut self) {
        for v in &mut self.l {
            *v = v.clamp(0.0, L_MAX);
        }
        for v in &mut self.a {
            *v = v.clamp(AB_MIN, AB_MAX);
        }
        for v in &mut self.b {
            *v = v.clamp(AB_MIN, AB_MAX);
        }
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }
}

#[inline]
fn srgb_decode(v: u8) -> f64 {
    let c = v as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

#[inline]
fn srgb_encode(c: f64) -> u8 {
    let c = c.clamp(0.0, 1.0);
    let e = if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    };
    (e * 255.0).round().clamp(0.0, 255.0) as u8
}

#[inline]
fn lab_f(t: f64) -> f64 {
    if t > EPSILON {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

#[inline]
fn lab_f_inv(ft: f64) -> f64 {
    let t3 = ft * ft * ft;
    if t3 > EPSILON {
        t3
    } else {
        (116.0 * ft - 16.0) / KAPPA
    }
}

/// Convert an 8-bit sRGB image to CIELAB (D65).
pub fn rgb_to_lab(img: &RgbImage) -> LabImage {
    let n = img.num_pixels();
    let mut l = vec![0.0; n];
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    for (p, px) in img.data.chunks_exact(3).enumerate() {
        let rl = srgb_decode(px[0]);
        let gl = srgb_decode(px[1]);
        let bl = srgb_decode(px[2]);
        let x = RGB_TO_XYZ[0][0] * rl + RGB_TO_XYZ[0][1] * gl + RGB_TO_XYZ[0][2] * bl;
        let y = RGB_TO_XYZ[1][0] * rl + RGB_TO_XYZ[1][1] * gl + RGB_TO_XYZ[1][2] * bl;
        let z = RGB_TO_XYZ[2][0] * rl + RGB_TO_XYZ[2][1] * gl + RGB_TO_XYZ[2][2] * bl;
        let fx = lab_f(x / WHITE[0]);
        let fy = lab_f(y / WHITE[1]);
        let fz = lab_f(z / WHITE[2]);
        l[p] = (116.0 * fy - 16.0).clamp(0.0, L_MAX);
        a[p] = (500.0 * (fx - fy)).clamp(AB_MIN, AB_MAX);
        b[p] = (200.0 * (fy - fz)).clamp(AB_MIN, AB_MAX);
    }
    LabImage {
        width: img.width,
        height: img.height,
        l,
        a,
        b,
    }
}

/// Convert CIELAB back to 8-bit sRGB, clamping out-of-gamut linear values.
pub fn lab_to_rgb(img: &LabImage) -> RgbImage {
    let mut data = Vec::with_capacity(img.num_pixels() * 3);
    for p in 0..img.num_pixels() {
        if img.l[p] <= 0.0 {
            // zero luminance is black regardless of stored chroma
            data.extend_from_slice(&[0, 0, 0]);
            continue;
        }
        let fy = (img.l[p] + 16.0) / 116.0;
        let fx = fy + img.a[p] / 500.0;
        let fz = fy - img.b[p] / 200.0;
        let x = WHITE[0] * lab_f_inv(fx);
        let y = WHITE[1] * lab_f_inv(fy);
        let z = WHITE[2] * lab_f_inv(fz);
        let rl = XYZ_TO_RGB[0][0] * x + XYZ_TO_RGB[0][1] * y + XYZ_TO_RGB[0][2] * z;
        let gl = XYZ_TO_RGB[1][0] * x + XYZ_TO_RGB[1][1] * y + XYZ_TO_RGB[1][2] * z;
        let bl = XYZ_TO_RGB[2][0] * x + XYZ_TO_RGB[2][1] * y + XYZ_TO_RGB[2][2] * z;
        data.push(srgb_encode(rl));
        data.push(srgb_encode(gl));
        data.push(srgb_encode(bl));
    }
    RgbImage {
        width: img.width,
        height: img.height,
        data,
    }
}
