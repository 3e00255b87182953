//! Fundus-like image synthesis. Class content (lesion blobs on a retinal
//! disc) and domain style (tint, brightness, contrast, blur, vignette) are
//! drawn independently.

use deco_core::SeededRng;

use crate::ppm::RgbImage;

/// Documented sampling ranges for the per-domain style parameters.
pub const TINT_RANGE: (f64, f64) = (0.4, 1.6);
pub const BRIGHTNESS_RANGE: (f64, f64) = (-0.2, 0.2);
pub const CONTRAST_RANGE: (f64, f64) = (0.3, 1.8);
/// Gaussian blur sigma in pixels at 64×64; scaled with image size.
pub const BLUR_RANGE: (f64, f64) = (0.0, 1.6);
pub const VIGNETTE_RANGE: (f64, f64) = (0.0, 0.7);

const CONTRAST_PIVOT: f64 = 0.35;

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub id: usize,
    pub tint: [f64; 3],
    pub brightness: f64,
    pub contrast: f64,
    pub blur_radius: f64,
    pub vignette: f64,
}

impl DomainSpec {
    pub fn sample(id: usize, rng: &mut SeededRng) -> Self {
        let mut draw = |(lo, hi): (f64, f64)| rng.uniform(lo, hi);
        Self {
            id,
            tint: [draw(TINT_RANGE), draw(TINT_RANGE), draw(TINT_RANGE)],
            brightness: draw(BRIGHTNESS_RANGE),
            contrast: draw(CONTRAST_RANGE),
            blur_radius: draw(BLUR_RANGE),
            vignette: draw(VIGNETTE_RANGE),
        }
    }

    /// Style that leaves content untouched.
    pub fn identity(id: usize) -> Self {
        Self {
            id,
            tint: [1.0; 3],
            brightness: 0.0,
            contrast: 1.0,
            blur_radius: 0.0,
            vignette: 0.0,
        }
    }
}

/// Lesion pattern of one grade. Each lesion kind appears `base − 1`,
/// `base` or `base + 1` times (uniformly, floored at zero) with
/// `base = 2·grade`, so the expected count rises strictly with grade.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassSpec {
    pub id: usize,
    pub bright_base: usize,
    pub dark_base: usize,
    /// Blob radius range as a fraction of the image size.
    pub radius_range: (f64, f64),
}

impl ClassSpec {
    pub fn grade(id: usize) -> Self {
        Self {
            id,
            bright_base: 2 * id,
            dark_base: 2 * id,
            radius_range: (0.022, 0.045),
        }
    }

    pub fn expected_count(base: usize) -> f64 {
        if base == 0 {
            1.0 / 3.0
        } else {
            base as f64
        }
    }

    fn draw_count(base: usize, rng: &mut SeededRng) -> usize {
        (base + rng.below(3)).saturating_sub(1)
    }
}

/// Planar float canvas, `3×H×W`.
#[derive(Debug, Clone)]
pub struct Canvas {
    pub size: usize,
    pub data: Vec<f64>,
}

impl Canvas {
    fn new(size: usize) -> Self {
        Self {
            size,
            data: vec![0.0; 3 * size * size],
        }
    }

    fn idx(&self, ch: usize, y: usize, x: usize) -> usize {
        (ch * self.size + y) * self.size + x
    }

    /// Alpha-blends `color` with opacity `alpha(x, y)` over the bounding box.
    fn blend(&mut self, cx: f64, cy: f64, reach: f64, color: [f64; 3], alpha: impl Fn(f64) -> f64) {
        let s = self.size as f64;
        let x0 = (cx - reach).floor().max(0.0) as usize;
        let x1 = ((cx + reach).ceil().min(s - 1.0)).max(0.0) as usize;
        let y0 = (cy - reach).floor().max(0.0) as usize;
        let y1 = ((cy + reach).ceil().min(s - 1.0)).max(0.0) as usize;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
                let a = alpha(d);
                if a <= 0.0 {
                    continue;
                }
                for (ch, &c) in color.iter().enumerate() {
                    let i = self.idx(ch, y, x);
                    self.data[i] = (1.0 - a) * self.data[i] + a * c;
                }
            }
        }
    }
}

/// Lesions actually drawn in one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LesionCounts {
    pub bright: usize,
    pub dark: usize,
}

/// Class content before any domain style.
pub fn render_content(class: &ClassSpec, size: usize, rng: &mut SeededRng) -> (Canvas, LesionCounts) {
    let s = size as f64;
    let mut cv = Canvas::new(size);
    let cx = s / 2.0 + rng.uniform(-0.03, 0.03) * s;
    let cy = s / 2.0 + rng.uniform(-0.03, 0.03) * s;
    let radius = 0.44 * s;
    let waves: Vec<(f64, f64, f64)> = (0..2)
        .map(|_| {
            (
                rng.uniform(0.0, std::f64::consts::TAU),
                rng.uniform(1.0, 3.0) / s,
                rng.uniform(0.0, std::f64::consts::TAU),
            )
        })
        .collect();
    let base = [0.78, 0.36, 0.16];
    for y in 0..size {
        for x in 0..size {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            let r = (dx * dx + dy * dy).sqrt() / radius;
            if r > 1.0 {
                continue;
            }
            let edge = (1.0 - r).min(0.03) / 0.03;
            let mut shade = 1.0 - 0.25 * r * r;
            for &(angle, freq, phase) in &waves {
                let t = (dx * angle.cos() + dy * angle.sin()) * freq * std::f64::consts::TAU;
                shade += 0.04 * (t + phase).cos();
            }
            for (ch, &b) in base.iter().enumerate() {
                let i = cv.idx(ch, y, x);
                cv.data[i] = edge * b * shade;
            }
        }
    }

    // optic disc
    let angle = rng.uniform(0.0, std::f64::consts::TAU);
    let (ox, oy) = (cx + 0.55 * radius * angle.cos(), cy + 0.55 * radius * angle.sin());
    let od = 0.09 * s;
    cv.blend(ox, oy, 2.0 * od, [0.98, 0.85, 0.6], |d| 0.8 * (-(d / od).powi(2)).exp());

    // vessels radiating from the optic disc
    for _ in 0..4 {
        let mut heading = rng.uniform(0.0, std::f64::consts::TAU);
        let bend = rng.uniform(-1.5, 1.5) / radius;
        let (mut px, mut py) = (ox, oy);
        let length = rng.uniform(0.6, 1.1) * radius;
        let mut travelled = 0.0;
        while travelled < length {
            if ((px - cx).powi(2) + (py - cy).powi(2)).sqrt() > 0.97 * radius {
                break;
            }
            cv.blend(px, py, 1.5, [0.45, 0.1, 0.06], |d| 0.35 * (1.0 - d / 1.2).max(0.0));
            px += 0.7 * heading.cos();
            py += 0.7 * heading.sin();
            heading += bend * 0.7;
            travelled += 0.7;
        }
    }

    let counts = LesionCounts {
        bright: ClassSpec::draw_count(class.bright_base, rng),
        dark: ClassSpec::draw_count(class.dark_base, rng),
    };
    let kinds = [
        (counts.bright, [1.0, 0.92, 0.55]),
        (counts.dark, [0.3, 0.04, 0.02]),
    ];
    for (n, color) in kinds {
        for _ in 0..n {
            let rr = radius * 0.85 * rng.next_f64().sqrt();
            let theta = rng.uniform(0.0, std::f64::consts::TAU);
            let (bx, by) = (cx + rr * theta.cos(), cy + rr * theta.sin());
            let br = rng.uniform(class.radius_range.0, class.radius_range.1) * s;
            cv.blend(bx, by, br + 1.0, color, |d| 0.9 * (br + 0.5 - d).clamp(0.0, 1.0));
        }
    }

    for v in cv.data.iter_mut() {
        *v += 0.02 * rng.normal();
    }
    (cv, counts)
}

fn gaussian_blur(cv: &mut Canvas, sigma: f64) {
    if sigma < 0.05 {
        return;
    }
    let reach = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-reach..=reach).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = taps.iter().sum();
    let n = cv.size as isize;
    let mut tmp = vec![0.0; cv.data.len()];
    for pass in 0..2 {
        for ch in 0..3 {
            for y in 0..n {
                for x in 0..n {
                    let mut acc = 0.0;
                    for (t, &w) in taps.iter().enumerate() {
                        let k = t as isize - reach;
                        let (sx, sy) = if pass == 0 { ((x + k).clamp(0, n - 1), y) } else { (x, (y + k).clamp(0, n - 1)) };
                        acc += w * cv.data[cv.idx(ch, sy as usize, sx as usize)];
                    }
                    tmp[cv.idx(ch, y as usize, x as usize)] = acc / norm;
                }
            }
        }
        std::mem::swap(&mut cv.data, &mut tmp);
    }
}

/// Applies a domain style and quantizes to 8-bit RGB.
pub fn apply_style(mut cv: Canvas, style: &DomainSpec) -> RgbImage {
    let s = cv.size;
    gaussian_blur(&mut cv, style.blur_radius * s as f64 / 64.0);
    let half = s as f64 / 2.0;
    let corner = half * std::f64::consts::SQRT_2;
    let mut pixels = vec![0u8; 3 * s * s];
    for y in 0..s {
        for x in 0..s {
            let d = ((x as f64 + 0.5 - half).powi(2) + (y as f64 + 0.5 - half).powi(2)).sqrt() / corner;
            let vig = 1.0 - style.vignette * d * d;
            for ch in 0..3 {
                let v = style.tint[ch] * cv.data[cv.idx(ch, y, x)];
                let v = ((v - CONTRAST_PIVOT) * style.contrast + CONTRAST_PIVOT + style.brightness) * vig;
                pixels[(y * s + x) * 3 + ch] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    RgbImage::new(s, s, pixels)
}

pub fn render_image(class: &ClassSpec, style: &DomainSpec, size: usize, rng: &mut SeededRng) -> (RgbImage, LesionCounts) {
    let (cv, counts) = render_content(class, size, rng);
    (apply_style(cv, style), counts)
}
