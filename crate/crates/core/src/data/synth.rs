use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::SegmentationSample;
use crate::arch::check_input_size;
use crate::error::{Error, Result};
use crate::rng::{stream, SeededRng, Stream};
use crate::tensor::Tensor;

/// Open interval the mask foreground fraction must fall in.
pub const FOREGROUND_RANGE: (f64, f64) = (0.02, 0.6);

const MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticStyle {
    /// Dark filled ellipses and polygons over a textured background.
    Blobs,
    /// Bright ring outlines; the mask is the ring itself.
    Cells,
}

impl fmt::Display for SyntheticStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SyntheticStyle::Blobs => "blobs",
            SyntheticStyle::Cells => "cells",
        })
    }
}

impl FromStr for SyntheticStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(SyntheticStyle::Blobs),
            "cells" => Ok(SyntheticStyle::Cells),
            other => Err(Error::Config(format!("unknown synthetic style `{other}`; valid: blobs, cells"))),
        }
    }
}

/// Point-in-region test in pixel-center coordinates.
enum Shape {
    Ellipse { cx: f64, cy: f64, a: f64, b: f64, cos: f64, sin: f64 },
    Polygon(Vec<(f64, f64)>),
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Shape::Ellipse { cx, cy, a, b, cos, sin } => {
                let (dx, dy) = (x - cx, y - cy);
                let u = dx * cos + dy * sin;
                let v = -dx * sin + dy * cos;
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            }
            Shape::Polygon(pts) => {
                // Even-odd crossing rule.
                let mut inside = false;
                let mut j = pts.len() - 1;
                for i in 0..pts.len() {
                    let ((xi, yi), (xj, yj)) = (pts[i], pts[j]);
                    if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                    j = i;
                }
                inside
            }
        }
    }
}

fn random_shape(rng: &mut SeededRng, h: usize, w: usize) -> Shape {
    let m = h.min(w) as f64;
    let cx = rng.gen_range(0.15..0.85) * w as f64;
    let cy = rng.gen_range(0.15..0.85) * h as f64;
    if rng.gen_bool(0.5) {
        let theta: f64 = rng.gen_range(0.0..TAU);
        Shape::Ellipse {
            cx,
            cy,
            a: rng.gen_range(0.08..0.28) * m,
            b: rng.gen_range(0.08..0.28) * m,
            cos: theta.cos(),
            sin: theta.sin(),
        }
    } else {
        let n = rng.gen_range(5..=8);
        let r = rng.gen_range(0.1..0.28) * m;
        let phase = rng.gen_range(0.0..TAU);
        let pts = (0..n)
            .map(|k| {
                let ang = phase + TAU * k as f64 / n as f64;
                let rr = r * rng.gen_range(0.6..1.0);
                (cx + rr * ang.cos(), cy + rr * ang.sin())
            })
            .collect();
        Shape::Polygon(pts)
    }
}

fn render_blobs(rng: &mut SeededRng, h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let noise = Normal::new(0.0, 0.04).expect("valid sigma");
    let rough = Normal::new(0.0, 0.06).expect("valid sigma");
    let shapes: Vec<Shape> = (0..rng.gen_range(1..=3)).map(|_| random_shape(rng, h, w)).collect();
    let (fx, fy) = (rng.gen_range(0.1..0.5), rng.gen_range(0.1..0.5));
    let (p1, p2) = (rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU));
    let mut image = Vec::with_capacity(h * w);
    let mut mask = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let inside = shapes.iter().any(|s| s.contains(px, py));
            let v = if inside {
                0.25 + rough.sample(rng)
            } else {
                0.62 + 0.08 * (fx * px + p1).sin() * (fy * py + p2).cos() + noise.sample(rng)
            };
            image.push(v.clamp(0.0, 1.0));
            mask.push(inside as u8 as f64);
        }
    }
    (image, mask)
}

fn render_cells(rng: &mut SeededRng, h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let noise = Normal::new(0.0, 0.05).expect("valid sigma");
    let m = h.min(w) as f64;
    let thickness_floor = (m / 32.0).max(1.0);
    let rings: Vec<(f64, f64, f64, f64, f64)> = (0..rng.gen_range(2..=5))
        .map(|_| {
            let r = rng.gen_range(0.1..0.22) * m;
            (
                rng.gen_range(0.15..0.85) * w as f64,
                rng.gen_range(0.15..0.85) * h as f64,
                r,
                rng.gen_range(0.8..1.25),
                thickness_floor * rng.gen_range(1.5..3.0) / 1.5,
            )
        })
        .collect();
    let mut image = Vec::with_capacity(h * w);
    let mut mask = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut on_ring = false;
            let mut interior = false;
            for &(cx, cy, r, e, t) in &rings {
                let d = (px - cx).hypot((py - cy) * e);
                on_ring |= (d - r).abs() <= t / 2.0;
                interior |= d < r - t / 2.0;
            }
            let base: f64 = if on_ring {
                0.8
            } else if interior {
                0.42
            } else {
                0.3
            };
            image.push((base + noise.sample(rng)).clamp(0.0, 1.0));
            mask.push(on_ring as u8 as f64);
        }
    }
    (image, mask)
}

/// Deterministic synthetic dataset. Draws whose foreground fraction falls
/// outside [`FOREGROUND_RANGE`] are rejected and redrawn.
pub fn generate_synthetic(
    count: usize,
    height: usize,
    width: usize,
    seed: u64,
    style: SyntheticStyle,
) -> Result<Vec<SegmentationSample>> {
    check_input_size(height, width)?;
    let mut rng = stream(seed, Stream::Synthetic);
    let n = (height * width) as f64;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut accepted = None;
        for _ in 0..MAX_ATTEMPTS {
            let (image, mask) = match style {
                SyntheticStyle::Blobs => render_blobs(&mut rng, height, width),
                SyntheticStyle::Cells => render_cells(&mut rng, height, width),
            };
            let frac = mask.iter().sum::<f64>() / n;
            if frac > FOREGROUND_RANGE.0 && frac < FOREGROUND_RANGE.1 {
                accepted = Some((image, mask));
                break;
            }
        }
        let (image, mask) = accepted.ok_or_else(|| {
            Error::Config(format!("no {style} sample within the foreground range after {MAX_ATTEMPTS} draws"))
        })?;
        let to_t = |v: Vec<f64>| Tensor::from_vec(&[1, height, width], v.into_iter().map(|x| x as f32).collect());
        out.push(SegmentationSample::new(to_t(image)?, to_t(mask)?, format!("{style}-{i:03}"))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_valid() {
        for style in [SyntheticStyle::Blobs, SyntheticStyle::Cells] {
            for (h, w) in [(16, 16), (64, 48), (128, 128)] {
                let a = generate_synthetic(6, h, w, 9, style).unwrap();
                let b = generate_synthetic(6, h, w, 9, style).unwrap();
                assert_eq!(a, b);
                for s in &a {
                    s.validate().unwrap();
                    let frac = s.mask.data().iter().sum::<f32>() as f64 / (h * w) as f64;
                    assert!(frac > FOREGROUND_RANGE.0 && frac < FOREGROUND_RANGE.1, "{frac}");
                }
            }
        }
    }

    #[test]
    fn seeds_differ() {
        let a = generate_synthetic(2, 32, 32, 1, SyntheticStyle::Cells).unwrap();
        let b = generate_synthetic(2, 32, 32, 2, SyntheticStyle::Cells).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn size_must_be_multiple_of_sixteen() {
        assert!(generate_synthetic(1, 20, 16, 0, SyntheticStyle::Blobs).is_err());
    }

    #[test]
    fn mask_matches_geometry() {
        let ellipse = Shape::Ellipse {
            cx: 8.0,
            cy: 8.0,
            a: 4.0,
            b: 2.0,
            cos: 1.0,
            sin: 0.0,
        };
        assert!(ellipse.contains(11.5, 8.0));
        assert!(!ellipse.contains(8.0, 10.5));
        let square = Shape::Polygon(vec![(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0)]);
        assert!(square.contains(2.0, 2.0));
        assert!(!square.contains(5.0, 2.0));
    }
}
