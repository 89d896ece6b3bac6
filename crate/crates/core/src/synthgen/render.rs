use std::f64::consts::{PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DefectKind, SceneSpec};
use crate::imaging::{clamp_unit, Patch};
use crate::seed;

/// One drawn bottle instance in frame coordinates.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Bottle {
    pub cx: f64,
    pub top: f64,
    pub bottom: f64,
    pub body_hw: f64,
    pub neck_hw: f64,
    pub rim_hw: f64,
    pub rim_end: f64,
    pub neck_end: f64,
    pub shoulder_end: f64,
    pub wall: f64,
    pub liquid_y: f64,
    pub glass: f64,
    pub liquid: f64,
    pub air: f64,
    pub highlight_x: f64,
    pub highlight_gain: f64,
}

impl Bottle {
    fn half_width(&self, yc: f64) -> f64 {
        if yc < self.rim_end {
            self.rim_hw
        } else if yc < self.neck_end {
            self.neck_hw
        } else if yc < self.shoulder_end {
            let t = (yc - self.neck_end) / (self.shoulder_end - self.neck_end);
            self.neck_hw + (self.body_hw - self.neck_hw) * (1.0 - (PI * t).cos()) / 2.0
        } else {
            self.body_hw
        }
    }

    /// Wall thickness at this height; the rim is a solid lip down to the neck bore.
    fn wall_at(&self, yc: f64) -> f64 {
        if yc < self.rim_end {
            self.wall + self.rim_hw - self.neck_hw
        } else {
            self.wall
        }
    }

    pub(crate) fn shifted(&self, dx: f64) -> Bottle {
        Bottle {
            cx: self.cx + dx,
            highlight_x: self.highlight_x + dx,
            ..self.clone()
        }
    }
}

/// A drawn defect in frame coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Defect {
    /// Darkened band of `width` pixels along a polyline.
    Crack { points: Vec<(f64, f64)>, width: f64, gain: f64 },
    /// Glass missing inside a disc at the rim.
    Fragment { x: f64, y: f64, radius: f64 },
    /// One wall pushed outward by a half-sine bulge; `side` is -1 (left) or +1 (right).
    Deform { side: i8, edge_x: f64, wall: f64, y0: f64, y1: f64, amplitude: f64 },
    /// Elliptical darkening with a soft rim.
    Stain { x: f64, y: f64, rx: f64, ry: f64, gain: f64 },
    /// Dark speck suspended in the liquid.
    Impurity { x: f64, y: f64, radius: f64, level: f64 },
}

impl Defect {
    pub fn kind(&self) -> DefectKind {
        match self {
            Defect::Crack { .. } => DefectKind::Crack,
            Defect::Fragment { .. } => DefectKind::Fragment,
            Defect::Deform { .. } => DefectKind::Deform,
            Defect::Stain { .. } => DefectKind::Stain,
            Defect::Impurity { .. } => DefectKind::Impurity,
        }
    }

    /// `(x0, y0, x1, y1)` enclosing every pixel centre the defect can change.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        match self {
            Defect::Crack { points, width, .. } => {
                let r = width / 2.0;
                let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
                for &(x, y) in points {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
                (x0 - r, y0 - r, x1 + r, y1 + r)
            }
            Defect::Fragment { x, y, radius } | Defect::Impurity { x, y, radius, .. } => {
                (x - radius, y - radius, x + radius, y + radius)
            }
            Defect::Deform { side, edge_x, wall, y0, y1, amplitude } => {
                if *side < 0 {
                    (edge_x - amplitude, *y0, edge_x + wall, *y1)
                } else {
                    (edge_x - wall, *y0, edge_x + amplitude, *y1)
                }
            }
            Defect::Stain { x, y, rx, ry, .. } => (x - rx, y - ry, x + rx, y + ry),
        }
    }

    pub(crate) fn shifted(&self, dx: f64) -> Defect {
        let mut d = self.clone();
        match &mut d {
            Defect::Crack { points, .. } => points.iter_mut().for_each(|p| p.0 += dx),
            Defect::Fragment { x, .. } | Defect::Stain { x, .. } | Defect::Impurity { x, .. } => *x += dx,
            Defect::Deform { edge_x, .. } => *edge_x += dx,
        }
        d
    }

    /// Extra half-width on `side` at height `yc`.
    fn bulge(&self, side: i8, yc: f64) -> f64 {
        match *self {
            Defect::Deform { side: s, y0, y1, amplitude, .. } if s == side && yc >= y0 && yc < y1 => {
                amplitude * (PI * (yc - y0) / (y1 - y0)).sin()
            }
            _ => 0.0,
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Sub-range `zone` (fractions) of the interval `(lo, hi)`.
fn band((lo, hi): (f64, f64), zone: (f64, f64)) -> (f64, f64) {
    let hi = hi.max(lo);
    (lo + (hi - lo) * zone.0, lo + (hi - lo) * zone.1)
}

fn jitter<R: Rng>(rng: &mut R, amount: f64) -> f64 {
    uniform(rng, (-amount, amount))
}

pub(crate) fn draw_bottle(spec: &SceneSpec, geometry_seed: u64) -> Bottle {
    let g = &spec.bottle;
    let mut rng = seed::rng(geometry_seed);
    let cx = g.center_x + jitter(&mut rng, g.center_jitter);
    let height = g.height + jitter(&mut rng, g.height_jitter);
    let fill = g.fill_depth + jitter(&mut rng, g.fill_jitter);
    let lj = spec.level_jitter;
    let glass = clamp_unit(spec.glass_level + jitter(&mut rng, lj));
    let liquid = clamp_unit(spec.liquid_level + jitter(&mut rng, lj));
    let air = clamp_unit(spec.air_level + jitter(&mut rng, lj));
    let highlight_gain = uniform(&mut rng, (0.0, spec.highlight_max));
    let top = g.bottom_y - height;
    let rim_end = top + g.rim_height;
    let neck_end = rim_end + g.neck_length;
    Bottle {
        cx,
        top,
        bottom: g.bottom_y,
        body_hw: g.body_half_width,
        neck_hw: g.neck_half_width,
        rim_hw: g.rim_half_width,
        rim_end,
        neck_end,
        shoulder_end: neck_end + g.shoulder_length,
        wall: g.wall_thickness,
        liquid_y: top + fill,
        glass,
        liquid,
        air,
        highlight_x: cx - 0.55 * g.body_half_width,
        highlight_gain,
    }
}

pub(crate) fn draw_defect(spec: &SceneSpec, b: &Bottle, kind: DefectKind, defect_seed: u64) -> Option<Defect> {
    let st = &spec.defects;
    let mut rng = seed::rng(defect_seed);
    let inner = b.body_hw - b.wall;
    let body_top = b.shoulder_end;
    let body_bottom = b.bottom - b.wall;
    let side: i8 = if rng.random::<bool>() { 1 } else { -1 };
    let d = match kind {
        DefectKind::None => return None,
        DefectKind::Crack => {
            let margin = 4.0;
            let (x_lo, x_hi) = (b.cx - inner + margin, b.cx + inner - margin);
            let (y_lo, y_hi) = band((body_top + 5.0, body_bottom - margin), st.crack_zone);
            let inset = (inner - margin) * st.crack_spread * rng.random::<f64>();
            let mut p = (
                b.cx + f64::from(side) * (inner - margin - inset),
                uniform(&mut rng, (y_lo, (y_hi - 40.0).max(y_lo))),
            );
            let n = rng.random_range(st.crack_segments.0..=st.crack_segments.1);
            let mut angle = PI / 2.0 + jitter(&mut rng, 1.4 * st.crack_wander);
            let mut points = vec![p];
            for _ in 0..n {
                let len = uniform(&mut rng, st.crack_segment_length);
                angle += jitter(&mut rng, st.crack_wander);
                p = (
                    (p.0 + len * angle.cos()).clamp(x_lo, x_hi),
                    (p.1 + len * angle.sin()).clamp(y_lo, y_hi),
                );
                points.push(p);
            }
            Defect::Crack {
                points,
                width: st.crack_width,
                gain: st.crack_gain,
            }
        }
        DefectKind::Fragment => Defect::Fragment {
            x: b.cx + f64::from(side) * b.rim_hw * uniform(&mut rng, (0.5, 1.0)),
            y: b.top + uniform(&mut rng, (0.0, 0.5 * (b.rim_end - b.top))),
            radius: uniform(&mut rng, st.fragment_radius),
        },
        DefectKind::Deform => {
            let len = uniform(&mut rng, st.deform_length);
            let y0 = uniform(&mut rng, (body_top + 5.0, (body_bottom - len - 5.0).max(body_top + 5.0)));
            Defect::Deform {
                side,
                edge_x: b.cx + f64::from(side) * b.body_hw,
                wall: b.wall,
                y0,
                y1: y0 + len,
                amplitude: uniform(&mut rng, st.deform_amplitude),
            }
        }
        DefectKind::Stain => {
            let rx = uniform(&mut rng, st.stain_radius);
            let ry = uniform(&mut rng, st.stain_radius);
            let reach = (inner - rx).max(0.0);
            Defect::Stain {
                x: b.cx + jitter(&mut rng, reach * st.stain_spread),
                y: uniform(&mut rng, band((body_top + ry, body_bottom - ry), st.stain_zone)),
                rx,
                ry,
                gain: st.stain_gain,
            }
        }
        DefectKind::Impurity => {
            let radius = uniform(&mut rng, st.impurity_radius);
            let reach = (inner - radius - 4.0).max(0.0);
            let y_lo = b.liquid_y.max(body_top) + radius + 4.0;
            Defect::Impurity {
                x: b.cx + jitter(&mut rng, reach * st.impurity_spread),
                y: uniform(&mut rng, band((y_lo, body_bottom - radius - 4.0), st.impurity_zone)),
                radius,
                level: st.impurity_level,
            }
        }
    };
    Some(d)
}

#[derive(Clone, Copy, PartialEq)]
enum Region {
    Backlight,
    Glass,
    Air,
    Liquid,
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Applies a defect to one pixel of known region; returns the new value.
fn apply(defect: &Defect, region: Region, backlight: f64, xc: f64, yc: f64, v: f64) -> f64 {
    if region == Region::Backlight {
        return v;
    }
    match defect {
        Defect::Crack { points, width, gain } => {
            let near = points
                .windows(2)
                .any(|s| segment_distance((xc, yc), s[0], s[1]) <= width / 2.0);
            if near {
                v * gain
            } else {
                v
            }
        }
        Defect::Fragment { x, y, radius } => {
            if (xc - x).hypot(yc - y) <= *radius {
                backlight
            } else {
                v
            }
        }
        Defect::Deform { .. } => v,
        Defect::Stain { x, y, rx, ry, gain } => {
            let r = ((xc - x) / rx).hypot((yc - y) / ry);
            if r >= 1.0 {
                v
            } else {
                let w = 1.0 - smoothstep((r - 0.8) / 0.2);
                v * (1.0 - (1.0 - gain) * w)
            }
        }
        Defect::Impurity { x, y, radius, level } => {
            if region == Region::Liquid && (xc - x).hypot(yc - y) <= *radius {
                *level
            } else {
                v
            }
        }
    }
}

/// Standard normal deviate hashed from a frame seed and absolute pixel coordinates.
fn gauss(noise_seed: u64, x: usize, y: usize) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    let k = seed::mix(noise_seed ^ ((y as u64) << 32 | x as u64));
    let a = seed::mix(k);
    let b = seed::mix(k ^ 0x5851_f42d_4c95_7f2d);
    let u1 = ((a >> 11) as f64 + 1.0) * SCALE;
    let u2 = (b >> 11) as f64 * SCALE;
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

/// Renders `window` (frame coordinates): scene, defect, illumination, noise, clamp.
pub(crate) fn paint(
    spec: &SceneSpec,
    scene: Option<(&Bottle, Option<&Defect>)>,
    illumination: f64,
    noise_seed: u64,
    window: &Patch,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(window.area());
    let bounds = scene.and_then(|(_, d)| d.map(|d| (d, d.bounds())));
    for y in window.y..window.y + window.h {
        let yc = y as f64 + 0.5;
        let row = scene.and_then(|(b, d)| {
            if yc < b.top || yc >= b.bottom {
                return None;
            }
            let hw = b.half_width(yc);
            let (bl, br) = d.map_or((0.0, 0.0), |d| (d.bulge(-1, yc), d.bulge(1, yc)));
            Some((b, b.cx - hw - bl, b.cx + hw + br, b.wall_at(yc)))
        });
        for x in window.x..window.x + window.w {
            let xc = x as f64 + 0.5;
            let (region, mut v) = match row {
                Some((b, left, right, wall)) if xc >= left && xc < right => {
                    if xc < left + wall || xc >= right - wall || yc >= b.bottom - b.wall || yc < b.top + 0.6 * b.wall {
                        (Region::Glass, b.glass)
                    } else {
                        let (r, base) = if yc >= b.liquid_y {
                            (Region::Liquid, b.liquid)
                        } else {
                            (Region::Air, b.air)
                        };
                        let lit = if (xc - b.highlight_x).abs() < 2.0 { b.highlight_gain } else { 0.0 };
                        (r, base + lit)
                    }
                }
                _ => (Region::Backlight, spec.backlight),
            };
            if let Some((d, (x0, y0, x1, y1))) = bounds {
                if xc >= x0 && xc <= x1 && yc >= y0 && yc <= y1 {
                    v = apply(d, region, spec.backlight, xc, yc, v);
                }
            }
            v *= illumination;
            if spec.noise_sigma > 0.0 {
                v += spec.noise_sigma * gauss(noise_seed, x, y);
            }
            out.push(clamp_unit(v));
        }
    }
    out
}
