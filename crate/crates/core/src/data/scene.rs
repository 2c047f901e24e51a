//! Ray-cast RGB-D scenes built from planes and axis-aligned boxes.
//!
//! Camera at the origin looking down +z with y pointing down; focal length
//! `W` pixels and the principal point at the image center. Depth is the z
//! coordinate of the first hit.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DataError, SceneFamily, SceneSample};
use crate::backbone::check_input_size;
use crate::losses::{DEPTH_MAX, DEPTH_MIN};
use crate::tensor::{Shape, Tensor};

type Vec3 = [f64; 3];

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: Vec3) -> Vec3 {
    let n = dot(a, a).sqrt();
    if n == 0.0 {
        a
    } else {
        [a[0] / n, a[1] / n, a[2] / n]
    }
}

#[derive(Clone, Copy, Debug)]
enum Shape3 {
    /// Points with `p[axis] == offset`.
    Plane { axis: usize, offset: f64 },
    Cuboid { min: Vec3, max: Vec3 },
}

impl Shape3 {
    fn hit(&self, dir: Vec3) -> Option<f64> {
        match *self {
            Shape3::Plane { axis, offset } => {
                if dir[axis] == 0.0 {
                    return None;
                }
                let t = offset / dir[axis];
                (t > 0.0).then_some(t)
            }
            Shape3::Cuboid { min, max } => {
                let mut enter = f64::NEG_INFINITY;
                let mut exit = f64::INFINITY;
                for a in 0..3 {
                    if dir[a] == 0.0 {
                        if 0.0 < min[a] || 0.0 > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let t0 = min[a] / dir[a];
                    let t1 = max[a] / dir[a];
                    enter = enter.max(t0.min(t1));
                    exit = exit.min(t0.max(t1));
                }
                (enter <= exit && enter > 0.0).then_some(enter)
            }
        }
    }
}

/// Periodic albedo patterns evaluated at world coordinates.
#[derive(Clone, Copy, Debug)]
enum Pattern {
    Stripes { axis: usize, period: f64 },
    Checker { period: f64 },
    /// Window grid centred on x = 0.
    Windows { cell: f64, frame: f64 },
}

impl Pattern {
    fn mix(&self, p: Vec3) -> f64 {
        match *self {
            Pattern::Stripes { axis, period } => ((p[axis] / period).floor().rem_euclid(2.0) == 0.0) as u8 as f64,
            Pattern::Checker { period } => {
                let s: f64 = p.iter().map(|v| (v / period).floor()).sum();
                (s.rem_euclid(2.0) == 0.0) as u8 as f64
            }
            Pattern::Windows { cell, frame } => {
                // |x| keeps the pattern mirror-symmetric.
                let fx = (p[0].abs() / cell).fract();
                let fy = (p[1] / cell).rem_euclid(1.0);
                let inside = fx > frame && fx < 1.0 - frame && fy > frame && fy < 1.0 - frame;
                inside as u8 as f64
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Surface {
    shape: Shape3,
    pattern: Pattern,
    colors: [Vec3; 2],
}

struct Scene {
    surfaces: Vec<Surface>,
}

fn random_color(rng: &mut impl Rng) -> Vec3 {
    [rng.gen_range(0.2..0.9), rng.gen_range(0.2..0.9), rng.gen_range(0.2..0.9)]
}

fn color_pair(rng: &mut impl Rng) -> [Vec3; 2] {
    let a = random_color(rng);
    let k = rng.gen_range(0.45..0.75);
    [a, [a[0] * k, a[1] * k, a[2] * k]]
}

fn build(family: SceneFamily, rng: &mut impl Rng) -> Scene {
    let mut s = Vec::new();
    match family {
        SceneFamily::Corridor => {
            let half = rng.gen_range(0.8..1.5);
            let floor = rng.gen_range(0.8..1.4);
            let ceiling = -rng.gen_range(1.0..1.6);
            let end = rng.gen_range(6.0..9.5);
            let wall = color_pair(rng);
            let stripe = Pattern::Stripes {
                axis: 2,
                period: rng.gen_range(0.4..0.9),
            };
            s.push(Surface {
                shape: Shape3::Plane { axis: 0, offset: -half },
                pattern: stripe,
                colors: wall,
            });
            s.push(Surface {
                shape: Shape3::Plane { axis: 0, offset: half },
                pattern: stripe,
                colors: wall,
            });
            s.push(Surface {
                shape: Shape3::Plane { axis: 1, offset: floor },
                pattern: Pattern::Checker {
                    period: rng.gen_range(0.3..0.6),
                },
                colors: color_pair(rng),
            });
            s.push(Surface {
                shape: Shape3::Plane { axis: 1, offset: ceiling },
                pattern: Pattern::Stripes { axis: 0, period: 0.5 },
                colors: color_pair(rng),
            });
            s.push(Surface {
                shape: Shape3::Plane { axis: 2, offset: end },
                pattern: Pattern::Checker { period: 0.5 },
                colors: color_pair(rng),
            });
        }
        SceneFamily::Boxes => {
            let floor = rng.gen_range(0.8..1.5);
            s.push(Surface {
                shape: Shape3::Plane { axis: 1, offset: floor },
                pattern: Pattern::Checker {
                    period: rng.gen_range(0.3..0.6),
                },
                colors: color_pair(rng),
            });
            s.push(Surface {
                shape: Shape3::Plane {
                    axis: 2,
                    offset: rng.gen_range(6.0..9.5),
                },
                pattern: Pattern::Stripes { axis: 0, period: 0.6 },
                colors: color_pair(rng),
            });
            for _ in 0..rng.gen_range(2..=4) {
                let cx = rng.gen_range(-1.5..1.5);
                let cz = rng.gen_range(2.5..6.0);
                let w = rng.gen_range(0.3..0.9);
                let d = rng.gen_range(0.3..0.9);
                let h = rng.gen_range(0.4..1.4);
                s.push(Surface {
                    shape: Shape3::Cuboid {
                        min: [cx - w / 2.0, floor - h, cz - d / 2.0],
                        max: [cx + w / 2.0, floor, cz + d / 2.0],
                    },
                    pattern: Pattern::Checker { period: 0.25 },
                    colors: color_pair(rng),
                });
            }
        }
        SceneFamily::Stairs => {
            let floor = rng.gen_range(0.9..1.5);
            let rise = rng.gen_range(0.15..0.3);
            let run = rng.gen_range(0.35..0.7);
            let start = rng.gen_range(1.8..3.0);
            let steps = rng.gen_range(4..=7);
            let colors = color_pair(rng);
            s.push(Surface {
                shape: Shape3::Plane { axis: 1, offset: floor },
                pattern: Pattern::Checker { period: 0.4 },
                colors: color_pair(rng),
            });
            s.push(Surface {
                shape: Shape3::Plane {
                    axis: 2,
                    offset: rng.gen_range(7.0..9.5),
                },
                pattern: Pattern::Stripes { axis: 1, period: 0.5 },
                colors: color_pair(rng),
            });
            for i in 0..steps {
                s.push(Surface {
                    shape: Shape3::Cuboid {
                        min: [-3.0, floor - (i + 1) as f64 * rise, start + i as f64 * run],
                        max: [3.0, floor, 9.9],
                    },
                    pattern: Pattern::Stripes { axis: 1, period: rise },
                    colors,
                });
            }
        }
        SceneFamily::Facade => {
            let wall_z = rng.gen_range(4.0..8.0);
            let ground = rng.gen_range(0.8..1.5);
            s.push(Surface {
                shape: Shape3::Plane { axis: 2, offset: wall_z },
                pattern: Pattern::Windows {
                    cell: rng.gen_range(0.5..0.9),
                    frame: rng.gen_range(0.12..0.25),
                },
                colors: color_pair(rng),
            });
            s.push(Surface {
                shape: Shape3::Plane { axis: 1, offset: ground },
                pattern: Pattern::Checker { period: 0.5 },
                colors: color_pair(rng),
            });
            // Pillars and balconies, each placed with its mirror image.
            let colors = color_pair(rng);
            for _ in 0..rng.gen_range(1..=3) {
                let x0 = rng.gen_range(0.2..2.0);
                let w = rng.gen_range(0.15..0.6);
                let depth = rng.gen_range(0.2..1.0);
                let y0 = rng.gen_range(-2.0..0.5);
                let h = rng.gen_range(0.2..2.0);
                for sign in [1.0f64, -1.0] {
                    let (a, b) = (sign * x0, sign * (x0 + w));
                    s.push(Surface {
                        shape: Shape3::Cuboid {
                            min: [a.min(b), y0, wall_z - depth],
                            max: [a.max(b), y0 + h, wall_z],
                        },
                        pattern: Pattern::Stripes { axis: 1, period: 0.2 },
                        colors,
                    });
                }
            }
        }
    }
    Scene { surfaces: s }
}

/// Ray through the centre of pixel `(u, v)` with unit z component.
fn ray(u: usize, v: usize, height: usize, width: usize) -> Vec3 {
    let f = width as f64;
    [
        (u as f64 + 0.5 - width as f64 / 2.0) / f,
        (v as f64 + 0.5 - height as f64 / 2.0) / f,
        1.0,
    ]
}

const LIGHT: Vec3 = [-0.35, -0.75, -0.55];
const AMBIENT: f64 = 0.3;
pub const RGB_NOISE_SIGMA: f64 = 0.01;

fn family_stream(family: SceneFamily) -> u64 {
    0x5eed_0000 + family as u64
}

/// Renders a `(family, seed)` scene at `height x width`.
pub fn generate_scene(family: SceneFamily, seed: u64, height: usize, width: usize) -> Result<SceneSample, DataError> {
    check_input_size(height, width).map_err(|_| DataError::Dimensions { height, width })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(family_stream(family));
    let scene = build(family, &mut rng);

    let n = height * width;
    let mut depth = vec![DEPTH_MAX; n];
    let mut hit_surface: Vec<Option<usize>> = vec![None; n];
    for v in 0..height {
        for u in 0..width {
            let dir = ray(u, v, height, width);
            let mut best = f64::INFINITY;
            for (k, surf) in scene.surfaces.iter().enumerate() {
                if let Some(t) = surf.shape.hit(dir) {
                    if t < best {
                        best = t;
                        hit_surface[v * width + u] = Some(k);
                    }
                }
            }
            depth[v * width + u] = best.clamp(DEPTH_MIN, DEPTH_MAX);
        }
    }

    let point = |u: usize, v: usize| {
        let d = ray(u, v, height, width);
        let z = depth[v * width + u];
        [d[0] * z, d[1] * z, z]
    };
    let light = normalize(LIGHT);
    let noise = Normal::new(0.0, RGB_NOISE_SIGMA).expect("valid sigma");
    let mut rgb = vec![0.0; 3 * n];
    for v in 0..height {
        for u in 0..width {
            let p = point(u, v);
            let (ul, ur) = (u.saturating_sub(1), (u + 1).min(width - 1));
            let (vu, vd) = (v.saturating_sub(1), (v + 1).min(height - 1));
            let mut normal = normalize(cross(sub(point(ur, v), point(ul, v)), sub(point(u, vd), point(u, vu))));
            if dot(normal, p) > 0.0 {
                normal = [-normal[0], -normal[1], -normal[2]];
            }
            let shade = AMBIENT + (1.0 - AMBIENT) * dot(normal, light).max(0.0);
            let albedo = match hit_surface[v * width + u] {
                Some(k) => {
                    let surf = &scene.surfaces[k];
                    let m = surf.pattern.mix(p);
                    let [a, b] = surf.colors;
                    [0, 1, 2].map(|c| a[c] * m + b[c] * (1.0 - m))
                }
                None => [0.6, 0.7, 0.85],
            };
            for c in 0..3 {
                let value = albedo[c] * shade + noise.sample(&mut rng);
                rgb[c * n + v * width + u] = value.clamp(0.0, 1.0);
            }
        }
    }

    Ok(SceneSample {
        rgb: Tensor::from_vec(Shape::new(1, 3, height, width).expect("rgb shape"), rgb).expect("rgb length"),
        depth: Tensor::from_vec(Shape::new(1, 1, height, width).expect("depth shape"), depth).expect("depth length"),
        family,
        seed,
    })
}
