use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Image;
use crate::derive_seed;

/// A reproducible procedural scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SceneSpec {
    pub scene_id: usize,
    pub seed: u64,
}

/// Bilinearly interpolated lattice noise in [-1, 1].
struct ValueNoise {
    grid: Vec<f32>,
    gw: usize,
    cell: f32,
}

impl ValueNoise {
    fn new(width: usize, height: usize, cell: usize, rng: &mut ChaCha8Rng) -> Self {
        let gw = width / cell + 2;
        let gh = height / cell + 2;
        let grid = (0..gw * gh).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        Self { grid, gw, cell: cell as f32 }
    }

    fn sample(&self, row: usize, col: usize) -> f32 {
        let y = row as f32 / self.cell;
        let x = col as f32 / self.cell;
        let (y0, x0) = (y as usize, x as usize);
        let smooth = |t: f32| t * t * (3.0 - 2.0 * t);
        let (fy, fx) = (smooth(y - y0 as f32), smooth(x - x0 as f32));
        let g = |r: usize, c: usize| self.grid[r * self.gw + c];
        let top = g(y0, x0) * (1.0 - fx) + g(y0, x0 + 1) * fx;
        let bottom = g(y0 + 1, x0) * (1.0 - fx) + g(y0 + 1, x0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

struct Fbm(Vec<(ValueNoise, f32)>);

impl Fbm {
    fn new(width: usize, height: usize, cells: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut amp = 1.0;
        let mut total = 0.0;
        let mut octaves = Vec::new();
        for &c in cells {
            octaves.push((ValueNoise::new(width, height, c, rng), amp));
            total += amp;
            amp *= 0.6;
        }
        octaves.iter_mut().for_each(|(_, a)| *a /= total);
        Self(octaves)
    }

    fn sample(&self, row: usize, col: usize) -> f32 {
        self.0.iter().map(|(n, a)| a * n.sample(row, col)).sum()
    }
}

enum Shape {
    Rect { r0: f32, c0: f32, r1: f32, c1: f32 },
    Ellipse { cr: f32, cc: f32, rr: f32, rc: f32 },
}

struct Object {
    shape: Shape,
    color: [f32; 3],
    /// (amplitude, frequency, angle) of a stripe pattern.
    stripes: Option<(f32, f32, f32)>,
}

impl Object {
    fn random(width: usize, height: usize, rng: &mut ChaCha8Rng) -> Self {
        let (w, h) = (width as f32, height as f32);
        let shape = if rng.random_bool(0.5) {
            let r0 = rng.random_range(0.0..h * 0.8);
            let c0 = rng.random_range(0.0..w * 0.8);
            Shape::Rect {
                r0,
                c0,
                r1: r0 + rng.random_range(h * 0.08..h * 0.4),
                c1: c0 + rng.random_range(w * 0.08..w * 0.4),
            }
        } else {
            Shape::Ellipse {
                cr: rng.random_range(0.0..h),
                cc: rng.random_range(0.0..w),
                rr: rng.random_range(h * 0.05..h * 0.25),
                rc: rng.random_range(w * 0.05..w * 0.25),
            }
        };
        let color = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
        let stripes = rng.random_bool(0.4).then(|| {
            (
                rng.random_range(0.05..0.25),
                rng.random_range(0.05..0.6),
                rng.random_range(0.0..core::f32::consts::PI),
            )
        });
        Self { shape, color, stripes }
    }

    fn contains(&self, row: f32, col: f32) -> bool {
        match self.shape {
            Shape::Rect { r0, c0, r1, c1 } => row >= r0 && row < r1 && col >= c0 && col < c1,
            Shape::Ellipse { cr, cc, rr, rc } => {
                let (dy, dx) = ((row - cr) / rr, (col - cc) / rc);
                dy * dy + dx * dx <= 1.0
            }
        }
    }

    fn shade(&self, row: f32, col: f32) -> f32 {
        match self.stripes {
            Some((amp, freq, angle)) => amp * libm::sinf(freq * (row * libm::cosf(angle) + col * libm::sinf(angle))),
            None => 0.0,
        }
    }
}

/// A nearly uniform very dark or very bright band covering just over half of
/// the frame along one axis.
struct FlatBand {
    horizontal: bool,
    from_start: bool,
    extent: f32,
    level: f32,
}

impl FlatBand {
    fn contains(&self, row: usize, col: usize, width: usize, height: usize) -> bool {
        let (pos, len) = if self.horizontal { (row, height) } else { (col, width) };
        let limit = self.extent * len as f32;
        if self.from_start {
            (pos as f32) < limit
        } else {
            (pos as f32) >= len as f32 - limit
        }
    }
}

/// Renders the ideal (pre-camera) RGB scene in [0, 1]: a colour gradient with
/// multi-scale texture, random striped or plain shapes, and in about half of
/// the scenes a flat dark or saturated band.
pub fn render_scene(spec: &SceneSpec, width: usize, height: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[spec.seed, spec.scene_id as u64]));
    let cells = [128, 64, 32, 16, 8, 4];
    let texture: Vec<Fbm> = (0..3).map(|_| Fbm::new(width, height, &cells, &mut rng)).collect();
    let region = Fbm::new(width, height, &[192, 96], &mut rng);
    let texture_amp = rng.random_range(0.15f32..0.35);
    let base: [[f32; 3]; 2] = [
        [rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)],
        [rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)],
    ];
    let angle = rng.random_range(0.0..core::f32::consts::TAU);
    let n_objects = rng.random_range(6..14);
    let objects: Vec<Object> = (0..n_objects).map(|_| Object::random(width, height, &mut rng)).collect();
    let band = rng.random_bool(0.5).then(|| FlatBand {
        horizontal: rng.random_bool(0.5),
        from_start: rng.random_bool(0.5),
        extent: rng.random_range(0.52..0.65),
        level: if rng.random_bool(0.5) {
            rng.random_range(0.01..0.04)
        } else {
            rng.random_range(0.97..0.995)
        },
    });
    let (ca, sa) = (libm::cosf(angle), libm::sinf(angle));
    let diag = libm::sqrtf((width * width + height * height) as f32);

    let mut img = Image::filled(width, height, [0.0; 3]);
    for row in 0..height {
        for col in 0..width {
            let (r, c) = (row as f32, col as f32);
            if let Some(b) = &band {
                if b.contains(row, col, width, height) {
                    let wobble = 0.003 * texture[0].sample(row, col);
                    for ch in 0..3 {
                        img.set(row, col, ch, (b.level + wobble).clamp(0.0, 1.0));
                    }
                    continue;
                }
            }
            let t = 0.5 + (r * ca + c * sa) / diag;
            // textured where the region field is positive, smooth elsewhere
            let amp = if region.sample(row, col) > 0.0 { texture_amp } else { 0.04 };
            let obj = objects.iter().rev().find(|o| o.contains(r, c));
            for ch in 0..3 {
                let mut v = match obj {
                    Some(o) => o.color[ch] + o.shade(r, c),
                    None => base[0][ch] * (1.0 - t) + base[1][ch] * t,
                };
                v += amp * texture[ch].sample(row, col);
                img.set(row, col, ch, v.clamp(0.0, 1.0));
            }
        }
    }
    img
}
