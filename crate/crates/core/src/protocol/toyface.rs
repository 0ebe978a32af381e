//! Procedural parametric faces with analytically known fiducials.
//!
//! Each identity is a deterministic function of its seed. Geometry is drawn
//! in frame-relative units, so any square resolution renders the same face.
//!
//! Skin and background share a mid luminance band, so most of the luminance
//! structure of a face comes from its hair: one of [`HAIR_STYLES`] spatial
//! layouts in either a dark or a light tone. Faces with the same layout and
//! tone class look alike to a coarse matcher, which gives impostor scores a
//! clustered distribution, much like look-alikes in a real gallery. Hair lies
//! outside the fiducial set, so a landmark morph shows both layouts ghosted
//! at half strength instead of averaging them away.
//!
//! | parameter               | range                                     |
//! |-------------------------|-------------------------------------------|
//! | background tone         | random hue, luma `[0.52, 0.58]`           |
//! | head centre             | x `0.5 ± 0.02`, y `0.55 ± 0.02`           |
//! | head semi-axes          | x `[0.25, 0.29]`, y `[0.31, 0.35]`        |
//! | skin tone               | warmth `[0, 1]`, luma `[0.58, 0.64]`      |
//! | eye half-spacing        | `[0.10, 0.13]`                            |
//! | eye height above centre | `[0.06, 0.10]`                            |
//! | eye radius              | `[0.028, 0.042]`                          |
//! | nose length             | `[0.06, 0.10]`                            |
//! | mouth half-width        | `[0.07, 0.11]`, curvature `[-0.02, 0.03]` |
//! | hair style              | uniform over [`HAIR_STYLES`] layouts      |
//! | hair tone               | dark `[0.02, 0.22]` or light `[0.78, 0.98]` per channel |

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::imaging::Image;
use crate::morphing::{Landmarks, Point};

pub const HAIR_STYLES: usize = 4;
pub const LANDMARK_COUNT: usize = 16;
const JAW_SAMPLES: usize = 11;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ToyFaceParams {
    pub background: [f64; 3],
    pub head_center: (f64, f64),
    pub head_axes: (f64, f64),
    pub skin: [f64; 3],
    pub eye_spacing: f64,
    pub eye_height: f64,
    pub eye_radius: f64,
    pub iris: [f64; 3],
    pub nose_length: f64,
    pub mouth_width: f64,
    pub mouth_curvature: f64,
    pub lips: [f64; 3],
    pub hair_style: usize,
    pub hair: [f64; 3],
}

impl ToyFaceParams {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x746f_7966_6163_6573);
        let tone = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> [f64; 3] {
            [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
        };
        let background = with_luma(tone(&mut rng, 0.3, 0.8), rng.random_range(0.52..0.58));
        let head_center = (0.5 + rng.random_range(-0.02..0.02), 0.55 + rng.random_range(-0.02..0.02));
        let head_axes = (rng.random_range(0.25..0.29), rng.random_range(0.31..0.35));
        let warmth: f64 = rng.random_range(0.0..1.0);
        let skin = with_luma(
            [0.62 + 0.2 * warmth, 0.55 + 0.05 * warmth, 0.5 - 0.1 * warmth],
            rng.random_range(0.58..0.64),
        );
        let eye_spacing = rng.random_range(0.10..0.13);
        let eye_height = rng.random_range(0.06..0.10);
        let eye_radius = rng.random_range(0.028..0.042);
        let iris = tone(&mut rng, 0.05, 0.5);
        let nose_length = rng.random_range(0.06..0.10);
        let mouth_width = rng.random_range(0.07..0.11);
        let mouth_curvature = rng.random_range(-0.02..0.03);
        let lips = [
            rng.random_range(0.55..0.8),
            rng.random_range(0.25..0.4),
            rng.random_range(0.25..0.45),
        ];
        let hair_style = rng.random_range(0..HAIR_STYLES);
        let hair = if rng.random_bool(0.5) {
            tone(&mut rng, 0.02, 0.22)
        } else {
            tone(&mut rng, 0.78, 0.98)
        };
        Self {
            background,
            head_center,
            head_axes,
            skin,
            eye_spacing,
            eye_height,
            eye_radius,
            iris,
            nose_length,
            mouth_width,
            mouth_curvature,
            lips,
            hair_style,
            hair,
        }
    }

    fn eye_centers(&self) -> [(f64, f64); 2] {
        let (cx, cy) = self.head_center;
        let y = cy - self.eye_height;
        [(cx - self.eye_spacing, y), (cx + self.eye_spacing, y)]
    }

    fn nose_tip(&self) -> (f64, f64) {
        let (cx, cy) = self.head_center;
        let eye_y = cy - self.eye_height;
        (cx, eye_y + self.eye_radius + self.nose_length)
    }

    fn mouth_y(&self) -> f64 {
        let (_, nose_y) = self.nose_tip();
        let chin = self.head_center.1 + self.head_axes.1;
        nose_y + 0.45 * (chin - nose_y)
    }

    fn mouth_corners(&self) -> [(f64, f64); 2] {
        let cx = self.head_center.0;
        let y = self.mouth_y();
        [(cx - self.mouth_width, y), (cx + self.mouth_width, y)]
    }

    /// The 16 fiducials in frame-relative units: eye centres, nose tip, mouth
    /// corners, then 11 samples along the lower half of the head outline.
    pub fn fiducials(&self) -> Vec<(f64, f64)> {
        let mut pts = Vec::with_capacity(LANDMARK_COUNT);
        pts.extend(self.eye_centers());
        pts.push(self.nose_tip());
        pts.extend(self.mouth_corners());
        let (cx, cy) = self.head_center;
        let (rx, ry) = self.head_axes;
        for k in 0..JAW_SAMPLES {
            let theta = std::f64::consts::PI * k as f64 / (JAW_SAMPLES - 1) as f64;
            pts.push((cx + rx * theta.cos(), cy + ry * theta.sin()));
        }
        pts
    }

    pub fn landmarks(&self, resolution: usize) -> Result<Landmarks> {
        let scale = (resolution - 1) as f64;
        Landmarks::new(
            self.fiducials()
                .into_iter()
                .map(|(x, y)| Point::new(x * scale, y * scale))
                .collect(),
            resolution,
            resolution,
        )
    }

    /// Renders the face at `resolution × resolution` RGB.
    pub fn render(&self, resolution: usize) -> Result<Image> {
        let px = 1.0 / (resolution - 1) as f64;
        let mut data = Vec::with_capacity(resolution * resolution * 3);
        for row in 0..resolution {
            for col in 0..resolution {
                let p = (col as f64 * px, row as f64 * px);
                data.extend(self.shade(p, px));
            }
        }
        Image::new(resolution, resolution, 3, data)
    }

    fn shade(&self, (x, y): (f64, f64), px: f64) -> [f64; 3] {
        let mut c = self.background;
        let (cx, cy) = self.head_center;
        let (rx, ry) = self.head_axes;
        let brow_y = cy - self.eye_height - 1.6 * self.eye_radius;

        if self.hair_style == 3 {
            let bun = coverage(ellipse_sd(x, y, (cx, cy - ry - 0.07), (0.17, 0.1)), px);
            blend(&mut c, self.hair, bun);
        }

        let head = coverage(ellipse_sd(x, y, (cx, cy), (rx, ry)), px);
        blend(&mut c, self.skin, head);

        let hair = match self.hair_style {
            // cap over the skull down to a little above the brows
            0 => coverage(ellipse_sd(x, y, (cx, cy), (rx + 0.02, ry + 0.03)), px)
                * coverage(y - (brow_y - 0.05), px),
            // strands down both sides of the face
            1 => {
                let left = rect_sd(x, y, (cx - rx - 0.07, cy - 0.7 * ry), (cx - rx + 0.05, cy + 0.75 * ry));
                let right = rect_sd(x, y, (cx + rx - 0.05, cy - 0.7 * ry), (cx + rx + 0.07, cy + 0.75 * ry));
                coverage(left.min(right), px)
            }
            // beard around the chin
            2 => {
                let mouth_y = self.mouth_y();
                head * coverage(mouth_y + 0.035 - y, px)
                    * (1.0 - coverage(ellipse_sd(x, y, (cx, mouth_y), (self.mouth_width + 0.015, 0.03)), px))
            }
            _ => 0.0,
        };
        blend(&mut c, self.hair, hair);

        for (ex, ey) in self.eye_centers() {
            let white = coverage(ellipse_sd(x, y, (ex, ey), (self.eye_radius * 1.5, self.eye_radius)), px);
            blend(&mut c, [0.92, 0.92, 0.9], white);
            let iris = coverage(ellipse_sd(x, y, (ex, ey), (self.eye_radius * 0.75, self.eye_radius * 0.75)), px);
            blend(&mut c, self.iris, iris);
            let brow = coverage(
                rect_sd(
                    x,
                    y,
                    (ex - 1.6 * self.eye_radius, ey - 2.2 * self.eye_radius),
                    (ex + 1.6 * self.eye_radius, ey - 1.6 * self.eye_radius),
                ),
                px,
            );
            blend(&mut c, self.hair, brow);
        }

        let (nx, ny) = self.nose_tip();
        let nose_top = ny - self.nose_length;
        let nose = coverage(rect_sd(x, y, (nx - 0.012, nose_top), (nx + 0.012, ny)), px)
            .max(coverage(ellipse_sd(x, y, (nx, ny), (0.03, 0.015)), px));
        let shadow = [self.skin[0] * 0.8, self.skin[1] * 0.8, self.skin[2] * 0.8];
        blend(&mut c, shadow, nose);

        let [(mx0, my), (mx1, _)] = self.mouth_corners();
        if x >= mx0 - px && x <= mx1 + px {
            let t = ((x - (mx0 + mx1) / 2.0) / self.mouth_width).clamp(-1.0, 1.0);
            let centre = my + self.mouth_curvature * (1.0 - t * t);
            let band = coverage((y - centre).abs() - 0.012, px)
                * coverage(mx0 - x - 0.5 * px, px)
                * coverage(x - mx1 - 0.5 * px, px);
            blend(&mut c, self.lips, band);
        }
        c
    }
}

/// Shifts all channels equally so the BT.601 luma equals `target`.
fn with_luma(c: [f64; 3], target: f64) -> [f64; 3] {
    let shift = target - (0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]);
    c.map(|v| (v + shift).clamp(0.0, 1.0))
}

/// Approximate signed distance to an axis-aligned ellipse (negative inside).
fn ellipse_sd(x: f64, y: f64, (cx, cy): (f64, f64), (rx, ry): (f64, f64)) -> f64 {
    let nx = (x - cx) / rx;
    let ny = (y - cy) / ry;
    ((nx * nx + ny * ny).sqrt() - 1.0) * rx.min(ry)
}

fn rect_sd(x: f64, y: f64, (x0, y0): (f64, f64), (x1, y1): (f64, f64)) -> f64 {
    let dx = (x0 - x).max(x - x1);
    let dy = (y0 - y).max(y - y1);
    dx.max(dy)
}

/// Anti-aliased coverage of the region where `sd < 0`, with a one-pixel ramp.
fn coverage(sd: f64, px: f64) -> f64 {
    (0.5 - sd / px).clamp(0.0, 1.0)
}

fn blend(c: &mut [f64; 3], layer: [f64; 3], alpha: f64) {
    if alpha <= 0.0 {
        return;
    }
    for i in 0..3 {
        c[i] = c[i] * (1.0 - alpha) + layer[i] * alpha;
    }
}
