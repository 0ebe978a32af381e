//! Shared inputs for the kernel benchmarks.

use demorph_core::latentcodec::Latent;
use demorph_core::morphing::Landmarks;
use demorph_core::protocol::toy_face;
use demorph_core::Image;

pub const RES: usize = 64;

/// Two distinct seeded toy faces at the desk resolution.
pub fn face_pair() -> ((Image, Landmarks), (Image, Landmarks)) {
    (toy_face(1, 0, RES).unwrap(), toy_face(1, 1, RES).unwrap())
}

/// `n` deterministic latents of shape `c × h × w`.
pub fn latents(n: usize, c: usize, h: usize, w: usize) -> Vec<Latent> {
    (0..n)
        .map(|k| {
            let data = (0..c * h * w)
                .map(|i| ((i * 7 + k * 13) % 17) as f64 / 8.0 - 1.0)
                .collect();
            Latent::new(c, h, w, data).unwrap()
        })
        .collect()
}
