//! Scene layout generation: random shapes over a background category.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::common::LabelMap;
use crate::rng::{stream, stream_rng};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SceneSpec {
    pub num_categories: usize,
    pub shapes_per_image: usize,
    pub width: usize,
    pub height: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            num_categories: 5,
            shapes_per_image: 7,
            width: 32,
            height: 32,
        }
    }
}

/// Paint random axis-aligned rectangles and ellipses back-to-front over
/// background category 0. Deterministic per seed.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> LabelMap {
    assert!(spec.num_categories >= 2, "need at least background + 1");
    let mut rng = stream_rng(seed, &[stream::DATAGEN_LAYOUT]);
    let mut labels = LabelMap::filled(spec.width, spec.height, 0);
    let (w, h) = (spec.width as f64, spec.height as f64);
    for _ in 0..spec.shapes_per_image {
        let category = rng.random_range(1..spec.num_categories) as u8;
        let is_ellipse: bool = rng.random();
        let cx = rng.random_range(0.0..w);
        let cy = rng.random_range(0.0..h);
        let rx = rng.random_range(w / 8.0..w / 3.0);
        let ry = rng.random_range(h / 8.0..h / 3.0);
        for y in 0..spec.height {
            for x in 0..spec.width {
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                let inside = if is_ellipse {
                    dx * dx + dy * dy <= 1.0
                } else {
                    dx.abs() <= 1.0 && dy.abs() <= 1.0
                };
                if inside {
                    labels.data[y * spec.width + x] = category;
                }
            }
        }
    }
    labels
}
