//! Deterministic synthetic two-domain segmentation benchmark.
//!
//! Scenes are random rectangles and ellipses over a background category;
//! the same layout renders under different domain profiles (palette,
//! color cast, lightness gamma, noise), producing controllable image-level
//! and category-level shifts between a labeled "source" split and an
//! unlabeled "target" split.

mod manifest;
mod pnm;
mod render;
mod scene;

pub use manifest::{
    generate_benchmark, read_manifest, write_manifest, BenchmarkPaths, BenchmarkSpec,
    DatasetManifest, LoadedSplit,
};
pub use pnm::{read_label_pgm, read_ppm, write_f32_raster, read_f32_raster, write_label_pgm, write_ppm};
pub use render::{default_palette, render_domain, DomainProfile, PaletteEntry};
pub use scene::{generate_scene, SceneSpec};
