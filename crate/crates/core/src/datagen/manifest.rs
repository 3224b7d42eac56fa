//! Dataset manifests and whole-benchmark generation.
//!
//! A manifest lists a split's image files (paths relative to the manifest),
//! its label files when the split carries supervision, and the generation
//! parameters. The target-train manifest deliberately has no label paths:
//! the training code can only see what the manifest names, while the label
//! files still exist on disk for offline inspection.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::common::LabelMap;
use crate::datagen::pnm::{read_label_pgm, read_ppm, write_label_pgm, write_ppm};
use crate::datagen::render::{default_palette, render_domain, DomainProfile};
use crate::datagen::scene::{generate_scene, SceneSpec};
use crate::imgproc::RgbImage;
use crate::par;
use crate::rng::derive_seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: String,
    pub width: usize,
    pub height: usize,
    pub num_categories: usize,
    pub count: usize,
    pub seed: u64,
    pub profile: DomainProfile,
    pub images: Vec<String>,
    pub labels: Option<Vec<String>>,
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::format(path, format!("serialize manifest: {e}")))?;
    fs::write(path, json + "\n").map_err(|e| Error::io(format!("write {path:?}"), e))
}

/// Load and validate a manifest: counts must match the lists and every
/// referenced file must exist.
pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("read {path:?}"), e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(path, format!("parse: {e}")))?;
    if manifest.images.len() != manifest.count {
        return Err(Error::format(
            path,
            format!(
                "count {} does not match {} image paths",
                manifest.count,
                manifest.images.len()
            ),
        ));
    }
    if let Some(labels) = &manifest.labels {
        if labels.len() != manifest.count {
            return Err(Error::format(
                path,
                format!(
                    "count {} does not match {} label paths",
                    manifest.count,
                    labels.len()
                ),
            ));
        }
    }
    let base = path.parent().unwrap_or(Path::new("."));
    for rel in manifest
        .images
        .iter()
        .chain(manifest.labels.iter().flatten())
    {
        let p = base.join(rel);
        if !p.is_file() {
            return Err(Error::MissingFile(p));
        }
    }
    Ok(manifest)
}

/// A split with its pixel data in memory.
pub struct LoadedSplit {
    pub manifest: DatasetManifest,
    pub images: Vec<RgbImage>,
    pub labels: Option<Vec<LabelMap>>,
}

impl LoadedSplit {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = read_manifest(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let images = manifest
            .images
            .iter()
            .map(|rel| read_ppm(&base.join(rel)))
            .collect::<Result<Vec<_>>>()?;
        let labels = manifest
            .labels
            .as_ref()
            .map(|paths| {
                paths
                    .iter()
                    .map(|rel| read_label_pgm(&base.join(rel)))
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        Ok(Self {
            manifest,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Everything needed to generate the two-domain benchmark.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub scene: SceneSpec,
    pub source_profile: DomainProfile,
    pub target_profile: DomainProfile,
    pub num_source: usize,
    pub num_target_train: usize,
    pub num_target_eval: usize,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    /// Desk-scale defaults: 5 categories, 200 source / 100 target-train /
    /// 50 target-eval images at 32×32, with a lightness-gamma and color-cast
    /// shift between the domains.
    fn default() -> Self {
        let palette = default_palette();
        let source_profile = DomainProfile {
            gamma_shift: 1.0,
            color_cast: (0.0, 0.0),
            noise_sigma: 2.0,
            palette: palette.clone(),
        };
        let target_profile = DomainProfile {
            gamma_shift: 1.6,
            color_cast: (8.0, -10.0),
            noise_sigma: 2.0,
            palette,
        };
        Self {
            scene: SceneSpec::default(),
            source_profile,
            target_profile,
            num_source: 200,
            num_target_train: 100,
            num_target_eval: 50,
            seed: 42,
        }
    }
}

mod split_tag {
    pub const SOURCE: u64 = 10;
    pub const TARGET_TRAIN: u64 = 11;
    pub const TARGET_EVAL: u64 = 12;
}

fn generate_split(
    spec: &BenchmarkSpec,
    profile: &DomainProfile,
    split: &str,
    tag: u64,
    count: usize,
    dir: &Path,
    with_labels_in_manifest: bool,
) -> Result<PathBuf> {
    fs::create_dir_all(dir.join("images"))
        .and_then(|_| fs::create_dir_all(dir.join("labels")))
        .map_err(|e| Error::io(format!("create {dir:?}"), e))?;

    // Per-image seeds derive from (benchmark seed, split, index), so splits
    // are independent and generation per image can run in parallel.
    let rendered: Vec<(LabelMap, RgbImage)> = par::map_indexed(count, |i| {
        let layout_seed = derive_seed(spec.seed, &[tag, i as u64, 0]);
        let render_seed = derive_seed(spec.seed, &[tag, i as u64, 1]);
        let layout = generate_scene(&spec.scene, layout_seed);
        let image = render_domain(&layout, profile, render_seed);
        (layout, image)
    });

    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for (i, (layout, image)) in rendered.iter().enumerate() {
        let img_rel = format!("images/{split}_{i:04}.ppm");
        let lbl_rel = format!("labels/{split}_{i:04}.pgm");
        write_ppm(&dir.join(&img_rel), image)?;
        write_label_pgm(&dir.join(&lbl_rel), layout)?;
        images.push(img_rel);
        labels.push(lbl_rel);
    }

    let manifest = DatasetManifest {
        split: split.to_string(),
        width: spec.scene.width,
        height: spec.scene.height,
        num_categories: spec.scene.num_categories,
        count,
        seed: spec.seed,
        profile: profile.clone(),
        images,
        labels: with_labels_in_manifest.then_some(labels),
    };
    let manifest_path = dir.join("manifest.json");
    write_manifest(&manifest_path, &manifest)?;
    Ok(manifest_path)
}

/// Paths of the three generated manifests.
pub struct BenchmarkPaths {
    pub source: PathBuf,
    pub target_train: PathBuf,
    pub target_eval: PathBuf,
}

/// Generate the full two-domain benchmark under `out_dir`.
///
/// The target-train manifest withholds its label paths; the label files are
/// still written next to the images.
pub fn generate_benchmark(spec: &BenchmarkSpec, out_dir: &Path) -> Result<BenchmarkPaths> {
    spec.source_profile.validate()?;
    spec.target_profile.validate()?;
    if spec.scene.num_categories < 2 {
        return Err(Error::Config("benchmark needs at least 2 categories".into()));
    }
    let source = generate_split(
        spec,
        &spec.source_profile,
        "src",
        split_tag::SOURCE,
        spec.num_source,
        &out_dir.join("source"),
        true,
    )?;
    let target_train = generate_split(
        spec,
        &spec.target_profile,
        "tgt",
        split_tag::TARGET_TRAIN,
        spec.num_target_train,
        &out_dir.join("target_train"),
        false,
    )?;
    let target_eval = generate_split(
        spec,
        &spec.target_profile,
        "eval",
        split_tag::TARGET_EVAL,
        spec.num_target_eval,
        &out_dir.join("target_eval"),
        true,
    )?;
    Ok(BenchmarkPaths {
        source,
        target_train,
        target_eval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> BenchmarkSpec {
        BenchmarkSpec {
            num_source: 4,
            num_target_train: 3,
            num_target_eval: 2,
            ..BenchmarkSpec::default()
        }
    }

    #[test]
    fn benchmark_round_trips_through_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let paths = generate_benchmark(&tiny_spec(), dir.path()).unwrap();
        let source = LoadedSplit::load(&paths.source).unwrap();
        assert_eq!(source.len(), 4);
        assert!(source.labels.is_some());
        let tt = LoadedSplit::load(&paths.target_train).unwrap();
        assert!(tt.labels.is_none(), "target-train manifest must not carry labels");
        // but the label files exist on disk for offline use
        assert!(dir.path().join("target_train/labels/tgt_0000.pgm").is_file());
        let eval = LoadedSplit::load(&paths.target_eval).unwrap();
        assert!(eval.labels.is_some());
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        generate_benchmark(&tiny_spec(), d1.path()).unwrap();
        generate_benchmark(&tiny_spec(), d2.path()).unwrap();
        for rel in [
            "source/manifest.json",
            "source/images/src_0002.ppm",
            "source/labels/src_0002.pgm",
            "target_train/images/tgt_0001.ppm",
            "target_eval/manifest.json",
        ] {
            let a = fs::read(d1.path().join(rel)).unwrap();
            let b = fs::read(d2.path().join(rel)).unwrap();
            assert_eq!(a, b, "{rel} differs between identical generations");
        }
    }

    #[test]
    fn same_layout_seed_gives_identical_labels_across_domains() {
        let spec = tiny_spec();
        let layout_seed = 777;
        let layout_a = generate_scene(&spec.scene, layout_seed);
        let img_src = render_domain(&layout_a, &spec.source_profile, 1);
        let img_tgt = render_domain(&layout_a, &spec.target_profile, 2);
        // the label map is shared; only the rendering differs
        assert_ne!(img_src.data, img_tgt.data);
        let layout_b = generate_scene(&spec.scene, layout_seed);
        assert_eq!(layout_a, layout_b);
    }

    #[test]
    fn manifest_with_missing_file_fails_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let paths = generate_benchmark(&tiny_spec(), dir.path()).unwrap();
        fs::remove_file(dir.path().join("source/images/src_0001.ppm")).unwrap();
        let err = read_manifest(&paths.source).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)), "{err}");
    }

    #[test]
    fn manifest_count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let paths = generate_benchmark(&tiny_spec(), dir.path()).unwrap();
        let mut m = read_manifest(&paths.source).unwrap();
        m.count = 99;
        write_manifest(&paths.source, &m).unwrap();
        let err = read_manifest(&paths.source).unwrap_err().to_string();
        assert!(err.contains("99"), "{err}");
    }
}
