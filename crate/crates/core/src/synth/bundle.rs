use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::degrade::{degrade_with_visibility, drop_views, visibility};
use super::scene::{gen_scene, Scene, ShapeKind};
use super::{DegradeConfig, SynthConfig};
use crate::error::{Error, Result};
use crate::grid::Mask;
use crate::io::{load_cameras, load_mask_png, read_json, save_cameras, save_mask_png, write_json};
use crate::splat::{load_ply, save_ply, AnisotropicTransform, Camera, SplatCloud};

pub const BUNDLE_VERSION: u32 = 1;
const FORMAT: &str = "splat-align-bundle";
const CHAMFER_CONVENTION: &str = "0.5 * (mean_a min_b |a-b| + mean_b min_a |a-b|), scene units";

fn sub_seed(seed: u64, tag: u64) -> u64 {
    seed ^ tag.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(|e| crate::io::not_found_or_io(path, e))?;
    Ok(hex(&Sha256::digest(&data)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub synth: SynthConfig,
    pub degrade: DegradeConfig,
    pub config_sha256: String,
    pub n_objects: usize,
    pub n_views: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub shapes: Vec<ShapeKind>,
    pub chamfer_convention: String,
    /// Relative path → sha256 of every other file in the bundle.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub seed: u64,
    pub synth: SynthConfig,
    pub degrade: DegradeConfig,
    pub scene: Scene,
    pub partial_clouds: Vec<SplatCloud>,
    /// `kept[k][j]`: proxy/full primitive index behind partial primitive `j` of object `k`.
    pub kept: Vec<Vec<usize>>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Split {
    train: Vec<usize>,
    test: Vec<usize>,
}

fn obj_dir(k: usize) -> String {
    format!("objects/obj{k}")
}

fn mask_path(k: usize, v: usize) -> String {
    format!("masks/obj{k}/view{v:03}.png")
}

impl SceneBundle {
    pub fn generate(synth: &SynthConfig, degrade: &DegradeConfig, seed: u64) -> Result<Self> {
        synth.validate()?;
        degrade.validate()?;
        let scene = gen_scene(synth, seed)?;
        let (train, test) = drop_views(&scene.cams, degrade.drop_fraction, sub_seed(seed, 0))?;
        let train_cams: Vec<Camera> = train.iter().map(|&i| scene.cams[i].clone()).collect();
        let vis = visibility(&scene.scene_cloud()?, &train_cams);
        let mut partial_clouds = Vec::new();
        let mut kept = Vec::new();
        for (k, range) in scene.object_ranges().into_iter().enumerate() {
            let d = degrade_with_visibility(&scene.full_clouds[k], &vis[range], degrade, sub_seed(seed, 1 + k as u64))?;
            partial_clouds.push(d.cloud);
            kept.push(d.kept);
        }
        Ok(Self {
            seed,
            synth: synth.clone(),
            degrade: *degrade,
            scene,
            partial_clouds,
            kept,
            train,
            test,
        })
    }

    pub fn n_objects(&self) -> usize {
        self.scene.full_clouds.len()
    }

    pub fn check_object(&self, k: usize) -> Result<()> {
        if k >= self.n_objects() {
            return Err(Error::NotFound(format!("object {k} (bundle has {})", self.n_objects())));
        }
        Ok(())
    }

    pub fn cams(&self, views: &[usize]) -> Vec<Camera> {
        views.iter().map(|&v| self.scene.cams[v].clone()).collect()
    }

    pub fn masks(&self, k: usize, views: &[usize]) -> Vec<Mask> {
        views.iter().map(|&v| self.scene.masks[k][v].clone()).collect()
    }

    pub fn config_sha256(&self) -> Result<String> {
        let v = serde_json::json!({ "seed": self.seed, "synth": self.synth, "degrade": self.degrade });
        Ok(hex(&Sha256::digest(serde_json::to_vec(&v)?)))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<BundleManifest> {
        let dir = dir.as_ref();
        let mut written: Vec<String> = Vec::new();
        let mut put = |rel: String| -> Result<PathBuf> {
            let p = dir.join(&rel);
            if let Some(parent) = p.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            written.push(rel);
            Ok(p)
        };
        save_cameras(&self.scene.cams, put("cameras.json".into())?)?;
        write_json(
            &Split {
                train: self.train.clone(),
                test: self.test.clone(),
            },
            put("split.json".into())?,
        )?;
        write_json(&self.scene.gt_transforms, put("gt_transforms.json".into())?)?;
        save_ply(&self.scene.plane, put("plane.ply".into())?)?;
        for k in 0..self.n_objects() {
            let o = obj_dir(k);
            save_ply(&self.scene.proxies[k], put(format!("{o}/proxy.ply"))?)?;
            save_ply(&self.scene.full_clouds[k], put(format!("{o}/full.ply"))?)?;
            save_ply(&self.partial_clouds[k], put(format!("{o}/partial.ply"))?)?;
            write_json(&self.kept[k], put(format!("{o}/kept.json"))?)?;
            for (v, m) in self.scene.masks[k].iter().enumerate() {
                save_mask_png(m, put(mask_path(k, v))?)?;
            }
        }
        let mut files = BTreeMap::new();
        for rel in written {
            files.insert(rel.clone(), file_sha256(dir.join(&rel))?);
        }
        let manifest = BundleManifest {
            format: FORMAT.into(),
            version: BUNDLE_VERSION,
            seed: self.seed,
            synth: self.synth.clone(),
            degrade: self.degrade,
            config_sha256: self.config_sha256()?,
            n_objects: self.n_objects(),
            n_views: self.scene.cams.len(),
            train: self.train.clone(),
            test: self.test.clone(),
            shapes: self.scene.shapes.clone(),
            chamfer_convention: CHAMFER_CONVENTION.into(),
            files,
        };
        write_json(&manifest, dir.join("manifest.json"))?;
        Ok(manifest)
    }

    pub fn load_manifest(dir: impl AsRef<Path>) -> Result<BundleManifest> {
        let m: BundleManifest = read_json(dir.as_ref().join("manifest.json"))?;
        if m.format != FORMAT || m.version != BUNDLE_VERSION {
            return Err(Error::Validation(format!("unsupported bundle {} v{}", m.format, m.version)));
        }
        Ok(m)
    }

    /// Loads a bundle, verifying every file hash recorded in the manifest.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let m = Self::load_manifest(dir)?;
        for (rel, hash) in &m.files {
            let got = file_sha256(dir.join(rel))?;
            if &got != hash {
                return Err(Error::Validation(format!("bundle file {rel} does not match its manifest hash")));
            }
        }
        let cams = load_cameras(dir.join("cameras.json"))?;
        let split: Split = read_json(dir.join("split.json"))?;
        let gt_transforms: Vec<AnisotropicTransform> = read_json(dir.join("gt_transforms.json"))?;
        let plane = load_ply(dir.join("plane.ply"))?;
        let (mut proxies, mut fulls, mut partials, mut kept, mut masks) = (vec![], vec![], vec![], vec![], vec![]);
        for k in 0..m.n_objects {
            let o = dir.join(obj_dir(k));
            proxies.push(load_ply(o.join("proxy.ply"))?);
            fulls.push(load_ply(o.join("full.ply"))?);
            partials.push(load_ply(o.join("partial.ply"))?);
            kept.push(read_json::<Vec<usize>>(o.join("kept.json"))?);
            masks.push(
                (0..cams.len())
                    .map(|v| load_mask_png(dir.join(mask_path(k, v))))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        if gt_transforms.len() != m.n_objects || cams.len() != m.n_views {
            return Err(Error::Validation("bundle contents disagree with the manifest".into()));
        }
        Ok(Self {
            seed: m.seed,
            synth: m.synth,
            degrade: m.degrade,
            scene: Scene {
                proxies,
                full_clouds: fulls,
                plane,
                cams,
                masks,
                gt_transforms,
                shapes: m.shapes,
            },
            partial_clouds: partials,
            kept,
            train: split.train,
            test: split.test,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            primitives_per_object: 200,
            n_views: 7,
            image_width: 48,
            image_height: 36,
            focal: 50.0,
            ..Default::default()
        }
    }

    #[test]
    fn round_trip_and_hash_stability() {
        let b = SceneBundle::generate(&small(), &DegradeConfig::default(), 11).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let m1 = b.save(d1.path()).unwrap();
        let m2 = SceneBundle::generate(&small(), &DegradeConfig::default(), 11).unwrap().save(d2.path()).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(
            file_sha256(d1.path().join("manifest.json")).unwrap(),
            file_sha256(d2.path().join("manifest.json")).unwrap()
        );
        let back = SceneBundle::load(d1.path()).unwrap();
        assert_eq!(back.kept, b.kept);
        assert_eq!(back.train, b.train);
        assert_eq!(back.scene.masks, b.scene.masks);
        assert_eq!(back.partial_clouds[0].len(), b.partial_clouds[0].len());
    }

    #[test]
    fn tampered_file_is_rejected() {
        let b = SceneBundle::generate(&small(), &DegradeConfig::default(), 12).unwrap();
        let d = tempfile::tempdir().unwrap();
        b.save(d.path()).unwrap();
        fs::write(d.path().join("split.json"), "{\"train\":[0],\"test\":[1]}\n").unwrap();
        assert!(matches!(SceneBundle::load(d.path()), Err(Error::Validation(_))));
    }
}
