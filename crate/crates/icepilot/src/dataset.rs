//! Dataset directories.
//!
//! ```text
//! <root>/manifest.json
//! <root>/scenes/scene-<seed>.json
//! <root>/shards/<seed>-<scene digest>/<index>.slc   (+ .json sidecar)
//! ```
//!
//! A shard is named by the SHA-256 prefix of its scene JSON, so records can
//! never be paired with a different scene than the one that rendered them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use icepilot_core::derive_seed;
use icepilot_core::estimator::labelled_render;
use icepilot_core::fan::SliceMeta;
use icepilot_core::kinematics::JointState;
use icepilot_core::nn::{pool_image, ModelConfig, PoseLabel, TrainSample};
use icepilot_core::phantom::{
    build_target_states, generate_scene, template_scene, AnatomyScene, TargetState, ViewClass,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::formats::{read_json, read_slice, sidecar_path, write_json, write_slice};
use crate::{Config, Error};

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceRecord {
    pub scene_seed: u64,
    pub joints: JointState,
    pub view: ViewClass,
    pub label: PoseLabel,
    pub meta: SliceMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardEntry {
    pub scene_seed: u64,
    pub scene_file: String,
    pub shard_dir: String,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub shards: Vec<ShardEntry>,
}

impl Manifest {
    pub fn record_count(&self) -> usize {
        self.shards.iter().map(|s| s.records).sum()
    }
}

/// Seed of the `i`-th generated scene for a dataset seed.
pub fn scene_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(1_000).wrapping_add(i as u64 + 1)
}

pub fn scene_for_seed(seed: u64, cfg: &Config) -> Result<AnatomyScene, Error> {
    if seed == 0 {
        Ok(template_scene())
    } else {
        Ok(generate_scene(seed, &cfg.scene.variation, &cfg.catheter)?)
    }
}

fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Generates `scenes` scenes with `renders` labelled slices each.
pub fn generate(
    root: &Path,
    cfg: &Config,
    scenes: usize,
    renders: usize,
    seed: u64,
) -> Result<Manifest, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shards = Vec::with_capacity(scenes);
    for i in 0..scenes {
        let s = scene_seed(seed, i);
        let scene = scene_for_seed(s, cfg)?;
        let targets = build_target_states(&scene, &cfg.catheter)?;
        let scene_json = serde_json::to_vec_pretty(&scene).expect("scene serializes");
        let scene_file = format!("scenes/scene-{s}.json");
        let scene_path = root.join(&scene_file);
        fs::create_dir_all(root.join("scenes")).map_err(|e| Error::io(root, e))?;
        fs::write(&scene_path, &scene_json).map_err(|e| Error::io(&scene_path, e))?;
        let shard_dir = format!("shards/{s}-{}", &digest_hex(&scene_json)[..12]);
        for k in 0..renders {
            let joints = cfg.scene.starts.sample(&cfg.catheter, &mut rng);
            let view = ViewClass::ALL[rng.random_range(0..ViewClass::ALL.len())];
            let (image, label) = labelled_render(
                &scene,
                &targets,
                &cfg.catheter,
                &cfg.fan,
                &joints,
                view,
                derive_seed(&[seed, s, k as u64]),
            )?;
            let record = SliceRecord {
                scene_seed: s,
                joints,
                view,
                label,
                meta: image.meta.clone(),
            };
            write_slice(
                &root.join(&shard_dir).join(format!("{k:06}.slc")),
                &image,
                &record,
            )?;
        }
        shards.push(ShardEntry {
            scene_seed: s,
            scene_file,
            shard_dir,
            records: renders,
        });
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        seed,
        config_hash: cfg.hash(),
        shards,
    };
    write_json(&root.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<Manifest, Error> {
    let m: Manifest = read_json(&root.join(MANIFEST))?;
    if m.version != FORMAT_VERSION {
        return Err(Error::format(
            &root.join(MANIFEST),
            format!("unsupported dataset version {}", m.version),
        ));
    }
    Ok(m)
}

pub type SceneSet = Vec<(AnatomyScene, BTreeMap<ViewClass, TargetState>)>;

/// Scenes listed in the manifest with their target states, in manifest order.
pub fn load_scenes(root: &Path, cfg: &Config) -> Result<SceneSet, Error> {
    let manifest = read_manifest(root)?;
    manifest
        .shards
        .iter()
        .map(|s| {
            let scene: AnatomyScene = read_json(&root.join(&s.scene_file))?;
            let targets = build_target_states(&scene, &cfg.catheter)?;
            Ok((scene, targets))
        })
        .collect()
}

/// Slice files of one shard in index order.
fn shard_files(dir: &Path) -> Result<Vec<PathBuf>, Error> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "slc"))
        .collect();
    files.sort();
    Ok(files)
}

/// Every record with its pooled slice, in deterministic shard/index order.
pub fn load_samples(root: &Path, model: &ModelConfig) -> Result<Vec<TrainSample>, Error> {
    let manifest = read_manifest(root)?;
    let mut out = Vec::with_capacity(manifest.record_count());
    for shard in &manifest.shards {
        let files = shard_files(&root.join(&shard.shard_dir))?;
        if files.len() != shard.records {
            return Err(Error::format(
                &root.join(&shard.shard_dir),
                format!("expected {} records, found {}", shard.records, files.len()),
            ));
        }
        for f in files {
            let record: SliceRecord = read_json(&sidecar_path(&f))?;
            let image = read_slice(&f, record.meta.clone())?;
            out.push(TrainSample {
                pooled: pool_image(&image, model)?,
                view: record.view,
                label: record.label,
            });
        }
    }
    Ok(out)
}
