//! Scene datasets on disk.
//!
//! ```text
//! DIR/cam_weights.tsr
//! DIR/scene_0000/{image.ppm, gt.pgm, tags.txt, conv4.tsr, conv5.tsr,
//!                 cam_features.tsr, regions.pgm}
//! ```

use std::path::{Path, PathBuf};

use crate::cam::CamWeights;
use crate::error::{Error, Result};
use crate::io::{self, pnm};

use super::synth::{cam_weights, scene_seed, synth_scene, SynthConfig, SynthScene};

pub const CAM_WEIGHTS_FILE: &str = "cam_weights.tsr";

#[derive(Debug, Clone)]
pub struct Dataset {
    pub cam_weights: CamWeights,
    pub names: Vec<String>,
    pub scenes: Vec<SynthScene>,
}

impl Dataset {
    pub fn classes(&self) -> usize {
        self.cam_weights.classes()
    }
}

/// Scenes `0..count` of the dataset seeded by `seed`.
pub fn generate(seed: u64, count: usize, cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let scenes = (0..count)
        .map(|i| synth_scene(scene_seed(seed, i), cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        cam_weights: cam_weights(cfg.classes),
        names: (0..count).map(scene_name).collect(),
        scenes,
    })
}

pub fn scene_name(index: usize) -> String {
    format!("scene_{index:04}")
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn write_scene(dir: &Path, scene: &SynthScene) -> Result<()> {
    create_dir(dir)?;
    pnm::write_color(&dir.join("image.ppm"), &scene.image)?;
    pnm::write_label_map(&dir.join("gt.pgm"), &scene.gt)?;
    io::write_tags(&dir.join("tags.txt"), &scene.tags)?;
    io::write_grid3(&dir.join("conv4.tsr"), &scene.conv4)?;
    io::write_grid3(&dir.join("conv5.tsr"), &scene.conv5)?;
    io::write_grid3(&dir.join("cam_features.tsr"), &scene.cam_features)?;
    pnm::write_regions(&dir.join("regions.pgm"), &scene.regions)
}

pub fn read_scene(dir: &Path, classes: usize) -> Result<SynthScene> {
    let image = pnm::read_color(&dir.join("image.ppm"))?;
    let gt_path = dir.join("gt.pgm");
    let gt = pnm::read_label_map(&gt_path)?;
    if gt.max_label() as usize > classes {
        return Err(Error::format(
            gt_path,
            format!("label {} exceeds {classes} classes", gt.max_label()),
        ));
    }
    let tags = io::read_tags(&dir.join("tags.txt"), classes + 1)?;
    let conv4 = io::read_grid3(&dir.join("conv4.tsr"))?;
    let conv5 = io::read_grid3(&dir.join("conv5.tsr"))?;
    let cam_features = io::read_grid3(&dir.join("cam_features.tsr"))?;
    let regions = pnm::read_regions(&dir.join("regions.pgm"))?;
    if image.spatial() != gt.dims() || regions.dims() != gt.dims() {
        return Err(Error::dim(format!(
            "{}: image {:?}, ground truth {:?} and regions {:?} differ",
            dir.display(),
            image.spatial(),
            gt.dims(),
            regions.dims()
        )));
    }
    Ok(SynthScene {
        image,
        gt,
        tags,
        conv4,
        conv5,
        cam_features,
        regions,
    })
}

pub fn write_dataset(root: &Path, data: &Dataset) -> Result<()> {
    create_dir(root)?;
    io::write_grid2(&root.join(CAM_WEIGHTS_FILE), &data.cam_weights.to_grid())?;
    for (name, scene) in data.names.iter().zip(&data.scenes) {
        write_scene(&root.join(name), scene)?;
    }
    Ok(())
}

/// Scene directories under `root`, sorted by name.
pub fn scene_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        let is_scene = path.is_dir()
            && path
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("scene_"));
        if is_scene {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

pub fn read_dataset(root: &Path) -> Result<Dataset> {
    let cam_weights = CamWeights::from_grid(&io::read_grid2(&root.join(CAM_WEIGHTS_FILE))?);
    let dirs = scene_dirs(root)?;
    if dirs.is_empty() {
        return Err(Error::format(root, "no scene_* directories"));
    }
    let scenes = dirs
        .iter()
        .map(|d| read_scene(d, cam_weights.classes()))
        .collect::<Result<Vec<_>>>()?;
    let names = dirs
        .iter()
        .map(|d| d.file_name().unwrap_or_default().to_string_lossy().into_owned())
        .collect();
    Ok(Dataset {
        cam_weights,
        names,
        scenes,
    })
}
