//! OLAT stack directories (`olat.json` plus one PFM per light) and rig
//! weight files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{create_dir, pfm, read_file, write_file, IoError};
use crate::brdf::Direction;
use crate::color::Rgb;
use crate::lightstage::{LightRig, OlatStack, RigWeights};

pub const OLAT_MANIFEST_FILE: &str = "olat.json";
pub const OLAT_FORMAT: &str = "relume-olat";
pub const OLAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlatLight {
    pub file: String,
    pub direction: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlatManifest {
    pub format: String,
    pub version: u32,
    pub width: usize,
    pub height: usize,
    /// Rig weight each image was lit with.
    pub light_weight: f64,
    pub lights: Vec<OlatLight>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WeightsFile {
    weights: Vec<[f64; 3]>,
}

pub fn write_olat_stack(stack: &OlatStack, dir: &Path) -> Result<OlatManifest, IoError> {
    let (width, height) = stack.dims();
    let width_digits = stack.rig().count().to_string().len().max(3);
    let mut encoded = Vec::with_capacity(stack.images().len());
    let mut lights = Vec::with_capacity(stack.images().len());
    for (i, (img, d)) in stack.images().iter().zip(stack.rig().directions()).enumerate() {
        let file = format!("light_{i:0width_digits$}.pfm");
        encoded.push(pfm::encode_rgb(img)?);
        lights.push(OlatLight {
            file,
            direction: [d.x(), d.y(), d.z()],
        });
    }
    create_dir(dir)?;
    for (light, bytes) in lights.iter().zip(&encoded) {
        write_file(&dir.join(&light.file), bytes)?;
    }
    let manifest = OlatManifest {
        format: OLAT_FORMAT.into(),
        version: OLAT_VERSION,
        width,
        height,
        light_weight: stack.light_weight(),
        lights,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_file(&dir.join(OLAT_MANIFEST_FILE), text.as_bytes())?;
    Ok(manifest)
}

pub fn read_olat_stack(dir: &Path) -> Result<OlatStack, IoError> {
    let manifest: OlatManifest = serde_json::from_slice(&read_file(&dir.join(OLAT_MANIFEST_FILE))?)?;
    if manifest.format != OLAT_FORMAT || manifest.version != OLAT_VERSION {
        return Err(IoError::Manifest(format!(
            "unsupported OLAT manifest {} v{}",
            manifest.format, manifest.version
        )));
    }
    let mut directions = Vec::with_capacity(manifest.lights.len());
    let mut images = Vec::with_capacity(manifest.lights.len());
    for light in &manifest.lights {
        let [x, y, z] = light.direction;
        let d = Direction::new(x, y, z).map_err(|e| IoError::Manifest(format!("{}: {e}", light.file)))?;
        directions.push(d);
        let name = Path::new(&light.file);
        if name.components().count() != 1 || name.file_name().is_none() {
            return Err(IoError::Manifest(format!("bad image name `{}`", light.file)));
        }
        let img = pfm::decode(&read_file(&dir.join(name))?)?.into_rgb()?;
        if img.dims() != (manifest.width, manifest.height) {
            return Err(IoError::Manifest(format!("{} has the wrong size", light.file)));
        }
        images.push(img);
    }
    let rig = LightRig::from_directions(directions).map_err(|e| IoError::Manifest(e.to_string()))?;
    OlatStack::new(rig, images, manifest.light_weight).map_err(|e| IoError::Manifest(e.to_string()))
}

pub fn write_weights(weights: &RigWeights, path: &Path) -> Result<(), IoError> {
    let file = WeightsFile {
        weights: weights.weights.iter().map(|w| w.to_array()).collect(),
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_weights(path: &Path) -> Result<RigWeights, IoError> {
    let file: WeightsFile = serde_json::from_slice(&read_file(path)?)?;
    let weights: Vec<Rgb> = file.weights.into_iter().map(Rgb::from_array).collect();
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(IoError::Manifest("non-finite rig weight".into()));
    }
    Ok(RigWeights { weights })
}
