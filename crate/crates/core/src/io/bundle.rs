//! Bundle directories: a JSON manifest (`manifest.json`) next to one file
//! per surface map, plus an optional viewer section with the environment,
//! its prefiltered lobes and a reference render.

use std::path::{Component, Path};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{create_dir, pfm, png16, read_file, tonemap_srgb8, write_file, IoError};
use crate::brdf::{Direction, ROUGHNESS_FLOOR, SPECULAR_DENOM_FLOOR};
use crate::color::Rgb;
use crate::envlight::{
    convolve_phong, EnvMap, DEFAULT_CONVOLVED_HEIGHT, DEFAULT_CONVOLVED_WIDTH, DEFAULT_PHONG_EXPONENTS,
    ENV_CONVENTION,
};
use crate::image::Image;
use crate::renderer::{render_pbr, IntrinsicBundle};
use crate::scenegen::SceneSpec;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BUNDLE_FORMAT: &str = "relume-bundle";
pub const BUNDLE_VERSION: u32 = 1;
/// Height of the downsampled environment the viewer sums directly.
pub const PREVIEW_ENV_HEIGHT: usize = 16;
pub const TONEMAP_TAG: &str = "log1p-clamp-srgb8";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    /// 32-bit float PFM, exact.
    Pfm,
    /// 16-bit PNG; normals as `(n + 1) / 2`.
    Png16,
    /// 1-bit grayscale PNG, masks only.
    Png1,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapRef {
    pub file: String,
    pub encoding: Encoding,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapTable {
    pub normal: MapRef,
    pub albedo: MapRef,
    pub roughness: MapRef,
    pub f0: MapRef,
    pub mask: MapRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvRef {
    pub file: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LobeRef {
    pub exponent: u32,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRef {
    /// Linear PBR render, PFM.
    pub linear: String,
    /// Tone-mapped 8-bit sRGB PNG of the same render.
    pub display: String,
    pub tonemap: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadingConstants {
    pub roughness_floor: f64,
    pub specular_denominator_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewerSection {
    pub view: [f64; 3],
    pub env: EnvRef,
    pub env_preview: EnvRef,
    pub convolved_width: usize,
    pub convolved_height: usize,
    pub convolved: Vec<LobeRef>,
    pub reference: ReferenceRef,
    pub shading: ShadingConstants,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format: String,
    pub version: u32,
    pub width: usize,
    pub height: usize,
    pub env_convention: String,
    pub maps: MapTable,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub viewer: Option<ViewerSection>,
}

/// Encoding per continuous map. Masks are always 1-bit PNG.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapEncodings {
    pub normal: Encoding,
    pub albedo: Encoding,
    pub roughness: Encoding,
    pub f0: Encoding,
}

impl Default for MapEncodings {
    /// Normals as PFM so that re-exporting an imported bundle is
    /// byte-stable; everything else as 16-bit PNG.
    fn default() -> Self {
        MapEncodings {
            normal: Encoding::Pfm,
            albedo: Encoding::Png16,
            roughness: Encoding::Png16,
            f0: Encoding::Png16,
        }
    }
}

fn ext(enc: Encoding) -> &'static str {
    match enc {
        Encoding::Pfm => "pfm",
        Encoding::Png16 | Encoding::Png1 => "png",
    }
}

fn continuous(enc: Encoding, map: &str) -> Result<(), IoError> {
    if enc == Encoding::Png1 {
        return Err(IoError::Manifest(format!("{map} cannot use 1-bit encoding")));
    }
    Ok(())
}

/// Rejects absolute paths and parent references in manifest file names.
fn resolve(dir: &Path, file: &str) -> Result<std::path::PathBuf, IoError> {
    let rel = Path::new(file);
    if file.is_empty() || !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return Err(IoError::Manifest(format!("file name `{file}` must stay inside the bundle")));
    }
    Ok(dir.join(rel))
}

fn encode_normal(img: &Image<Vector3<f64>>, enc: Encoding) -> Result<Vec<u8>, IoError> {
    match enc {
        Encoding::Pfm => {
            let data: Vec<f32> = img.pixels().iter().flat_map(|n| n.iter().map(|&c| c as f32)).collect();
            pfm::encode(img.width(), img.height(), 3, &data)
        }
        _ => png16::encode_normals(img),
    }
}

fn decode_normal(bytes: &[u8], enc: Encoding) -> Result<Image<Vector3<f64>>, IoError> {
    match enc {
        Encoding::Pfm => {
            let p = pfm::decode(bytes)?;
            if p.channels != 3 {
                return Err(IoError::Unsupported("normal map needs 3 channels".into()));
            }
            let pixels = p
                .data
                .chunks_exact(3)
                .map(|c| Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64))
                .collect();
            Ok(Image::from_vec(p.width, p.height, pixels).expect("length checked on decode"))
        }
        Encoding::Png16 => png16::decode_normals(bytes),
        Encoding::Png1 => Err(IoError::Manifest("normal cannot use 1-bit encoding".into())),
    }
}

fn encode_color(img: &Image<Rgb>, enc: Encoding) -> Result<Vec<u8>, IoError> {
    match enc {
        Encoding::Pfm => pfm::encode_rgb(img),
        _ => png16::encode_rgb16(img),
    }
}

fn decode_color(bytes: &[u8], enc: Encoding) -> Result<Image<Rgb>, IoError> {
    match enc {
        Encoding::Pfm => pfm::decode(bytes)?.into_rgb(),
        Encoding::Png16 => png16::decode_rgb16(bytes),
        Encoding::Png1 => Err(IoError::Manifest("albedo cannot use 1-bit encoding".into())),
    }
}

fn encode_scalar(img: &Image<f64>, enc: Encoding) -> Result<Vec<u8>, IoError> {
    match enc {
        Encoding::Pfm => pfm::encode_gray(img),
        _ => png16::encode_gray16(img),
    }
}

fn decode_scalar(bytes: &[u8], enc: Encoding) -> Result<Image<f64>, IoError> {
    match enc {
        Encoding::Pfm => pfm::decode(bytes)?.into_gray(),
        Encoding::Png16 => png16::decode_gray16(bytes),
        Encoding::Png1 => Err(IoError::Manifest("scalar map cannot use 1-bit encoding".into())),
    }
}

fn map_ref(name: &str, enc: Encoding) -> MapRef {
    MapRef {
        file: format!("{name}.{}", ext(enc)),
        encoding: enc,
    }
}

fn write_manifest(dir: &Path, manifest: &BundleManifest) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    write_file(&dir.join(MANIFEST_FILE), text.as_bytes())
}

pub fn read_manifest(dir: &Path) -> Result<BundleManifest, IoError> {
    let manifest: BundleManifest = serde_json::from_slice(&read_file(&dir.join(MANIFEST_FILE))?)?;
    if manifest.format != BUNDLE_FORMAT {
        return Err(IoError::Manifest(format!("unknown format tag `{}`", manifest.format)));
    }
    if manifest.version != BUNDLE_VERSION {
        return Err(IoError::Manifest(format!("unsupported version {}", manifest.version)));
    }
    if manifest.env_convention != ENV_CONVENTION {
        return Err(IoError::Manifest(format!(
            "environment convention `{}`, expected `{ENV_CONVENTION}`",
            manifest.env_convention
        )));
    }
    if manifest.maps.mask.encoding != Encoding::Png1 {
        return Err(IoError::Manifest("mask must use 1-bit encoding".into()));
    }
    Ok(manifest)
}

/// Writes the five surface maps and `manifest.json` into `dir`.
pub fn export_bundle(
    bundle: &IntrinsicBundle,
    dir: &Path,
    scene: Option<&SceneSpec>,
    encodings: MapEncodings,
) -> Result<BundleManifest, IoError> {
    bundle
        .check_resolution()
        .map_err(|e| IoError::Value(e.to_string()))?;
    for (enc, name) in [
        (encodings.normal, "normal"),
        (encodings.albedo, "albedo"),
        (encodings.roughness, "roughness"),
        (encodings.f0, "f0"),
    ] {
        continuous(enc, name)?;
    }
    let maps = MapTable {
        normal: map_ref("normal", encodings.normal),
        albedo: map_ref("albedo", encodings.albedo),
        roughness: map_ref("roughness", encodings.roughness),
        f0: map_ref("f0", encodings.f0),
        mask: map_ref("mask", Encoding::Png1),
    };
    // Encode everything before touching the filesystem.
    let files = [
        (&maps.normal.file, encode_normal(&bundle.normal, encodings.normal)?),
        (&maps.albedo.file, encode_color(&bundle.albedo, encodings.albedo)?),
        (&maps.roughness.file, encode_scalar(&bundle.roughness, encodings.roughness)?),
        (&maps.f0.file, encode_scalar(&bundle.f0, encodings.f0)?),
        (&maps.mask.file, png16::encode_mask(&bundle.mask)?),
    ];
    create_dir(dir)?;
    for (file, bytes) in &files {
        write_file(&dir.join(file), bytes)?;
    }
    let manifest = BundleManifest {
        format: BUNDLE_FORMAT.into(),
        version: BUNDLE_VERSION,
        width: bundle.width(),
        height: bundle.height(),
        env_convention: ENV_CONVENTION.into(),
        maps,
        scene: scene.cloned(),
        viewer: None,
    };
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

fn check_size<T>(img: &Image<T>, manifest: &BundleManifest, map: &str) -> Result<(), IoError> {
    if img.dims() != (manifest.width, manifest.height) {
        return Err(IoError::Manifest(format!(
            "{map} is {}x{}, manifest says {}x{}",
            img.width(),
            img.height(),
            manifest.width,
            manifest.height
        )));
    }
    Ok(())
}

/// Reads a bundle directory, checking the manifest and every map.
pub fn import_bundle(dir: &Path) -> Result<(IntrinsicBundle, BundleManifest), IoError> {
    let manifest = read_manifest(dir)?;
    let m = &manifest.maps;
    let load = |r: &MapRef| read_file(&resolve(dir, &r.file)?);
    let normal = decode_normal(&load(&m.normal)?, m.normal.encoding)?;
    check_size(&normal, &manifest, "normal")?;
    let albedo = decode_color(&load(&m.albedo)?, m.albedo.encoding)?;
    check_size(&albedo, &manifest, "albedo")?;
    let roughness = decode_scalar(&load(&m.roughness)?, m.roughness.encoding)?;
    check_size(&roughness, &manifest, "roughness")?;
    let f0 = decode_scalar(&load(&m.f0)?, m.f0.encoding)?;
    check_size(&f0, &manifest, "f0")?;
    let mask = png16::decode_mask(&load(&m.mask)?)?;
    check_size(&mask, &manifest, "mask")?;
    let bundle = IntrinsicBundle::new(normal, albedo, roughness, f0, mask)
        .map_err(|e| IoError::Manifest(e.to_string()))?;
    Ok((bundle, manifest))
}

/// The reference render stored in viewer bundles: the PBR output at the
/// fixed frontal view.
pub fn reference_render(bundle: &IntrinsicBundle, env: &EnvMap) -> Result<Image<Rgb>, IoError> {
    render_pbr(bundle, env, &Direction::VIEW)
        .map(|out| out.pbr)
        .map_err(|e| IoError::Value(e.to_string()))
}

fn preview_env(env: &EnvMap) -> Result<EnvMap, IoError> {
    let h = env.height();
    if h <= PREVIEW_ENV_HEIGHT {
        return Ok(env.clone());
    }
    Ok(env.downsample(h / PREVIEW_ENV_HEIGHT)?)
}

/// Exports the bundle plus everything an interactive viewer needs.
///
/// Maps and the environment are quantized to their file encodings first and
/// the reference is rendered from those decoded values, so re-rendering the
/// imported directory reproduces `reference.pfm` bit for bit.
pub fn export_viewer_bundle(
    bundle: &IntrinsicBundle,
    env: &EnvMap,
    dir: &Path,
    scene: Option<&SceneSpec>,
) -> Result<BundleManifest, IoError> {
    let mut manifest = export_bundle(bundle, dir, scene, MapEncodings::default())?;
    let (stored, _) = import_bundle(dir)?;

    let env_bytes = pfm::encode_rgb(env.texels())?;
    let env = EnvMap::new(pfm::decode(&env_bytes)?.into_rgb()?)?;
    write_file(&dir.join("env.pfm"), &env_bytes)?;
    let preview = preview_env(&env)?;
    write_file(&dir.join("env_preview.pfm"), &pfm::encode_rgb(preview.texels())?)?;

    let convolved = convolve_phong(
        &env,
        &DEFAULT_PHONG_EXPONENTS,
        DEFAULT_CONVOLVED_HEIGHT,
        DEFAULT_CONVOLVED_WIDTH,
    )?;
    let mut lobes = Vec::new();
    for (p, map) in convolved.exponents().iter().zip(convolved.maps()) {
        let file = format!("env_phong_{p}.pfm");
        write_file(&dir.join(&file), &pfm::encode_rgb(map)?)?;
        lobes.push(LobeRef { exponent: *p, file });
    }

    let reference = reference_render(&stored, &env)?;
    write_file(&dir.join("reference.pfm"), &pfm::encode_rgb(&reference)?)?;
    write_file(
        &dir.join("reference.png"),
        &png16::encode_srgb8(&tonemap_srgb8(&reference))?,
    )?;

    let view = Direction::VIEW;
    manifest.viewer = Some(ViewerSection {
        view: [view.x(), view.y(), view.z()],
        env: EnvRef {
            file: "env.pfm".into(),
            width: env.width(),
            height: env.height(),
        },
        env_preview: EnvRef {
            file: "env_preview.pfm".into(),
            width: preview.width(),
            height: preview.height(),
        },
        convolved_width: DEFAULT_CONVOLVED_WIDTH,
        convolved_height: DEFAULT_CONVOLVED_HEIGHT,
        convolved: lobes,
        reference: ReferenceRef {
            linear: "reference.pfm".into(),
            display: "reference.png".into(),
            tonemap: TONEMAP_TAG.into(),
        },
        shading: ShadingConstants {
            roughness_floor: ROUGHNESS_FLOOR,
            specular_denominator_floor: SPECULAR_DENOM_FLOOR,
        },
    });
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

/// Everything a viewer bundle directory decodes to.
#[derive(Debug, Clone)]
pub struct ViewerBundle {
    pub bundle: IntrinsicBundle,
    pub manifest: BundleManifest,
    pub env: EnvMap,
    pub env_preview: EnvMap,
    pub convolved: Vec<(u32, Image<Rgb>)>,
    pub reference: Image<Rgb>,
    pub reference_display: Image<Rgb>,
}

fn load_env(dir: &Path, r: &EnvRef) -> Result<EnvMap, IoError> {
    let env = EnvMap::new(pfm::decode(&read_file(&resolve(dir, &r.file)?)?)?.into_rgb()?)?;
    if (env.width(), env.height()) != (r.width, r.height) {
        return Err(IoError::Manifest(format!("{} has the wrong size", r.file)));
    }
    Ok(env)
}

/// Imports a viewer bundle, decoding and size-checking every referenced file.
pub fn import_viewer_bundle(dir: &Path) -> Result<ViewerBundle, IoError> {
    let (bundle, manifest) = import_bundle(dir)?;
    let viewer = manifest
        .viewer
        .clone()
        .ok_or_else(|| IoError::Manifest("no viewer section".into()))?;
    let env = load_env(dir, &viewer.env)?;
    let env_preview = load_env(dir, &viewer.env_preview)?;
    let mut convolved = Vec::new();
    for lobe in &viewer.convolved {
        let map = pfm::decode(&read_file(&resolve(dir, &lobe.file)?)?)?.into_rgb()?;
        if map.dims() != (viewer.convolved_width, viewer.convolved_height) {
            return Err(IoError::Manifest(format!("{} has the wrong size", lobe.file)));
        }
        convolved.push((lobe.exponent, map));
    }
    let reference = pfm::decode(&read_file(&resolve(dir, &viewer.reference.linear)?)?)?.into_rgb()?;
    check_size(&reference, &manifest, "reference")?;
    let reference_display = png16::decode_display(&read_file(&resolve(dir, &viewer.reference.display)?)?)?;
    check_size(&reference_display, &manifest, "reference display")?;
    Ok(ViewerBundle {
        bundle,
        manifest,
        env,
        env_preview,
        convolved,
        reference,
        reference_display,
    })
}
