//! `relume`: one subcommand per toolkit operation.
//!
//! Exit codes: 0 success, 2 usage error, 3 invalid or inconsistent data,
//! 4 filesystem failure.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use serde_json::json;

use relume_core::envlight::{convolve_phong, diffuse_shading, DEFAULT_CONVOLVED_HEIGHT, DEFAULT_PHONG_EXPONENTS};
use relume_core::evalkit;
use relume_core::intrinsics::{recover_albedo, validate_bundle, DEFAULT_SHADING_EPS};
use relume_core::io::bundle::{export_bundle, export_viewer_bundle, import_bundle, MapEncodings};
use relume_core::io::olat::{read_olat_stack, read_weights, write_olat_stack, write_weights};
use relume_core::io::{self, png16, IoError};
use relume_core::lightstage::{
    composite, make_rig, photometric_stereo, project_env_to_rig, render_olat, OlatComponent,
    DEFAULT_RIG_SIZE, DEFAULT_SHADOW_THRESHOLD,
};
use relume_core::maskgen::{gen_freeform, gen_outpaint, gen_patch, sample_mask, MaskPolicy};
use relume_core::renderer::{render_pbr_with, RenderOptions};
use relume_core::scenegen::{generate, SceneSpec};
use relume_core::{Direction, Image, Rgb};

#[derive(Parser)]
#[command(name = "relume", version, about = "Physically based relighting toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SceneKindArg {
    Sphere,
    Heightfield,
}

#[derive(Clone, Copy, ValueEnum)]
enum ComponentArg {
    Diffuse,
    Pbr,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskKindArg {
    Mixed,
    Patch,
    Outpaint,
    Freeform,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene and write it as a bundle directory.
    GenScene {
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value = "sphere")]
        kind: SceneKindArg,
        #[arg(long, default_value_t = 128)]
        resolution: usize,
        /// TOML scene description; `--seed` overrides its seed.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render diffuse, specular and PBR images of a bundle.
    Render {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        env: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Merge k×k environment texels per light sample.
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Re-render a bundle under a new environment.
    Relight {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        env: PathBuf,
        /// Output image (.pfm or .hdr).
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-convolve an environment with cosine-power lobes.
    ConvolveHdri {
        #[arg(long)]
        env: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_PHONG_EXPONENTS)]
        exponents: Vec<u32>,
        /// Output height; width is twice this.
        #[arg(long, default_value_t = DEFAULT_CONVOLVED_HEIGHT)]
        height: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one image per light of a synthetic rig.
    OlatRender {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_RIG_SIZE)]
        lights: usize,
        #[arg(long, value_enum, default_value = "pbr")]
        component: ComponentArg,
        /// Output stack directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Relight an OLAT stack with rig weights or a projected environment.
    #[command(group(ArgGroup::new("lighting").required(true).args(["env", "weights"])))]
    OlatComposite {
        #[arg(long)]
        stack: PathBuf,
        #[arg(long)]
        env: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Also write the weights used, as JSON.
        #[arg(long)]
        save_weights: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover normals and albedo from an OLAT stack.
    PhotometricStereo {
        #[arg(long)]
        stack: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SHADOW_THRESHOLD)]
        shadow_threshold: f64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Divide a diffuse render by the environment's diffuse shading.
    RecoverAlbedo {
        /// Diffuse-only render.
        #[arg(long)]
        render: PathBuf,
        /// Bundle supplying the normals.
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        env: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SHADING_EPS)]
        eps: f64,
        /// Output albedo image (.pfm or .hdr).
        #[arg(long)]
        out: PathBuf,
        /// Optional 1-bit PNG of flagged pixels.
        #[arg(long)]
        flagged: Option<PathBuf>,
    },
    /// Generate corruption masks.
    GenMasks {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 256)]
        height: usize,
        #[arg(long, default_value_t = 256)]
        width: usize,
        #[arg(long, value_enum, default_value = "mixed")]
        kind: MaskKindArg,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a prediction with a reference image.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, alias = "reference")]
        r#ref: PathBuf,
        /// Restrict the L1 term to pixels set in this PNG mask.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Export a bundle, its environment and a reference render for the viewer.
    ExportViewer {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Data(String),
    Fs(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Fs(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Fs(m) => m,
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        if e.is_data_error() {
            Failure::Data(e.to_string())
        } else {
            Failure::Fs(e.to_string())
        }
    }
}

fn data(e: impl Display) -> Failure {
    Failure::Data(e.to_string())
}

/// Reads `.pfm` / `.hdr` as linear HDR and `.png` as display values.
fn read_image(path: &Path) -> Result<Image<Rgb>, Failure> {
    let is_png = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        Ok(png16::decode_display(&io::read_file(path)?)?)
    } else {
        Ok(io::read_hdr(path)?)
    }
}

fn print_json(value: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&value).expect("JSON values serialize"));
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::GenScene {
            seed,
            kind,
            resolution,
            config,
            out,
        } => {
            let mut spec = match (config, kind) {
                (Some(path), _) => {
                    let bytes = io::read_file(&path)?;
                    SceneSpec::from_toml(&String::from_utf8_lossy(&bytes)).map_err(data)?
                }
                (None, SceneKindArg::Sphere) => SceneSpec::sphere(resolution, 0.5, 0.4, 0.04),
                (None, SceneKindArg::Heightfield) => SceneSpec::heightfield(resolution, seed),
            };
            spec.seed = seed;
            let bundle = generate(&spec).map_err(data)?;
            export_bundle(&bundle, &out, Some(&spec), MapEncodings::default())?;
            print_json(json!({ "bundle": out, "width": bundle.width(), "height": bundle.height() }));
        }
        Command::Render {
            bundle,
            env,
            out,
            stride,
        } => {
            let (bundle, _) = import_bundle(&bundle)?;
            let env = io::read_env(&env)?;
            let opts = RenderOptions { texel_stride: stride };
            let r = render_pbr_with(&bundle, &env, &Direction::VIEW, &opts).map_err(data)?;
            io::create_dir(&out)?;
            io::write_hdr(&out.join("diffuse.pfm"), &r.diffuse)?;
            io::write_hdr(&out.join("specular.pfm"), &r.specular)?;
            io::write_hdr(&out.join("pbr.pfm"), &r.pbr)?;
            io::write_file(&out.join("pbr.png"), &png16::encode_srgb8(&io::tonemap_srgb8(&r.pbr))?)?;
        }
        Command::Relight { bundle, env, out } => {
            let (bundle, _) = import_bundle(&bundle)?;
            let env = io::read_env(&env)?;
            let img = relume_core::renderer::relight(&bundle, &env, &Direction::VIEW).map_err(data)?;
            io::write_hdr(&out, &img)?;
        }
        Command::ConvolveHdri {
            env,
            exponents,
            height,
            out,
        } => {
            let env = io::read_env(&env)?;
            let conv = convolve_phong(&env, &exponents, height, 2 * height).map_err(data)?;
            io::create_dir(&out)?;
            for (p, map) in conv.exponents().iter().zip(conv.maps()) {
                io::write_hdr(&out.join(format!("env_phong_{p}.pfm")), map)?;
            }
        }
        Command::OlatRender {
            bundle,
            seed,
            lights,
            component,
            out,
        } => {
            let (bundle, _) = import_bundle(&bundle)?;
            let rig = make_rig(lights, seed).map_err(data)?;
            let component = match component {
                ComponentArg::Diffuse => OlatComponent::Diffuse,
                ComponentArg::Pbr => OlatComponent::Pbr,
            };
            let stack = render_olat(&bundle, &rig, &Direction::VIEW, component).map_err(data)?;
            write_olat_stack(&stack, &out)?;
        }
        Command::OlatComposite {
            stack,
            env,
            weights,
            save_weights,
            out,
        } => {
            let stack = read_olat_stack(&stack)?;
            let weights = match (env, weights) {
                (Some(env), None) => project_env_to_rig(&io::read_env(&env)?, stack.rig()),
                (None, Some(path)) => read_weights(&path)?,
                _ => return Err(Failure::Usage("give exactly one of --env and --weights".into())),
            };
            if let Some(path) = save_weights {
                write_weights(&weights, &path)?;
            }
            let img = composite(&stack, &weights).map_err(data)?;
            io::write_hdr(&out, &img)?;
        }
        Command::PhotometricStereo {
            stack,
            shadow_threshold,
            out,
        } => {
            let stack = read_olat_stack(&stack)?;
            let fit = photometric_stereo(&stack, shadow_threshold);
            io::create_dir(&out)?;
            let normal = fit.normal.map(|n| Rgb::new(n.x, n.y, n.z));
            io::write_hdr(&out.join("normal.pfm"), &normal)?;
            io::write_hdr(&out.join("albedo.pfm"), &fit.albedo)?;
            io::write_file(&out.join("residual.pfm"), &io::pfm::encode_gray(&fit.residual)?)?;
            io::write_file(&out.join("valid.png"), &png16::encode_mask(&fit.valid)?)?;
            let valid = fit.valid.pixels().iter().filter(|&&v| v).count();
            print_json(json!({ "valid_pixels": valid, "pixels": fit.valid.len() }));
        }
        Command::RecoverAlbedo {
            render,
            bundle,
            env,
            eps,
            out,
            flagged,
        } => {
            let render = read_image(&render)?;
            let (bundle, _) = import_bundle(&bundle)?;
            let env = io::read_env(&env)?;
            let conv = convolve_phong(&env, &[1], DEFAULT_CONVOLVED_HEIGHT, 2 * DEFAULT_CONVOLVED_HEIGHT)
                .map_err(data)?;
            let shading = diffuse_shading(&conv, &bundle.normal).map_err(data)?;
            let est = recover_albedo(&render, &shading, eps).map_err(data)?;
            io::write_hdr(&out, &est.albedo)?;
            if let Some(path) = flagged {
                io::write_file(&path, &png16::encode_mask(&est.flagged)?)?;
            }
            let count = est.flagged.pixels().iter().filter(|&&f| f).count();
            print_json(json!({ "flagged_pixels": count }));
        }
        Command::GenMasks {
            seed,
            count,
            height,
            width,
            kind,
            out,
        } => {
            let policy = MaskPolicy::default();
            io::create_dir(&out)?;
            let mut entries = Vec::with_capacity(count);
            for i in 0..count {
                let s = seed.wrapping_add(i as u64);
                let mask = match kind {
                    MaskKindArg::Mixed => sample_mask(&policy, height, width, s),
                    MaskKindArg::Patch => gen_patch(height, width, policy.patch_size, policy.patch_ratio, s),
                    MaskKindArg::Outpaint => gen_outpaint(height, width, policy.outpaint_margin, s),
                    MaskKindArg::Freeform => gen_freeform(height, width, &policy.strokes, s),
                }
                .map_err(data)?;
                let file = format!("mask_{i:05}.png");
                io::write_file(&out.join(&file), &png16::encode_mask(mask.grid())?)?;
                entries.push(json!({
                    "file": file,
                    "seed": s,
                    "kind": mask.kind(),
                    "ratio": mask.measured_ratio(),
                }));
            }
            let index = json!({ "height": height, "width": width, "masks": entries });
            let text = serde_json::to_string_pretty(&index).map_err(data)? + "\n";
            io::write_file(&out.join("masks.json"), text.as_bytes())?;
        }
        Command::Eval { pred, r#ref, mask } => {
            let pred = read_image(&pred)?;
            let reference = read_image(&r#ref)?;
            let mask = match mask {
                Some(path) => Some(png16::decode_mask(&io::read_file(&path)?)?),
                None => None,
            };
            let l1 = evalkit::l1(&pred, &reference, mask.as_ref()).map_err(data)?;
            print_json(json!({
                "mae": evalkit::mae(&pred, &reference).map_err(data)?,
                "mse": evalkit::mse(&pred, &reference).map_err(data)?,
                "ssim": evalkit::ssim(&pred, &reference).map_err(data)?,
                "masked_l1": l1,
                "lpips": null,
            }));
        }
        Command::ExportViewer { bundle, env, out } => {
            let (bundle, manifest) = import_bundle(&bundle)?;
            let diagnostics = validate_bundle(&bundle);
            if !diagnostics.all_pass() {
                let failed: Vec<&str> = diagnostics
                    .checks
                    .iter()
                    .filter(|c| !c.pass)
                    .map(|c| c.name)
                    .collect();
                return Err(Failure::Data(format!("bundle fails checks: {}", failed.join(", "))));
            }
            let env = io::read_env(&env)?;
            export_viewer_bundle(&bundle, &env, &out, manifest.scene.as_ref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests print to stdout and succeed.
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("relume: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
