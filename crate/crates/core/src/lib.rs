//! Physically-based relighting toolkit.
//!
//! * [`brdf`]: Lambertian + Cook-Torrance (GGX / Smith / Schlick) reflectance.
//! * [`envlight`]: equirectangular HDR environments, Phong-lobe pre-convolution.
//! * [`renderer`]: diffuse, specular and PBR renders of an [`renderer::IntrinsicBundle`].
//! * [`lightstage`]: synthetic OLAT rigs, environment projection, compositing and
//!   photometric stereo.
//! * [`intrinsics`]: albedo recovery by shading division, bundle diagnostics.
//! * [`scenegen`]: deterministic synthetic scenes with analytic ground truth.
//! * [`maskgen`]: patch / outpaint / free-form corruption masks.
//! * [`evalkit`]: reconstruction losses, the weighted relighting objective and
//!   image metrics.
//! * [`io`]: PFM, Radiance RGBE and 16-bit PNG codecs, bundle manifests.

pub mod brdf;
pub mod color;
pub mod envlight;
pub mod evalkit;
pub mod image;
pub mod intrinsics;
pub mod io;
pub mod lightstage;
pub mod maskgen;
pub mod renderer;
pub mod scenegen;

pub use brdf::{Direction, Material};
pub use color::Rgb;
pub use envlight::{ConvolvedEnvMap, EnvMap};
pub use image::Image;
pub use renderer::{IntrinsicBundle, RenderOutput};
