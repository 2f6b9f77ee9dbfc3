use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::backbone::{Backbone, BackboneProfile};
use super::toy::{ToyBackbone, ToyDenoiser};
use crate::error::{Error, Result};

/// Environment variable naming the SDXL + image-adapter weight directory.
pub const SDXL_WEIGHTS_ENV: &str = "XCOMPOSE_SDXL_WEIGHTS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    #[default]
    Toy,
    Sdxl,
}

impl BackboneKind {
    pub fn profile(self) -> BackboneProfile {
        match self {
            BackboneKind::Toy => BackboneProfile::toy(),
            BackboneKind::Sdxl => BackboneProfile::sdxl(),
        }
    }
}

impl std::str::FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(BackboneKind::Toy),
            "sdxl" => Ok(BackboneKind::Sdxl),
            other => Err(Error::invalid(format!("unknown backbone {other:?} (toy or sdxl)"))),
        }
    }
}

impl std::fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackboneKind::Toy => "toy",
            BackboneKind::Sdxl => "sdxl",
        })
    }
}

/// Weight location for the SDXL binding, from the environment.
pub fn sdxl_weights_from_env() -> Option<PathBuf> {
    std::env::var_os(SDXL_WEIGHTS_ENV).map(PathBuf::from).filter(|p| !p.as_os_str().is_empty())
}

/// Opens an SDXL-class backbone.
///
/// This build carries no native SDXL runtime, so the call always fails with
/// [`Error::BackboneUnavailable`]. The profile constants are available via
/// [`BackboneProfile::sdxl`].
pub fn open_sdxl(weights: Option<PathBuf>) -> Result<Box<dyn Backbone>> {
    let detail = match weights {
        None => format!("no weights configured (set {SDXL_WEIGHTS_ENV})"),
        Some(p) if !p.exists() => format!("weights path {} does not exist", p.display()),
        Some(p) => format!(
            "weights found at {} but this build has no SDXL runtime; use the toy backbone",
            p.display()
        ),
    };
    Err(Error::BackboneUnavailable(detail))
}

/// Opens a backbone by kind. The toy backbone uses the linear denoiser.
pub fn open_backbone(kind: BackboneKind, seed: u64) -> Result<Box<dyn Backbone>> {
    match kind {
        BackboneKind::Toy => Ok(Box::new(ToyBackbone::new(BackboneProfile::toy(), ToyDenoiser::Linear, seed)?)),
        BackboneKind::Sdxl => open_sdxl(sdxl_weights_from_env()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sdxl_is_unavailable() {
        assert!(matches!(open_sdxl(None), Err(Error::BackboneUnavailable(_))));
        assert!(matches!(
            open_sdxl(Some(PathBuf::from("/nonexistent/weights"))),
            Err(Error::BackboneUnavailable(_))
        ));
        assert_eq!("sdxl".parse::<BackboneKind>().unwrap(), BackboneKind::Sdxl);
        assert!("dalle".parse::<BackboneKind>().is_err());
    }
}
