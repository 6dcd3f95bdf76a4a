//! Resolution of `--hw` values to descriptors.

use std::path::Path;

use tilewise_core::hwmodel::{load_descriptor, presets, synthetic_backends};
use tilewise_core::{find_preset, Error, HardwareDescriptor, Preset};

/// Directory searched for `<name>.json` before the built-in presets.
pub const PRESET_DIR_ENV: &str = "TILEWISE_PRESET_DIR";

pub struct Hardware {
    pub descriptor: HardwareDescriptor,
    /// Default simulator-costed levels.
    pub empirical_levels: Vec<usize>,
}

pub fn all_presets() -> Vec<Preset> {
    presets().into_iter().chain(synthetic_backends()).collect()
}

/// A preset name (looked up in the preset directory first, then built in) or
/// a descriptor file path. File descriptors default to a simulated level 0.
pub fn resolve_hardware(name: &str) -> Result<Hardware, Error> {
    let builtin = find_preset(name);
    let default_levels = || builtin.as_ref().map_or_else(|| vec![0], |p| p.empirical_levels.clone());
    if let Some(dir) = std::env::var_os(PRESET_DIR_ENV) {
        let candidate = Path::new(&dir).join(format!("{name}.json"));
        if candidate.is_file() {
            return Ok(Hardware {
                descriptor: load_descriptor(&candidate)?,
                empirical_levels: default_levels(),
            });
        }
    }
    if let Some(p) = &builtin {
        return Ok(Hardware {
            descriptor: p.descriptor.clone(),
            empirical_levels: p.empirical_levels.clone(),
        });
    }
    Ok(Hardware {
        descriptor: load_descriptor(name)?,
        empirical_levels: vec![0],
    })
}
