//! Device energy coefficients and the bundled board profiles.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The only unit interpretation the coefficients are stored in.
pub const UNITS: &str = "J_per_MAC";

const BUNDLED: [&str; 2] =
    [include_str!("../profiles/jetson-tx2.json"), include_str!("../profiles/jetson-xavier-nx.json")];

/// Per-device coefficients of the energy model.
///
/// Convolutions cost `kclc * (a_c + b_c * ofm)` joules, fully connected
/// layers `clf * a_f`. A profile without `a_f` cannot price FC layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceProfile {
    pub device_id: String,
    /// Joules per MAC.
    pub a_c: f64,
    /// Joules per MAC and output feature map.
    pub b_c: f64,
    /// Joules per MAC for fully connected layers.
    pub a_f: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    device_id: String,
    a_c: f64,
    b_c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    a_f: Option<f64>,
    #[serde(default)]
    units: Option<String>,
}

impl DeviceProfile {
    pub fn new(device_id: impl Into<String>, a_c: f64, b_c: f64, a_f: Option<f64>) -> Result<Self> {
        let profile = DeviceProfile { device_id: device_id.into(), a_c, b_c, a_f };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a_c.is_finite() && self.a_c > 0.0) {
            return Err(Error::InvalidProfile(format!("{}: a_c must be positive, got {}", self.device_id, self.a_c)));
        }
        if !(self.b_c.is_finite() && self.b_c >= 0.0) {
            return Err(Error::InvalidProfile(format!(
                "{}: b_c must be non-negative, got {}",
                self.device_id, self.b_c
            )));
        }
        if let Some(a_f) = self.a_f {
            if !(a_f.is_finite() && a_f > 0.0) {
                return Err(Error::InvalidProfile(format!("{}: a_f must be positive, got {a_f}", self.device_id)));
            }
        }
        Ok(())
    }

    /// Multiplies every coefficient by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        DeviceProfile::new(self.device_id.clone(), self.a_c * factor, self.b_c * factor, self.a_f.map(|a| a * factor))
    }

    /// Energy per MAC of a convolution with `ofm` kernels.
    pub fn conv_slope(&self, ofm: u64) -> f64 {
        self.a_c / ofm as f64 + self.b_c
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: ProfileFile = serde_json::from_str(s).map_err(|e| Error::parse("device profile", e))?;
        if let Some(units) = &file.units {
            if units != UNITS {
                return Err(Error::InvalidProfile(format!(
                    "{}: unsupported units `{units}`, expected `{UNITS}`",
                    file.device_id
                )));
            }
        }
        DeviceProfile::new(file.device_id, file.a_c, file.b_c, file.a_f)
    }

    pub fn to_json_string(&self) -> String {
        let file = ProfileFile {
            device_id: self.device_id.clone(),
            a_c: self.a_c,
            b_c: self.b_c,
            a_f: self.a_f,
            units: Some(UNITS.to_owned()),
        };
        serde_json::to_string_pretty(&file).expect("profile serializes")
    }
}

impl Serialize for DeviceProfile {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        ProfileFile {
            device_id: self.device_id.clone(),
            a_c: self.a_c,
            b_c: self.b_c,
            a_f: self.a_f,
            units: Some(UNITS.to_owned()),
        }
        .serialize(serializer)
    }
}

/// Profiles shipped with the library, in a fixed order.
pub fn bundled_profiles() -> Vec<DeviceProfile> {
    BUNDLED.iter().map(|s| DeviceProfile::from_json_str(s).expect("bundled profile is valid")).collect()
}

pub fn bundled_profile(device_id: &str) -> Option<DeviceProfile> {
    bundled_profiles().into_iter().find(|p| p.device_id == device_id)
}

/// Reads every `*.json` profile in `dir`, sorted by file name.
pub fn load_profile_dir(dir: &Path) -> Result<Vec<DeviceProfile>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p)?;
            DeviceProfile::from_json_str(&text).map_err(|e| Error::InvalidProfile(format!("{}: {e}", p.display())))
        })
        .collect()
}

/// Merged view of bundled and user profiles keyed by id. User profiles
/// replace bundled ones with the same id.
#[derive(Debug, Clone, Default)]
pub struct ProfileRegistry {
    profiles: BTreeMap<String, (DeviceProfile, ProfileSource)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileSource {
    Bundled,
    User,
}

impl ProfileRegistry {
    pub fn bundled() -> Self {
        let mut reg = ProfileRegistry::default();
        for p in bundled_profiles() {
            reg.profiles.insert(p.device_id.clone(), (p, ProfileSource::Bundled));
        }
        reg
    }

    pub fn add_user(&mut self, profiles: impl IntoIterator<Item = DeviceProfile>) {
        for p in profiles {
            self.profiles.insert(p.device_id.clone(), (p, ProfileSource::User));
        }
    }

    pub fn get(&self, device_id: &str) -> Option<&DeviceProfile> {
        self.profiles.get(device_id).map(|(p, _)| p)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DeviceProfile, ProfileSource)> {
        self.profiles.values().map(|(p, s)| (p, *s))
    }

    pub fn ids(&self) -> Vec<&str> {
        self.profiles.keys().map(String::as_str).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_values_match_published_table() {
        let tx2 = bundled_profile("jetson-tx2").unwrap();
        assert_eq!(tx2.a_c, 2.6727e-8);
        assert_eq!(tx2.b_c, 1.21334e-10);
        assert_eq!(tx2.a_f, None);
        let nx = bundled_profile("jetson-xavier-nx").unwrap();
        assert_eq!(nx.a_c, 2.8674e-8);
        assert_eq!(nx.b_c, 4.7639e-10);
        assert_eq!(nx.a_f, Some(6.2454e-9));
    }

    #[test]
    fn rejects_bad_coefficients_and_units() {
        assert!(DeviceProfile::new("d", 0.0, 0.0, None).is_err());
        assert!(DeviceProfile::new("d", 1.0, -1.0, None).is_err());
        assert!(DeviceProfile::new("d", 1.0, 0.0, Some(0.0)).is_err());
        assert!(DeviceProfile::new("d", 1.0, 0.0, None).is_ok());
        let bad_units = r#"{"device_id":"d","a_c":1e-8,"b_c":0,"units":"mJ"}"#;
        assert!(DeviceProfile::from_json_str(bad_units).is_err());
    }

    #[test]
    fn json_round_trip() {
        for p in bundled_profiles() {
            let text = p.to_json_string();
            assert!(text.contains("J_per_MAC"));
            assert_eq!(DeviceProfile::from_json_str(&text).unwrap(), p);
        }
    }

    #[test]
    fn user_profile_wins_on_collision() {
        let mut reg = ProfileRegistry::bundled();
        reg.add_user([DeviceProfile::new("jetson-tx2", 1e-8, 1e-10, Some(1e-9)).unwrap()]);
        let tx2 = reg.get("jetson-tx2").unwrap();
        assert_eq!(tx2.a_c, 1e-8);
        assert_eq!(reg.ids(), vec!["jetson-tx2", "jetson-xavier-nx"]);
        // Bundled data itself is untouched.
        assert_eq!(bundled_profile("jetson-tx2").unwrap().a_c, 2.6727e-8);
    }
}
