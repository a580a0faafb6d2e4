use std::collections::hash_map::DefaultHasher;
use std::fs;
use std::hash::{Hash, Hasher};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Result, SimError};

pub const GB: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DeviceKind {
    Npu,
    Pim,
}

/// Systolic-array NPU.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NpuConfig {
    pub array_rows: u64,
    pub array_cols: u64,
    /// Hz.
    pub clock_hz: f64,
    /// Bytes/s.
    pub mem_bw: f64,
    /// Bytes.
    pub mem_capacity: u64,
    /// Seconds per operator.
    pub launch_overhead: f64,
}

impl Default for NpuConfig {
    fn default() -> Self {
        NpuConfig {
            array_rows: 128,
            array_cols: 128,
            clock_hz: 1e9,
            mem_bw: 900.0 * GB,
            mem_capacity: 40 << 30,
            launch_overhead: 2e-6,
        }
    }
}

impl NpuConfig {
    /// FLOP/s with one MAC per PE per cycle.
    pub fn peak_flops(&self) -> f64 {
        2.0 * (self.array_rows * self.array_cols) as f64 * self.clock_hz
    }
}

/// Processing-in-memory device; only GEMV work is accepted.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PimConfig {
    /// Effective internal bandwidth for GEMV, bytes/s.
    pub gemv_bw: f64,
    pub mem_capacity: u64,
    pub launch_overhead: f64,
}

impl Default for PimConfig {
    fn default() -> Self {
        PimConfig {
            gemv_bw: 8.0 * NpuConfig::default().mem_bw,
            mem_capacity: 32 << 30,
            launch_overhead: 2e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DeviceConfig {
    Npu(NpuConfig),
    Pim(PimConfig),
}

impl DeviceConfig {
    pub fn kind(&self) -> DeviceKind {
        match self {
            DeviceConfig::Npu(_) => DeviceKind::Npu,
            DeviceConfig::Pim(_) => DeviceKind::Pim,
        }
    }

    pub fn mem_capacity(&self) -> u64 {
        match self {
            DeviceConfig::Npu(c) => c.mem_capacity,
            DeviceConfig::Pim(c) => c.mem_capacity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(SimError::Config(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        match self {
            DeviceConfig::Npu(c) => {
                if c.array_rows == 0 || c.array_cols == 0 {
                    return Err(SimError::Config(
                        "systolic array dims must be positive".into(),
                    ));
                }
                positive("clock_hz", c.clock_hz)?;
                positive("mem_bw", c.mem_bw)?;
                if c.launch_overhead < 0.0 {
                    return Err(SimError::Config(
                        "launch_overhead must be non-negative".into(),
                    ));
                }
            }
            DeviceConfig::Pim(c) => {
                positive("gemv_bw", c.gemv_bw)?;
                if c.launch_overhead < 0.0 {
                    return Err(SimError::Config(
                        "launch_overhead must be non-negative".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Stable identity of the configuration, used in cache keys.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        match self {
            DeviceConfig::Npu(c) => {
                0u8.hash(&mut h);
                c.array_rows.hash(&mut h);
                c.array_cols.hash(&mut h);
                c.clock_hz.to_bits().hash(&mut h);
                c.mem_bw.to_bits().hash(&mut h);
                c.mem_capacity.hash(&mut h);
                c.launch_overhead.to_bits().hash(&mut h);
            }
            DeviceConfig::Pim(c) => {
                1u8.hash(&mut h);
                c.gemv_bw.to_bits().hash(&mut h);
                c.mem_capacity.hash(&mut h);
                c.launch_overhead.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

/// Hardware description file: optional `[npu]` and `[pim]` tables whose keys
/// match [`NpuConfig`] and [`PimConfig`].
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HardwareConfig {
    pub npu: NpuConfig,
    pub pim: PimConfig,
}

impl HardwareConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let hw: HardwareConfig =
            toml::from_str(text).map_err(|e| SimError::Config(format!("device config: {e}")))?;
        DeviceConfig::Npu(hw.npu.clone()).validate()?;
        DeviceConfig::Pim(hw.pim.clone()).validate()?;
        Ok(hw)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        Self::parse(&text)
    }
}
