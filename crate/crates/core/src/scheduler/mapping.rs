use std::fmt;
use std::str::FromStr;

use crate::engine::{DeviceConfig, DeviceKind};
use crate::error::{Result, SimError};
use crate::model::{IterationProfile, OperatorDescriptor, Phase};
use crate::workload::RequestId;

/// How PIM devices are attached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PimType {
    #[default]
    None,
    /// One PIM per NPU, on the same node.
    Local,
    /// A separate PIM pool reached over the interconnect.
    Pool,
}

impl FromStr for PimType {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PimType::None),
            "local" => Ok(PimType::Local),
            "pool" => Ok(PimType::Pool),
            other => Err(SimError::Config(format!(
                "unknown pim_type {other:?}; expected one of none, local, pool"
            ))),
        }
    }
}

impl fmt::Display for PimType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PimType::None => "none",
            PimType::Local => "local",
            PimType::Pool => "pool",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Assignment {
    pub device: DeviceKind,
    /// Needs interconnect transfers around it (PIM pool).
    pub transfer: bool,
}

impl Assignment {
    const NPU: Assignment = Assignment {
        device: DeviceKind::Npu,
        transfer: false,
    };
}

/// Device assignment of every operator in one profile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingPlan {
    pub pim_type: PimType,
    /// Parallel to `IterationProfile::batched_ops`.
    pub batched: Vec<Assignment>,
    /// `(request, score, attend)` in batch order.
    pub attention: Vec<(RequestId, Assignment, Assignment)>,
}

impl MappingPlan {
    pub fn assignments(&self) -> impl Iterator<Item = Assignment> + '_ {
        self.batched
            .iter()
            .copied()
            .chain(self.attention.iter().flat_map(|(_, s, a)| [*s, *a]))
    }

    pub fn pim_count(&self) -> usize {
        self.assignments()
            .filter(|a| a.device == DeviceKind::Pim)
            .count()
    }

    pub fn transfer_count(&self) -> usize {
        self.assignments().filter(|a| a.transfer).count()
    }
}

/// The mapping rule: with PIM present, decode-phase attention GEMVs go to
/// PIM; everything else, including prompt-phase attention, stays on the NPU.
pub fn assign(desc: &OperatorDescriptor, pim_type: PimType) -> Assignment {
    let offload = pim_type != PimType::None
        && desc.kind.is_attention()
        && desc.phase == Phase::Generation
        && desc.is_gemv();
    if offload {
        Assignment {
            device: DeviceKind::Pim,
            transfer: pim_type == PimType::Pool,
        }
    } else {
        Assignment::NPU
    }
}

pub fn map_operators(
    profile: &IterationProfile,
    devices: &[DeviceConfig],
    pim_type: PimType,
) -> Result<MappingPlan> {
    if !devices.iter().any(|d| d.kind() == DeviceKind::Npu) {
        return Err(SimError::Config("no NPU devices configured".into()));
    }
    if pim_type != PimType::None && !devices.iter().any(|d| d.kind() == DeviceKind::Pim) {
        return Err(SimError::Config(format!(
            "pim_type {pim_type} requires at least one PIM device"
        )));
    }
    Ok(MappingPlan {
        pim_type,
        batched: profile
            .batched_ops
            .iter()
            .map(|d| assign(d, pim_type))
            .collect(),
        attention: profile
            .per_request_attention
            .iter()
            .map(|a| {
                (
                    a.id,
                    assign(&a.score, pim_type),
                    assign(&a.attend, pim_type),
                )
            })
            .collect(),
    })
}
