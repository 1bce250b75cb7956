//! Phase-space pictures, state labels and table output.

pub mod husimi;
pub mod table;

use serde::{Deserialize, Serialize};

pub use husimi::{husimi, HusimiGrid, HusimiSidecar, HusimiSpec};
pub use table::{emit_table, Cell, Kind, Schema, TableWriter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateClass {
    Transporting,
    ChaoticLayer,
    Localized,
}

impl StateClass {
    pub fn as_str(self) -> &'static str {
        match self {
            StateClass::Transporting => "transporting",
            StateClass::ChaoticLayer => "chaotic_layer",
            StateClass::Localized => "localized",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyThresholds {
    /// |<p>| above this is transporting.
    pub momentum: f64,
    /// Husimi IPR relative to uniform above this is localized.
    pub ipr_ratio: f64,
}

impl Default for ClassifyThresholds {
    fn default() -> Self {
        ClassifyThresholds {
            momentum: 0.5,
            ipr_ratio: 8.0,
        }
    }
}

pub fn classify_state(mean_momentum: f64, husimi: &HusimiGrid, th: &ClassifyThresholds) -> StateClass {
    if mean_momentum.abs() > th.momentum {
        StateClass::Transporting
    } else if husimi.relative_ipr() > th.ipr_ratio {
        StateClass::Localized
    } else {
        StateClass::ChaoticLayer
    }
}
