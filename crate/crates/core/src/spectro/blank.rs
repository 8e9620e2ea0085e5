//! Removal of empty high-frequency rows.
//!
//! Some stethoscopes record nothing above a device-specific frequency, which
//! leaves a band of rows pinned at the noise floor. Those rows are removed
//! from the top of the spectrogram down; signal-bearing low rows are never
//! touched.

use serde::{Deserialize, Serialize};

use super::MelSpectrogram;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlankClipConfig {
    /// A row is blank when its time-mean is within this many dB of the
    /// spectrogram minimum.
    pub floor_margin_db: f64,
    /// Rows whose center frequency is at or below this are never removed.
    pub protect_below_hz: f64,
}

impl Default for BlankClipConfig {
    fn default() -> Self {
        Self {
            floor_margin_db: 1.0,
            protect_below_hz: 1400.0,
        }
    }
}

/// Strips the contiguous run of blank rows at the top of `spec`.
///
/// The reference level is the global minimum of the spectrogram as first
/// clipped; it is stored in `blank_floor` so clipping again is a no-op.
pub fn blank_region_clip(spec: &MelSpectrogram, config: &BlankClipConfig) -> MelSpectrogram {
    let floor = spec.blank_floor.unwrap_or_else(|| spec.min_value());
    // Values are natural-log power; convert the dB margin.
    let margin = config.floor_margin_db.max(0.0) * std::f64::consts::LN_10 / 10.0;
    let means = spec.row_means();
    let mut keep = spec.n_rows();
    while keep > 0 {
        let r = keep - 1;
        if spec.bands[r].center_hz <= config.protect_below_hz || means[r] > floor + margin {
            break;
        }
        keep -= 1;
    }
    let mut out = spec.clone();
    out.values.truncate_rows(keep);
    out.bands.truncate(keep);
    out.blank_floor = Some(floor);
    out
}
