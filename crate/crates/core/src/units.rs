//! Unit conventions shared across modules.
//!
//! SOC is carried in percent, energies in kWh and powers in W at module
//! boundaries. The dispatch LP works in kW internally.

pub const W_PER_KW: f64 = 1000.0;
pub const PERCENT: f64 = 100.0;

/// Energy in kWh delivered by `power_w` over `dt_h` hours.
#[inline]
pub fn energy_kwh(power_w: f64, dt_h: f64) -> f64 {
    power_w * dt_h / W_PER_KW
}

/// SOC change in percentage points caused by `power_w` over `dt_h` hours
/// on a battery of `capacity_kwh`.
#[inline]
pub fn soc_delta_pct(power_w: f64, dt_h: f64, capacity_kwh: f64) -> f64 {
    PERCENT * energy_kwh(power_w, dt_h) / capacity_kwh
}

/// Inverse of [`soc_delta_pct`]: the constant power that moves the SOC by
/// `delta_pct` within one step.
#[inline]
pub fn power_for_soc_delta(delta_pct: f64, dt_h: f64, capacity_kwh: f64) -> f64 {
    delta_pct * capacity_kwh * W_PER_KW / (PERCENT * dt_h)
}
