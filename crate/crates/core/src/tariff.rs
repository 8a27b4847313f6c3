//! Day-ahead prices and the stacked dynamic network tariff.
//!
//! The network component sells EV charging capacity in three bands stacked
//! on top of the forecast non-EV transformer loading. Band `p` spans the
//! loading range `(b[p-1], b[p]]`, where `b[p]` is a fixed fraction of the
//! transformer rating and `b[0] = -inf`. Whatever part of a band the forecast
//! load has not already used is available to EVs at that band's price.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Network;
use crate::units::energy_kwh;

pub const BANDS: usize = 3;
pub const DEFAULT_BAND_FRACTIONS: [f64; BANDS] = [0.6, 0.8, 1.0];
/// Low, medium and high level network prices in currency per kWh.
pub const DEFAULT_BAND_PRICES: [f64; BANDS] = [0.01, 0.05, 0.15];

/// Relative slack when checking band powers against envelopes.
const ENVELOPE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayAheadPrices {
    /// Currency per kWh, one entry per step.
    pub prices: Vec<f64>,
}

impl DayAheadPrices {
    pub fn new(prices: Vec<f64>) -> Result<Self> {
        if let Some(bad) = prices.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidTariff(format!("non-finite price {bad}")));
        }
        Ok(DayAheadPrices { prices })
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.prices.iter().fold(0.0, |m, p| m.max(p.abs()))
    }

    /// Repeat each hourly price over the steps of that hour.
    pub fn from_hourly(hourly: &[f64], step_hours: f64) -> Result<Self> {
        let per_hour = (1.0 / step_hours).round() as usize;
        if per_hour == 0 || ((per_hour as f64) * step_hours - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidTariff(format!(
                "step of {step_hours} h does not divide an hour"
            )));
        }
        Self::new(
            hourly
                .iter()
                .flat_map(|&p| std::iter::repeat(p).take(per_hour))
                .collect(),
        )
    }

    /// Check the series covers the horizon exactly, expanding hourly data
    /// when the length matches whole hours.
    pub fn fit_horizon(self, horizon: usize, step_hours: f64) -> Result<Self> {
        if self.len() == horizon {
            return Ok(self);
        }
        let per_hour = (1.0 / step_hours).round() as usize;
        if per_hour > 1 && self.len() * per_hour == horizon {
            return Self::from_hourly(&self.prices, step_hours);
        }
        Err(Error::LengthMismatch {
            what: "day-ahead prices",
            expected: horizon,
            got: self.len(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,price_eur_per_kwh\n");
        for (t, p) in self.prices.iter().enumerate() {
            out.push_str(&format!("{t},{p}\n"));
        }
        out
    }
}

/// Read a two-column price file. The first column is either a step index or
/// an ISO 8601 timestamp; rows are taken in file order and must be sorted.
pub fn load_prices(path: impl AsRef<Path>) -> Result<DayAheadPrices> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_prices(&text).map_err(|e| match e {
        Error::Parse { msg, .. } => Error::parse(path.display().to_string(), msg),
        other => other,
    })
}

pub fn parse_prices(text: &str) -> Result<DayAheadPrices> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());

    let mut keys: Vec<String> = Vec::new();
    let mut prices = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse("prices", e))?;
        if record.len() < 2 {
            return Err(Error::parse("prices", format!("row {row}: expected two columns")));
        }
        let price = match record[1].parse::<f64>() {
            Ok(p) => p,
            // Header row.
            Err(_) if row == 0 => continue,
            Err(e) => return Err(Error::parse("prices", format!("row {row}: {e}"))),
        };
        keys.push(record[0].to_string());
        prices.push(price);
    }

    if let Ok(steps) = keys.iter().map(|k| k.parse::<usize>()).collect::<Result<Vec<_>, _>>() {
        if steps.iter().enumerate().any(|(i, &s)| s != i) {
            return Err(Error::parse("prices", "step indices must run 0, 1, 2, ..."));
        }
    } else if keys.windows(2).any(|w| w[0] >= w[1]) {
        // ISO 8601 timestamps in a single offset sort lexicographically.
        return Err(Error::parse("prices", "timestamps must be strictly increasing"));
    }

    DayAheadPrices::new(prices)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TariffConfig {
    pub band_fractions: [f64; BANDS],
    pub band_prices: [f64; BANDS],
}

impl Default for TariffConfig {
    fn default() -> Self {
        TariffConfig {
            band_fractions: DEFAULT_BAND_FRACTIONS,
            band_prices: DEFAULT_BAND_PRICES,
        }
    }
}

impl TariffConfig {
    pub fn validate(&self) -> Result<()> {
        let f = &self.band_fractions;
        if !(f[0] > 0.0 && f[0] < f[1] && f[1] < f[2] && f[2] <= 1.0) {
            return Err(Error::InvalidTariff(format!(
                "band fractions {f:?} must be strictly increasing in (0, 1]"
            )));
        }
        let c = &self.band_prices;
        if !(c[0] < c[1] && c[1] < c[2]) || c.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidTariff(format!(
                "band prices {c:?} must satisfy low < medium < high"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackedTariff {
    pub band_fractions: [f64; BANDS],
    pub band_prices: [f64; BANDS],
    /// Capacity available to EVs per band in W, `[step][band]`.
    pub envelopes: Vec<[f64; BANDS]>,
}

impl StackedTariff {
    pub fn new(net: &Network, config: &TariffConfig, forecast: &[f64]) -> Result<Self> {
        config.validate()?;
        let envelopes = build_envelopes(net, &config.band_fractions, forecast)?;
        Ok(StackedTariff {
            band_fractions: config.band_fractions,
            band_prices: config.band_prices,
            envelopes,
        })
    }

    pub fn high_price(&self) -> f64 {
        self.band_prices[BANDS - 1]
    }
}

/// Band capacities `[step][band]` in W for a forecast non-EV loading series.
pub fn build_envelopes(
    net: &Network,
    fractions: &[f64; BANDS],
    forecast: &[f64],
) -> Result<Vec<[f64; BANDS]>> {
    if forecast.len() != net.horizon() {
        return Err(Error::LengthMismatch {
            what: "load forecast",
            expected: net.horizon(),
            got: forecast.len(),
        });
    }
    let rated = net.transformer().rated_w();
    let edges = fractions.map(|f| f * rated);
    Ok(forecast.iter().map(|&load| band_capacities(&edges, load)).collect())
}

/// Capacity of each band above `load` for band tops `edges`.
pub fn band_capacities(edges: &[f64; BANDS], load: f64) -> [f64; BANDS] {
    let mut caps = [0.0; BANDS];
    let mut lower = f64::NEG_INFINITY;
    for (p, cap) in caps.iter_mut().enumerate() {
        *cap = (edges[p] - load.max(lower)).max(0.0);
        lower = edges[p];
    }
    caps
}

/// Network component of the CPO bill: sum over steps and bands of price
/// times energy.
pub fn network_cost(tariff: &StackedTariff, band_powers: &[[f64; BANDS]], dt: f64) -> Result<f64> {
    let mut cost = 0.0;
    for (t, powers) in band_powers.iter().enumerate() {
        let caps = tariff.envelopes.get(t).ok_or(Error::StepOutOfRange {
            step: t,
            horizon: tariff.envelopes.len(),
        })?;
        for p in 0..BANDS {
            let slack = ENVELOPE_TOL * caps[p].max(1.0);
            if powers[p] > caps[p] + slack || powers[p] < -slack {
                return Err(Error::EnvelopeExceeded {
                    step: t,
                    band: p,
                    power_w: powers[p],
                    cap_w: caps[p],
                });
            }
            cost += tariff.band_prices[p] * energy_kwh(powers[p], dt);
        }
    }
    Ok(cost)
}

/// Split a net EV import into bands, cheapest first. Used to bill schedules
/// produced without band variables (uncontrolled or day-ahead dispatch).
/// Power beyond the top band is reported separately as the overflow.
pub fn fill_bands(caps: &[f64; BANDS], net_import_w: f64) -> ([f64; BANDS], f64) {
    let mut remaining = net_import_w.max(0.0);
    let mut out = [0.0; BANDS];
    for p in 0..BANDS {
        out[p] = remaining.min(caps[p]);
        remaining -= out[p];
    }
    (out, remaining)
}

/// Synthetic winter day-ahead price shape in currency per kWh: cheap at
/// night, a morning shoulder and a pronounced evening peak.
pub fn synthetic_day_ahead(days: usize, step_hours: f64) -> DayAheadPrices {
    const HOURLY: [f64; 24] = [
        0.105, 0.098, 0.092, 0.088, 0.087, 0.091, 0.112, 0.148, 0.166, 0.152, 0.138, 0.129,
        0.124, 0.121, 0.126, 0.139, 0.161, 0.198, 0.226, 0.214, 0.184, 0.152, 0.131, 0.117,
    ];
    let mut hourly = Vec::with_capacity(24 * days);
    for d in 0..days {
        // Day-to-day drift so that consecutive days are not identical.
        let scale = 1.0 + 0.04 * ((d as f64) * 1.7).sin();
        hourly.extend(HOURLY.iter().map(|p| p * scale));
    }
    DayAheadPrices::from_hourly(&hourly, step_hours).expect("quarter-hour steps")
}
