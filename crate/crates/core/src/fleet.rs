//! EV sessions, synthetic session generation and uncontrolled charging.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Network;
use crate::units::{power_for_soc_delta, soc_delta_pct, W_PER_KW};

/// Absolute SOC slack (percentage points) tolerated when checking bounds.
pub const SOC_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargingPoint {
    pub id: usize,
    /// Bus id (not index) the point is connected to.
    pub bus: u32,
    pub rated_power_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvSession {
    pub point: usize,
    pub arrival: usize,
    /// First step at which the EV is gone. The EV is connected during
    /// `arrival..departure` and its departure SOC is the SOC after step
    /// `departure - 1`.
    pub departure: usize,
    pub soc_init: f64,
    pub soc_max: f64,
    pub soc_min: f64,
    pub capacity_kwh: f64,
    /// Effective power limit: the smaller of the EV and point ratings.
    pub rated_power_w: f64,
    pub v2g: bool,
}

impl EvSession {
    pub fn duration(&self) -> usize {
        self.departure - self.arrival
    }

    pub fn is_active(&self, t: usize) -> bool {
        self.arrival <= t && t < self.departure
    }

    /// Lower power bound: `-P` for bidirectional sessions, zero otherwise.
    pub fn min_power_w(&self) -> f64 {
        if self.v2g {
            -self.rated_power_w
        } else {
            0.0
        }
    }

    /// Highest SOC reachable by charging at full power from arrival.
    pub fn reachable_soc(&self, dt: f64) -> f64 {
        let gain = soc_delta_pct(self.rated_power_w * self.duration() as f64, dt, self.capacity_kwh);
        self.soc_max.min(self.soc_init + gain)
    }

    pub fn validate(&self, points: &[ChargingPoint]) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSession(msg));
        if self.point >= points.len() {
            return bad(format!("unknown charging point {}", self.point));
        }
        if self.arrival >= self.departure {
            return bad(format!(
                "arrival {} must precede departure {}",
                self.arrival, self.departure
            ));
        }
        if !(0.0 <= self.soc_min
            && self.soc_min <= self.soc_init
            && self.soc_init <= self.soc_max
            && self.soc_max <= 100.0)
        {
            return bad(format!(
                "SOC bounds must satisfy 0 <= min {} <= init {} <= max {} <= 100",
                self.soc_min, self.soc_init, self.soc_max
            ));
        }
        if !(self.capacity_kwh > 0.0) || !(self.rated_power_w > 0.0) {
            return bad("capacity and rated power must be positive".into());
        }
        Ok(())
    }
}

/// Validate a session set: individual bounds plus at most one session per
/// point at any step.
pub fn validate_sessions(sessions: &[EvSession], points: &[ChargingPoint]) -> Result<()> {
    for s in sessions {
        s.validate(points)?;
    }
    let mut by_point: Vec<Vec<(usize, usize)>> = vec![Vec::new(); points.len()];
    for s in sessions {
        by_point[s.point].push((s.arrival, s.departure));
    }
    for (p, mut spans) in by_point.into_iter().enumerate() {
        spans.sort_unstable();
        if spans.windows(2).any(|w| w[1].0 < w[0].1) {
            return Err(Error::InvalidSession(format!(
                "overlapping sessions at charging point {p}"
            )));
        }
    }
    Ok(())
}

/// One step of the SOC recursion, in percent.
#[inline]
pub fn soc_step(soc_prev: f64, power_w: f64, dt: f64, capacity_kwh: f64) -> f64 {
    soc_prev + soc_delta_pct(power_w, dt, capacity_kwh)
}

/// Committed charging powers and resulting SOC trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeSchedule {
    pub step_hours: f64,
    /// Signed power per point in W, `[point][step]`.
    pub power: Vec<Vec<f64>>,
    /// SOC per session in percent from arrival to departure inclusive,
    /// `[session][k]` with `k = t - arrival`.
    pub soc: Vec<Vec<f64>>,
    /// Departure SOC as a fraction of the session's maximum SOC.
    pub alpha: Vec<f64>,
}

impl ChargeSchedule {
    /// Assemble a schedule from per-session power traces (`[session][k]`,
    /// one entry per connected step). SOCs follow by exact recursion.
    pub fn from_session_powers(
        sessions: &[EvSession],
        n_points: usize,
        horizon: usize,
        dt: f64,
        session_powers: &[Vec<f64>],
    ) -> Self {
        let mut power = vec![vec![0.0; horizon]; n_points];
        let mut soc = Vec::with_capacity(sessions.len());
        let mut alpha = Vec::with_capacity(sessions.len());
        for (s, trace) in sessions.iter().zip(session_powers) {
            debug_assert_eq!(trace.len(), s.duration());
            let mut traj = Vec::with_capacity(trace.len() + 1);
            let mut cur = s.soc_init;
            traj.push(cur);
            for (k, &p) in trace.iter().enumerate() {
                power[s.point][s.arrival + k] = p;
                cur = soc_step(cur, p, dt, s.capacity_kwh);
                traj.push(cur);
            }
            alpha.push((cur / s.soc_max).clamp(0.0, 1.0));
            soc.push(traj);
        }
        ChargeSchedule {
            step_hours: dt,
            power,
            soc,
            alpha,
        }
    }

    pub fn horizon(&self) -> usize {
        self.power.first().map_or(0, Vec::len)
    }

    /// SOC of a session at step `t`; zero while not connected.
    pub fn soc_at(&self, sessions: &[EvSession], session: usize, t: usize) -> f64 {
        let s = &sessions[session];
        if t < s.arrival || t > s.departure {
            0.0
        } else {
            self.soc[session][t - s.arrival]
        }
    }

    pub fn final_soc(&self, session: usize) -> f64 {
        *self.soc[session].last().expect("trajectory has the initial entry")
    }

    /// Powers of one session over its connected steps.
    pub fn session_powers(&self, s: &EvSession) -> &[f64] {
        &self.power[s.point][s.arrival..s.departure]
    }

    /// Net EV power in W at step `t`.
    pub fn total_power(&self, t: usize) -> f64 {
        self.power.iter().map(|p| p[t]).sum()
    }

    /// Aggregate EV power per bus index and step, `[step][bus]`.
    pub fn bus_powers(&self, net: &Network, points: &[ChargingPoint]) -> Result<Vec<Vec<f64>>> {
        let mut out = vec![vec![0.0; net.buses().len()]; self.horizon()];
        for (pt, series) in points.iter().zip(&self.power) {
            let b = net.bus_index(pt.bus).ok_or_else(|| {
                Error::InvalidSession(format!("charging point {} on unknown bus {}", pt.id, pt.bus))
            })?;
            for (t, &p) in series.iter().enumerate() {
                out[t][b] += p;
            }
        }
        Ok(out)
    }

    /// Largest gap between each session's SOC change and the energy it
    /// received, in percentage points.
    pub fn energy_bookkeeping_error(&self, sessions: &[EvSession]) -> f64 {
        sessions
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let energy: f64 = self.session_powers(s).iter().sum();
                let expected = soc_delta_pct(energy, self.step_hours, s.capacity_kwh);
                ((self.final_soc(i) - s.soc_init) - expected).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Charge at full power from arrival until the maximum SOC is reached, with
/// a partial final step so the SOC lands exactly on the maximum.
pub fn uncontrolled_schedule(
    sessions: &[EvSession],
    n_points: usize,
    horizon: usize,
    dt: f64,
) -> ChargeSchedule {
    let traces: Vec<Vec<f64>> = sessions
        .iter()
        .map(|s| {
            let mut soc = s.soc_init;
            (0..s.duration())
                .map(|_| {
                    let headroom = s.soc_max - soc;
                    let p = if headroom <= 0.0 {
                        0.0
                    } else if soc_delta_pct(s.rated_power_w, dt, s.capacity_kwh) <= headroom {
                        s.rated_power_w
                    } else {
                        power_for_soc_delta(headroom, dt, s.capacity_kwh)
                    };
                    soc = soc_step(soc, p, dt, s.capacity_kwh);
                    p
                })
                .collect()
        })
        .collect();
    let mut schedule = ChargeSchedule::from_session_powers(sessions, n_points, horizon, dt, &traces);
    // Land exactly on the maximum despite rounding in the partial step.
    for (i, s) in sessions.iter().enumerate() {
        if (schedule.final_soc(i) - s.soc_max).abs() < 1e-9 {
            schedule.alpha[i] = 1.0;
        }
    }
    schedule
}

/// Arrival and session-parameter statistics for the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionProfile {
    pub sessions_per_point_per_day: f64,
    pub morning_share: f64,
    pub morning_arrival_h: (f64, f64),
    pub evening_arrival_h: (f64, f64),
    /// Median connection time in hours for morning and evening arrivals.
    pub morning_duration_h: f64,
    pub evening_duration_h: f64,
    /// Log-normal shape parameter of connection times.
    pub duration_sigma: f64,
    pub soc_init_pct: (f64, f64),
    pub soc_max_pct: f64,
    pub soc_min_pct: f64,
    pub capacities_kwh: Vec<f64>,
    pub ev_power_kw: f64,
    pub v2g_share: f64,
}

impl Default for SessionProfile {
    fn default() -> Self {
        SessionProfile {
            sessions_per_point_per_day: 0.9,
            morning_share: 0.3,
            morning_arrival_h: (8.0, 1.0),
            evening_arrival_h: (18.0, 1.5),
            morning_duration_h: 8.0,
            evening_duration_h: 11.0,
            duration_sigma: 0.35,
            soc_init_pct: (20.0, 60.0),
            soc_max_pct: 100.0,
            soc_min_pct: 0.0,
            capacities_kwh: vec![40.0, 55.0, 75.0],
            ev_power_kw: 11.0,
            v2g_share: 0.8,
        }
    }
}

/// Place `count` charging points as two-point stations on randomly ordered
/// non-root buses, wrapping around when there are more stations than buses.
pub fn place_points(net: &Network, count: usize, seed: u64, rated_power_w: f64) -> Result<Vec<ChargingPoint>> {
    let mut buses: Vec<u32> = net
        .buses()
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != net.root())
        .map(|(_, b)| b.id)
        .collect();
    if buses.is_empty() {
        return Err(Error::Config("network has no bus to host charging points".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    buses.shuffle(&mut rng);
    Ok((0..count)
        .map(|id| ChargingPoint {
            id,
            bus: buses[(id / 2) % buses.len()],
            rated_power_w,
        })
        .collect())
}

const PLACEMENT_ATTEMPTS: usize = 50;

/// Deterministic synthetic sessions over `days` days.
pub fn generate_sessions(
    net: &Network,
    points: &[ChargingPoint],
    days: usize,
    seed: u64,
    profile: &SessionProfile,
) -> Result<Vec<EvSession>> {
    if points.is_empty() || days == 0 {
        return Ok(Vec::new());
    }
    if profile.capacities_kwh.is_empty() || !(0.0..=1.0).contains(&profile.v2g_share) {
        return Err(Error::Config("session profile needs capacities and a v2g share in [0, 1]".into()));
    }

    let dt = net.step_hours();
    let steps_per_day = (24.0 / dt).round() as usize;
    let end = (days * steps_per_day).min(net.horizon());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let morning = Normal::new(profile.morning_arrival_h.0, profile.morning_arrival_h.1)
        .map_err(|e| Error::Config(e.to_string()))?;
    let evening = Normal::new(profile.evening_arrival_h.0, profile.evening_arrival_h.1)
        .map_err(|e| Error::Config(e.to_string()))?;
    let dur_m = LogNormal::new(profile.morning_duration_h.ln(), profile.duration_sigma)
        .map_err(|e| Error::Config(e.to_string()))?;
    let dur_e = LogNormal::new(profile.evening_duration_h.ln(), profile.duration_sigma)
        .map_err(|e| Error::Config(e.to_string()))?;

    let per_day = (profile.sessions_per_point_per_day * points.len() as f64).round() as usize;
    let mut occupied: Vec<Vec<(usize, usize)>> = vec![Vec::new(); points.len()];
    let mut sessions = Vec::new();

    for day in 0..days {
        for _ in 0..per_day {
            let mut placed = false;
            let mut last_arrival = 0;
            for _ in 0..PLACEMENT_ATTEMPTS {
                let is_morning = rng.gen::<f64>() < profile.morning_share;
                let (hour, hours) = if is_morning {
                    (morning.sample(&mut rng), dur_m.sample(&mut rng))
                } else {
                    (evening.sample(&mut rng), dur_e.sample(&mut rng))
                };
                let soc_init = rng.gen_range(profile.soc_init_pct.0..=profile.soc_init_pct.1);
                let capacity = profile.capacities_kwh[rng.gen_range(0..profile.capacities_kwh.len())];
                let v2g = rng.gen::<f64>() < profile.v2g_share;
                let order_seed: u64 = rng.gen();

                let hour = hour.clamp(0.0, 24.0 - dt);
                let arrival = day * steps_per_day + (hour / dt).floor() as usize;
                let departure = (arrival + ((hours / dt).round() as usize).max(1)).min(end);
                last_arrival = arrival;
                if arrival >= end || departure <= arrival {
                    // Falls outside the simulated period; draw consumed, skip.
                    placed = true;
                    break;
                }

                let mut order: Vec<usize> = (0..points.len()).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(order_seed));
                let free = order.into_iter().find(|&p| {
                    occupied[p]
                        .iter()
                        .all(|&(a, d)| departure <= a || arrival >= d)
                });
                if let Some(p) = free {
                    occupied[p].push((arrival, departure));
                    let point_power = points[p].rated_power_w;
                    sessions.push(EvSession {
                        point: p,
                        arrival,
                        departure,
                        soc_init: soc_init.max(profile.soc_min_pct),
                        soc_max: profile.soc_max_pct,
                        soc_min: profile.soc_min_pct,
                        capacity_kwh: capacity,
                        rated_power_w: (profile.ev_power_kw * W_PER_KW).min(point_power),
                        v2g,
                    });
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(Error::InfeasibleDensity {
                    arrival: last_arrival,
                    points: points.len(),
                });
            }
        }
    }

    sessions.sort_by_key(|s| (s.arrival, s.point));
    Ok(sessions)
}

/// Force every session to the given V2G capability.
pub fn with_v2g(sessions: &[EvSession], enabled: bool) -> Vec<EvSession> {
    sessions
        .iter()
        .map(|s| EvSession {
            v2g: s.v2g && enabled,
            ..s.clone()
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct SessionRow {
    point_id: usize,
    arrival_step: usize,
    departure_step: usize,
    soc_init_pct: f64,
    soc_max_pct: f64,
    capacity_kwh: f64,
    pmax_kw: f64,
    v2g_flag: u8,
}

/// Read a sessions file (CSV with a header row).
pub fn load_sessions(path: impl AsRef<Path>) -> Result<Vec<EvSession>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sessions(&text).map_err(|e| match e {
        Error::Parse { msg, .. } => Error::parse(path.display().to_string(), msg),
        other => other,
    })
}

pub fn parse_sessions(text: &str) -> Result<Vec<EvSession>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    reader
        .deserialize::<SessionRow>()
        .map(|row| {
            let row = row.map_err(|e| Error::parse("sessions", e))?;
            Ok(EvSession {
                point: row.point_id,
                arrival: row.arrival_step,
                departure: row.departure_step,
                soc_init: row.soc_init_pct,
                soc_max: row.soc_max_pct,
                soc_min: 0.0,
                capacity_kwh: row.capacity_kwh,
                rated_power_w: row.pmax_kw * W_PER_KW,
                v2g: row.v2g_flag != 0,
            })
        })
        .collect()
}

pub fn sessions_to_csv(sessions: &[EvSession]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in sessions {
        w.serialize(SessionRow {
            point_id: s.point,
            arrival_step: s.arrival,
            departure_step: s.departure,
            soc_init_pct: s.soc_init,
            soc_max_pct: s.soc_max,
            capacity_kwh: s.capacity_kwh,
            pmax_kw: s.rated_power_w / W_PER_KW,
            v2g_flag: s.v2g as u8,
        })
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session(arrival: usize, departure: usize, soc_init: f64, cap: f64, p_kw: f64) -> EvSession {
        EvSession {
            point: 0,
            arrival,
            departure,
            soc_init,
            soc_max: 100.0,
            soc_min: 0.0,
            capacity_kwh: cap,
            rated_power_w: p_kw * 1000.0,
            v2g: false,
        }
    }

    #[test]
    fn soc_step_examples() {
        assert!((soc_step(50.0, 11_000.0, 0.25, 55.0) - 55.0).abs() < 1e-12);
        assert_eq!(soc_step(50.0, 0.0, 0.25, 55.0), 50.0);
        assert!((soc_step(80.0, -10_000.0, 0.25, 50.0) - 75.0).abs() < 1e-12);
    }

    #[test]
    fn uncontrolled_partial_final_step() {
        let s = vec![session(0, 20, 20.0, 40.0, 10.0)];
        let sched = uncontrolled_schedule(&s, 1, 20, 0.25);
        let p = &sched.power[0];
        assert!(p[..12].iter().all(|&x| x == 10_000.0));
        assert!((p[12] - 8_000.0).abs() < 1e-9);
        assert!(p[13..].iter().all(|&x| x == 0.0));
        assert!((sched.final_soc(0) - 100.0).abs() < 1e-9);
        assert_eq!(sched.alpha[0], 1.0);
    }

    #[test]
    fn uncontrolled_already_full() {
        let s = vec![session(2, 6, 100.0, 40.0, 10.0)];
        let sched = uncontrolled_schedule(&s, 1, 8, 0.25);
        assert!(sched.power[0].iter().all(|&p| p == 0.0));
    }

    #[test]
    fn uncontrolled_truncated_by_departure() {
        let s = vec![session(0, 2, 20.0, 40.0, 10.0)];
        let sched = uncontrolled_schedule(&s, 1, 4, 0.25);
        assert_eq!(&sched.power[0][..2], &[10_000.0, 10_000.0]);
        assert!(sched.alpha[0] < 1.0);
        assert!((sched.final_soc(0) - 32.5).abs() < 1e-9);
    }

    #[test]
    fn soc_zero_outside_connection() {
        let s = vec![session(2, 4, 50.0, 40.0, 10.0)];
        let sched = uncontrolled_schedule(&s, 1, 6, 0.25);
        assert_eq!(sched.soc_at(&s, 0, 0), 0.0);
        assert_eq!(sched.soc_at(&s, 0, 2), 50.0);
        assert_eq!(sched.soc_at(&s, 0, 5), 0.0);
    }

    #[test]
    fn overlapping_sessions_rejected() {
        let points = vec![ChargingPoint {
            id: 0,
            bus: 1,
            rated_power_w: 11_000.0,
        }];
        let a = session(0, 5, 20.0, 40.0, 10.0);
        let b = session(4, 8, 20.0, 40.0, 10.0);
        assert!(validate_sessions(&[a.clone(), b], &points).is_err());
        let c = session(5, 8, 20.0, 40.0, 10.0);
        assert!(validate_sessions(&[a, c], &points).is_ok());
    }

    #[test]
    fn invalid_soc_bounds() {
        let points = vec![ChargingPoint {
            id: 0,
            bus: 1,
            rated_power_w: 11_000.0,
        }];
        let mut s = session(0, 5, 20.0, 40.0, 10.0);
        s.soc_min = 30.0;
        assert!(s.validate(&points).is_err());
        let s = session(5, 5, 20.0, 40.0, 10.0);
        assert!(s.validate(&points).is_err());
    }

    #[test]
    fn sessions_csv_roundtrip() {
        let mut s = session(3, 9, 25.0, 55.0, 11.0);
        s.v2g = true;
        let text = sessions_to_csv(&[s.clone()]);
        assert!(text.starts_with("point_id,arrival_step,departure_step"));
        assert_eq!(parse_sessions(&text).unwrap(), vec![s]);
    }
}
