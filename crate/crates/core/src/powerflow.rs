//! Radial power flow.
//!
//! [`solve_sweep`] is the nonlinear backward/forward sweep used to validate
//! schedules. [`LinearGridMap`] is a first-order surrogate built around a
//! converged operating point; its current and voltage magnitude estimates are
//! affine in the injections, so they can be used directly as LP rows.
//! [`calibrate_correction`] measures how far the surrogate underestimates the
//! sweep and turns that into a multiplier on line ampacities.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::Network;

/// Complex power injections in VA, indexed `[bus][phase]`. Positive real part
/// is consumption.
pub type Injections = Vec<Vec<Complex64>>;

pub const DEFAULT_TOL_PU: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    /// Phase-to-neutral voltages in V, `[bus][phase]`.
    pub bus_voltages: Vec<Vec<Complex64>>,
    /// Line currents in A flowing away from the root, `[line][phase]`.
    pub line_currents: Vec<Vec<Complex64>>,
    /// Total series losses in W.
    pub losses_w: f64,
    /// Complex power drawn from the transformer secondary, summed over phases.
    pub transformer_power: Complex64,
    pub iterations: usize,
}

impl PowerFlowSolution {
    pub fn voltage_magnitudes(&self) -> Vec<Vec<f64>> {
        mags(&self.bus_voltages)
    }

    pub fn current_magnitudes(&self) -> Vec<Vec<f64>> {
        mags(&self.line_currents)
    }

    /// Series losses recomputed from the returned currents.
    pub fn recompute_losses(&self, net: &Network) -> f64 {
        net.lines()
            .iter()
            .zip(&self.line_currents)
            .map(|(line, phases)| phases.iter().map(|i| i.norm_sqr() * line.r_ohm).sum::<f64>())
            .sum()
    }
}

fn mags(values: &[Vec<Complex64>]) -> Vec<Vec<f64>> {
    values
        .iter()
        .map(|row| row.iter().map(|v| v.norm()).collect())
        .collect()
}

/// Root voltage phasor of each phase: nominal magnitude, 120 degree spacing.
fn source_voltages(net: &Network) -> Vec<Complex64> {
    let v = net.buses()[net.root()].v_nom;
    let phases = net.phases();
    (0..phases)
        .map(|ph| {
            let angle = -2.0 * std::f64::consts::PI / 3.0 * ph as f64;
            Complex64::from_polar(v, if phases == 1 { 0.0 } else { angle })
        })
        .collect()
}

/// All-zero injections shaped for `net`.
pub fn zero_injections(net: &Network) -> Injections {
    vec![vec![Complex64::new(0.0, 0.0); net.phases()]; net.buses().len()]
}

/// Base-load injections of `net` at step `t`.
pub fn base_injections(net: &Network, t: usize) -> Result<Injections> {
    Ok(net
        .base_injections(t)?
        .into_iter()
        .map(|row| row.into_iter().map(|(p, q)| Complex64::new(p, q)).collect())
        .collect())
}

fn check_shape(net: &Network, injections: &Injections) -> Result<()> {
    let phases = net.phases();
    if injections.len() != net.buses().len() || injections.iter().any(|r| r.len() != phases) {
        return Err(Error::InvalidNetwork(format!(
            "injections must be shaped [{}][{}]",
            net.buses().len(),
            phases
        )));
    }
    Ok(())
}

/// Backward/forward sweep with constant-power loads.
///
/// Phases are decoupled (diagonal line impedance), so each phase is solved on
/// its own. Convergence is declared when the largest voltage update falls
/// below `tol` in per unit of the bus nominal voltage.
pub fn solve_sweep(
    net: &Network,
    injections: &Injections,
    tol: f64,
    max_iter: usize,
) -> Result<PowerFlowSolution> {
    check_shape(net, injections)?;
    let topo = net.topology();
    let buses = net.buses();
    let lines = net.lines();
    let n_bus = buses.len();
    let phases = net.phases();
    let sources = source_voltages(net);
    let v_base: Vec<f64> = buses.iter().map(|b| b.v_nom).collect();

    let mut voltages = vec![vec![Complex64::new(0.0, 0.0); phases]; n_bus];
    let mut currents = vec![vec![Complex64::new(0.0, 0.0); phases]; lines.len()];
    let mut worst_iterations = 0;

    for ph in 0..phases {
        let mut v = vec![sources[ph]; n_bus];
        let mut branch = vec![Complex64::new(0.0, 0.0); n_bus];
        let mut converged = false;
        let mut last_update = f64::INFINITY;
        let mut iter = 0;

        while iter < max_iter {
            iter += 1;
            backward(net, injections, ph, &v, &mut branch);

            let mut max_update: f64 = 0.0;
            let mut v_new = v.clone();
            for &b in topo.order.iter().skip(1) {
                let l = topo.parent_line[b].expect("non-root bus has a parent line");
                let parent = topo.parent_bus[b].expect("non-root bus has a parent");
                let z = Complex64::new(lines[l].r_ohm, lines[l].x_ohm);
                v_new[b] = v_new[parent] - z * branch[b];
                max_update = max_update.max((v_new[b] - v[b]).norm() / v_base[b]);
            }
            v = v_new;
            last_update = max_update;
            if !max_update.is_finite() {
                break;
            }
            if max_update < tol {
                converged = true;
                break;
            }
        }

        if !converged {
            return Err(Error::NonConvergence {
                iterations: iter,
                last_update,
            });
        }
        worst_iterations = worst_iterations.max(iter);

        // Currents consistent with the final voltages, so KCL holds exactly
        // for the reported injections.
        backward(net, injections, ph, &v, &mut branch);
        for (b, vb) in v.iter().enumerate() {
            voltages[b][ph] = *vb;
        }
        for (l, &(_, child)) in topo.line_ends.iter().enumerate() {
            currents[l][ph] = branch[child];
        }
    }

    let root = topo.root;
    let mut transformer_power = Complex64::new(0.0, 0.0);
    for ph in 0..phases {
        let v = voltages[root][ph];
        let mut i_total = (injections[root][ph] / v).conj();
        for l in net.transformer_lines() {
            i_total += currents[l][ph];
        }
        transformer_power += v * i_total.conj();
    }

    let mut solution = PowerFlowSolution {
        bus_voltages: voltages,
        line_currents: currents,
        losses_w: 0.0,
        transformer_power,
        iterations: worst_iterations,
    };
    solution.losses_w = solution.recompute_losses(net);
    Ok(solution)
}

/// Accumulate injection currents from the leaves up. `branch[b]` ends up as
/// the current entering bus `b` from its parent.
fn backward(net: &Network, injections: &Injections, ph: usize, v: &[Complex64], branch: &mut [Complex64]) {
    let topo = net.topology();
    for (b, slot) in branch.iter_mut().enumerate() {
        *slot = (injections[b][ph] / v[b]).conj();
    }
    for &b in topo.order.iter().rev() {
        if let Some(parent) = topo.parent_bus[b] {
            let flow = branch[b];
            branch[parent] += flow;
        }
    }
}

/// Largest KCL mismatch (A) over all buses and phases.
pub fn kcl_residual(net: &Network, injections: &Injections, sol: &PowerFlowSolution) -> f64 {
    let topo = net.topology();
    let mut worst: f64 = 0.0;
    for b in 0..net.buses().len() {
        if b == topo.root {
            continue;
        }
        for ph in 0..net.phases() {
            let inflow = sol.line_currents[topo.parent_line[b].unwrap()][ph];
            let mut out = (injections[b][ph] / sol.bus_voltages[b][ph]).conj();
            for (l, &(up, _)) in topo.line_ends.iter().enumerate() {
                if up == b {
                    out += sol.line_currents[l][ph];
                }
            }
            worst = worst.max((inflow - out).norm());
        }
    }
    worst
}

/// First-order surrogate of the sweep around a converged base point.
///
/// Extra injections are converted to currents at the base-point voltages,
/// accumulated towards the root, and turned into voltage drops along each
/// path. Magnitudes are estimated by projecting the perturbed phasors onto
/// the base-point phasor directions. Every estimate is affine in the
/// injections and reproduces the base point exactly.
#[derive(Debug, Clone)]
pub struct LinearGridMap {
    base_injections: Injections,
    base: PowerFlowSolution,
    base_current: Vec<Vec<f64>>,
    base_voltage: Vec<Vec<f64>>,
    /// `1 / conj(V_b)` at the base point, `[bus][phase]`.
    inv_conj_v: Vec<Vec<Complex64>>,
    /// Unit phasor used to project each line current, `[line][phase]`.
    current_dir: Vec<Vec<Complex64>>,
    /// Unit phasor of each bus voltage, `[bus][phase]`.
    voltage_dir: Vec<Vec<Complex64>>,
    /// Series impedance from the root to each bus.
    path_impedance: Vec<Complex64>,
    root_voltage: Vec<Complex64>,
    parent_bus: Vec<Option<usize>>,
    depth: Vec<usize>,
    line_child: Vec<usize>,
}

/// Per-watt and per-var sensitivities of one magnitude estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensitivity {
    pub dp: f64,
    pub dq: f64,
}

impl LinearGridMap {
    pub fn base_point(&self) -> &PowerFlowSolution {
        &self.base
    }

    pub fn base_injections(&self) -> &Injections {
        &self.base_injections
    }

    /// Base-point current magnitude of `line` on `phase`.
    pub fn base_current(&self, line: usize, phase: usize) -> f64 {
        self.base_current[line][phase]
    }

    pub fn base_voltage(&self, bus: usize, phase: usize) -> f64 {
        self.base_voltage[bus][phase]
    }

    fn is_downstream(&self, line: usize, bus: usize) -> bool {
        let child = self.line_child[line];
        let mut cur = bus;
        loop {
            if cur == child {
                return true;
            }
            match self.parent_bus[cur] {
                Some(p) => cur = p,
                None => return false,
            }
        }
    }

    fn common_ancestor(&self, mut a: usize, mut b: usize) -> usize {
        while self.depth[a] > self.depth[b] {
            a = self.parent_bus[a].unwrap();
        }
        while self.depth[b] > self.depth[a] {
            b = self.parent_bus[b].unwrap();
        }
        while a != b {
            a = self.parent_bus[a].unwrap();
            b = self.parent_bus[b].unwrap();
        }
        a
    }

    /// Current phasor change per unit P and per unit Q injected at `bus`.
    fn unit_currents(&self, bus: usize, phase: usize) -> (Complex64, Complex64) {
        let k = self.inv_conj_v[bus][phase];
        // conj(dS / V) = conj(dS) / conj(V)
        (k, Complex64::new(0.0, -1.0) * k)
    }

    /// Sensitivity of the estimated |I| of `line` to an injection at `bus`.
    pub fn current_sensitivity(&self, line: usize, phase: usize, bus: usize) -> Sensitivity {
        if !self.is_downstream(line, bus) {
            return Sensitivity { dp: 0.0, dq: 0.0 };
        }
        let u = self.current_dir[line][phase].conj();
        let (ip, iq) = self.unit_currents(bus, phase);
        Sensitivity {
            dp: (ip * u).re,
            dq: (iq * u).re,
        }
    }

    /// Sensitivity of the estimated |V| at `at_bus` to an injection at `bus`.
    pub fn voltage_sensitivity(&self, at_bus: usize, phase: usize, bus: usize) -> Sensitivity {
        let z = self.path_impedance[self.common_ancestor(at_bus, bus)];
        let w = self.voltage_dir[at_bus][phase].conj();
        let (ip, iq) = self.unit_currents(bus, phase);
        Sensitivity {
            dp: (-(z * ip) * w).re,
            dq: (-(z * iq) * w).re,
        }
    }

    /// Sensitivity of the transformer's active power to an injection at `bus`.
    /// Exceeds one where the bus sits behind a voltage drop, which is how
    /// marginal losses enter the surrogate.
    pub fn transformer_sensitivity(&self, phase: usize, bus: usize) -> Sensitivity {
        let v = self.root_voltage[phase];
        let (ip, iq) = self.unit_currents(bus, phase);
        Sensitivity {
            dp: (v * ip.conj()).re,
            dq: (v * iq.conj()).re,
        }
    }

    fn deltas(&self, injections: &Injections) -> Vec<Vec<Complex64>> {
        injections
            .iter()
            .zip(&self.base_injections)
            .map(|(row, base)| row.iter().zip(base).map(|(s, s0)| s - s0).collect())
            .collect()
    }

    /// Estimated line current magnitudes `[line][phase]` at `injections`.
    pub fn current_magnitudes(&self, injections: &Injections) -> Vec<Vec<f64>> {
        let delta = self.deltas(injections);
        let mut out = self.base_current.clone();
        for (line, row) in out.iter_mut().enumerate() {
            for (ph, value) in row.iter_mut().enumerate() {
                for (bus, d) in delta.iter().enumerate() {
                    let s = self.current_sensitivity(line, ph, bus);
                    *value += s.dp * d[ph].re + s.dq * d[ph].im;
                }
            }
        }
        out
    }

    /// Estimated bus voltage magnitudes `[bus][phase]` at `injections`.
    pub fn voltage_magnitudes(&self, injections: &Injections) -> Vec<Vec<f64>> {
        let delta = self.deltas(injections);
        let mut out = self.base_voltage.clone();
        for (at, row) in out.iter_mut().enumerate() {
            for (ph, value) in row.iter_mut().enumerate() {
                for (bus, d) in delta.iter().enumerate() {
                    let s = self.voltage_sensitivity(at, ph, bus);
                    *value += s.dp * d[ph].re + s.dq * d[ph].im;
                }
            }
        }
        out
    }

    /// Estimated transformer active power in W at `injections`.
    pub fn transformer_power(&self, injections: &Injections) -> f64 {
        let delta = self.deltas(injections);
        let mut p = self.base.transformer_power.re;
        for (bus, d) in delta.iter().enumerate() {
            for (ph, dv) in d.iter().enumerate() {
                let s = self.transformer_sensitivity(ph, bus);
                p += s.dp * dv.re + s.dq * dv.im;
            }
        }
        p
    }
}

/// Build the surrogate around `base_injections`.
pub fn build_linear_map(net: &Network, base_injections: &Injections) -> Result<LinearGridMap> {
    let base = solve_sweep(net, base_injections, DEFAULT_TOL_PU * 1e-3, DEFAULT_MAX_ITER * 10)?;
    let topo = net.topology();
    let phases = net.phases();
    let lines = net.lines();

    let unit = |z: Complex64, fallback: Complex64| {
        if z.norm() > 1e-12 {
            z / z.norm()
        } else {
            fallback / fallback.norm()
        }
    };

    let voltage_dir: Vec<Vec<Complex64>> = base
        .bus_voltages
        .iter()
        .map(|row| row.iter().map(|v| v / v.norm()).collect())
        .collect();

    // A line carrying no current at the base point is projected onto the
    // voltage angle at its downstream end, which is the direction a
    // unity-power-factor load would push it.
    let current_dir = (0..lines.len())
        .map(|l| {
            let child = topo.line_ends[l].1;
            (0..phases)
                .map(|ph| unit(base.line_currents[l][ph], base.bus_voltages[child][ph]))
                .collect()
        })
        .collect();

    let mut path_impedance = vec![Complex64::new(0.0, 0.0); net.buses().len()];
    for &b in topo.order.iter().skip(1) {
        let l = topo.parent_line[b].unwrap();
        let p = topo.parent_bus[b].unwrap();
        path_impedance[b] = path_impedance[p] + Complex64::new(lines[l].r_ohm, lines[l].x_ohm);
    }

    let inv_conj_v = base
        .bus_voltages
        .iter()
        .map(|row| row.iter().map(|v| 1.0 / v.conj()).collect())
        .collect();

    Ok(LinearGridMap {
        base_injections: base_injections.clone(),
        base_current: base.current_magnitudes(),
        base_voltage: base.voltage_magnitudes(),
        root_voltage: base.bus_voltages[topo.root].clone(),
        inv_conj_v,
        current_dir,
        voltage_dir,
        path_impedance,
        parent_bus: topo.parent_bus.clone(),
        depth: topo.depth.clone(),
        line_child: topo.line_ends.iter().map(|&(_, c)| c).collect(),
        base,
    })
}

/// Multiplier applied to line ampacities in the dispatch current rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionFactor(f64);

impl CorrectionFactor {
    pub const ONE: CorrectionFactor = CorrectionFactor(1.0);

    pub fn new(kappa: f64) -> Result<Self> {
        if kappa > 0.0 && kappa <= 1.0 {
            Ok(CorrectionFactor(kappa))
        } else {
            Err(Error::Config(format!("correction factor {kappa} outside (0, 1]")))
        }
    }

    pub fn kappa(self) -> f64 {
        self.0
    }

    /// Worst ratio of surrogate to true current over the given
    /// `(linear, sweep)` pairs, clamped to at most one.
    pub fn from_estimates(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut kappa: Option<f64> = None;
        for (linear, sweep) in pairs {
            if sweep <= 0.0 {
                continue;
            }
            let ratio = linear / sweep;
            kappa = Some(kappa.map_or(ratio, |k| k.min(ratio)));
        }
        let kappa = kappa.ok_or(Error::EmptyCalibration)?;
        if kappa <= 0.0 {
            return Err(Error::Config(format!(
                "surrogate gives non-positive current estimates (worst ratio {kappa})"
            )));
        }
        Ok(CorrectionFactor(kappa.min(1.0)))
    }
}

/// Share of ampacity below which a line is ignored during calibration. Only
/// loaded lines can reach their limit, and near-zero currents make the ratio
/// meaningless.
pub const CALIBRATION_MIN_LOADING: f64 = 0.05;

/// `(linear, sweep)` current pairs for every loaded line/phase of one
/// scenario.
pub fn calibration_pairs(
    net: &Network,
    scenario: &Injections,
    map: &LinearGridMap,
) -> Result<Vec<(f64, f64)>> {
    let sweep = solve_sweep(net, scenario, DEFAULT_TOL_PU, DEFAULT_MAX_ITER)?;
    let linear = map.current_magnitudes(scenario);
    let mut pairs = Vec::new();
    for (l, line) in net.lines().iter().enumerate() {
        for ph in 0..net.phases() {
            let true_i = sweep.line_currents[l][ph].norm();
            if true_i >= CALIBRATION_MIN_LOADING * line.ampacity_a {
                pairs.push((linear[l][ph], true_i));
            }
        }
    }
    Ok(pairs)
}

/// Calibrate the ampacity multiplier so that keeping the surrogate current
/// below `kappa * ampacity` keeps the sweep current below ampacity on every
/// scenario of the set.
pub fn calibrate_correction(
    net: &Network,
    scenarios: &[Injections],
    map: &LinearGridMap,
) -> Result<CorrectionFactor> {
    if scenarios.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let mut pairs = Vec::new();
    for scenario in scenarios {
        pairs.extend(calibration_pairs(net, scenario, map)?);
    }
    if pairs.is_empty() {
        // Nothing loaded enough to matter: no correction needed.
        return Ok(CorrectionFactor::ONE);
    }
    CorrectionFactor::from_estimates(pairs)
}
