//! Radial low-voltage network model and its JSON file format.

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default step length: 15 minutes.
pub const DEFAULT_STEP_HOURS: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: u32,
    pub phases: usize,
    /// Line-to-neutral nominal voltage in volts.
    pub v_nom: f64,
    /// Active base load in W, indexed `[step][phase]`. Generation is negative.
    pub p_load: Vec<Vec<f64>>,
    /// Reactive base load in var, indexed `[step][phase]`.
    #[serde(default)]
    pub q_load: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: u32,
    pub to: u32,
    pub r_ohm: f64,
    pub x_ohm: f64,
    pub ampacity_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transformer {
    pub rated_kva: f64,
    /// Secondary (LV) bus; the root of the radial tree.
    pub bus: u32,
    pub ratio: f64,
}

impl Transformer {
    pub fn rated_w(&self) -> f64 {
        self.rated_kva * 1000.0
    }
}

/// Tree structure derived from the line list, oriented away from the
/// transformer bus. All indices are positions in `Network::buses` /
/// `Network::lines`.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub root: usize,
    /// Buses in breadth-first order from the root.
    pub order: Vec<usize>,
    pub parent_bus: Vec<Option<usize>>,
    pub parent_line: Vec<Option<usize>>,
    /// Upstream and downstream bus of each line.
    pub line_ends: Vec<(usize, usize)>,
    pub depth: Vec<usize>,
}

impl Topology {
    /// Lines on the path from the root down to `bus`, root side first.
    pub fn path_lines(&self, bus: usize) -> Vec<usize> {
        let mut path = Vec::with_capacity(self.depth[bus]);
        let mut cur = bus;
        while let Some(l) = self.parent_line[cur] {
            path.push(l);
            cur = self.line_ends[l].0;
        }
        path.reverse();
        path
    }

    /// True if `bus` lies at or below the downstream end of `line`.
    pub fn is_downstream(&self, line: usize, bus: usize) -> bool {
        let child = self.line_ends[line].1;
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
}

/// Immutable radial network. Construct with [`Network::new`] or
/// [`load_network`]; both validate every invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkFile", into = "NetworkFile")]
pub struct Network {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    transformer: Transformer,
    step_hours: f64,
    horizon: usize,
    index: HashMap<u32, usize>,
    topology: Topology,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetworkFile {
    #[serde(default = "default_step_hours")]
    step_hours: f64,
    horizon: usize,
    buses: Vec<Bus>,
    lines: Vec<Line>,
    transformer: Transformer,
}

fn default_step_hours() -> f64 {
    DEFAULT_STEP_HOURS
}

impl TryFrom<NetworkFile> for Network {
    type Error = Error;

    fn try_from(f: NetworkFile) -> Result<Self> {
        Network::new(f.buses, f.lines, f.transformer, f.step_hours, f.horizon)
    }
}

impl From<Network> for NetworkFile {
    fn from(n: Network) -> Self {
        NetworkFile {
            step_hours: n.step_hours,
            horizon: n.horizon,
            buses: n.buses,
            lines: n.lines,
            transformer: n.transformer,
        }
    }
}

impl Network {
    pub fn new(
        mut buses: Vec<Bus>,
        lines: Vec<Line>,
        transformer: Transformer,
        step_hours: f64,
        horizon: usize,
    ) -> Result<Self> {
        let invalid = |msg: String| Err(Error::InvalidNetwork(msg));

        if !(step_hours > 0.0 && step_hours.is_finite()) {
            return invalid(format!("step_hours must be positive, got {step_hours}"));
        }
        if horizon == 0 {
            return invalid("horizon must be at least one step".into());
        }
        if buses.is_empty() {
            return invalid("no buses".into());
        }

        let phases = buses[0].phases;
        let mut index = HashMap::with_capacity(buses.len());
        for (i, bus) in buses.iter_mut().enumerate() {
            if index.insert(bus.id, i).is_some() {
                return invalid(format!("duplicate bus id {}", bus.id));
            }
            if bus.phases != 1 && bus.phases != 3 {
                return invalid(format!("bus {}: phases must be 1 or 3", bus.id));
            }
            if bus.phases != phases {
                return invalid(format!(
                    "bus {} has {} phases; all buses must share the network phase count {phases}",
                    bus.id, bus.phases
                ));
            }
            if !(bus.v_nom > 0.0 && bus.v_nom.is_finite()) {
                return invalid(format!("bus {}: v_nom must be positive", bus.id));
            }
            if bus.q_load.is_empty() {
                bus.q_load = vec![vec![0.0; phases]; horizon];
            }
            for (what, series) in [("p_load", &bus.p_load), ("q_load", &bus.q_load)] {
                if series.len() != horizon {
                    return invalid(format!(
                        "bus {}: {what} has {} steps, horizon is {horizon}",
                        bus.id,
                        series.len()
                    ));
                }
                if let Some(row) = series
                    .iter()
                    .find(|row| row.len() != phases || row.iter().any(|v| !v.is_finite()))
                {
                    return invalid(format!(
                        "bus {}: {what} entry {row:?} must hold {phases} finite values",
                        bus.id
                    ));
                }
            }
        }

        for line in &lines {
            if line.from == line.to {
                return invalid(format!("line {}-{} is a self loop", line.from, line.to));
            }
            for end in [line.from, line.to] {
                if !index.contains_key(&end) {
                    return invalid(format!(
                        "line {}-{} references unknown bus {end}",
                        line.from, line.to
                    ));
                }
            }
            if !(line.r_ohm >= 0.0) || !line.x_ohm.is_finite() || !line.r_ohm.is_finite() {
                return invalid(format!(
                    "line {}-{}: negative or non-finite impedance",
                    line.from, line.to
                ));
            }
            if !(line.ampacity_a > 0.0) {
                return invalid(format!("line {}-{}: ampacity must be positive", line.from, line.to));
            }
        }

        if !(transformer.rated_kva > 0.0) || !(transformer.ratio > 0.0) {
            return invalid("transformer rating and ratio must be positive".into());
        }
        let root = *index.get(&transformer.bus).ok_or_else(|| {
            Error::InvalidNetwork(format!("transformer bus {} does not exist", transformer.bus))
        })?;

        let topology = build_topology(&buses, &lines, &index, root)?;

        Ok(Network {
            buses,
            lines,
            transformer,
            step_hours,
            horizon,
            index,
            topology,
        })
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn transformer(&self) -> &Transformer {
        &self.transformer
    }

    pub fn step_hours(&self) -> f64 {
        self.step_hours
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn phases(&self) -> usize {
        self.buses[0].phases
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn root(&self) -> usize {
        self.topology.root
    }

    /// Position of the bus with the given id.
    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.index.get(&id).copied()
    }

    /// Position of the line joining the two bus ids, in either orientation.
    pub fn line_index(&self, a: u32, b: u32) -> Option<usize> {
        self.lines
            .iter()
            .position(|l| (l.from == a && l.to == b) || (l.from == b && l.to == a))
    }

    /// Lines whose upstream end is the transformer bus.
    pub fn transformer_lines(&self) -> impl Iterator<Item = usize> + '_ {
        let root = self.topology.root;
        (0..self.lines.len()).filter(move |&l| self.topology.line_ends[l].0 == root)
    }

    /// Signed sum of all active base loads at step `t` (no losses).
    pub fn aggregate_base_load(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self
            .buses
            .iter()
            .map(|b| b.p_load[t].iter().sum::<f64>())
            .sum())
    }

    /// Aggregate base load for every step of the horizon.
    pub fn base_load_series(&self) -> Vec<f64> {
        (0..self.horizon)
            .map(|t| self.aggregate_base_load(t).expect("t within horizon"))
            .collect()
    }

    /// Base injections (P, Q) in W/var at step `t`, indexed `[bus][phase]`.
    pub fn base_injections(&self, t: usize) -> Result<Vec<Vec<(f64, f64)>>> {
        self.check_step(t)?;
        Ok(self
            .buses
            .iter()
            .map(|b| {
                b.p_load[t]
                    .iter()
                    .zip(&b.q_load[t])
                    .map(|(&p, &q)| (p, q))
                    .collect()
            })
            .collect())
    }

    /// Copy of this network with every base load multiplied by `factor`.
    pub fn with_base_load_scale(&self, factor: f64) -> Network {
        let mut net = self.clone();
        for bus in &mut net.buses {
            for row in bus.p_load.iter_mut().chain(bus.q_load.iter_mut()) {
                for v in row.iter_mut() {
                    *v *= factor;
                }
            }
        }
        net
    }

    /// Copy of this network with a different transformer rating.
    pub fn with_transformer_rating(&self, rated_kva: f64) -> Result<Network> {
        let mut t = self.transformer.clone();
        t.rated_kva = rated_kva;
        Network::new(
            self.buses.clone(),
            self.lines.clone(),
            t,
            self.step_hours,
            self.horizon,
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Network> {
        serde_json::from_str(text).map_err(|e| {
            // serde wraps our validation errors as custom messages; keep the
            // topology class distinguishable for callers.
            let msg = e.to_string();
            if msg.contains("not a radial tree") {
                Error::Topology(msg)
            } else {
                Error::parse("network", msg)
            }
        })
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t >= self.horizon {
            return Err(Error::StepOutOfRange {
                step: t,
                horizon: self.horizon,
            });
        }
        Ok(())
    }
}

impl std::fmt::Display for Network {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} buses, {} lines, {} kVA, {} steps of {} h",
            self.buses.len(),
            self.lines.len(),
            self.transformer.rated_kva,
            self.horizon,
            self.step_hours
        )
    }
}

fn build_topology(
    buses: &[Bus],
    lines: &[Line],
    index: &HashMap<u32, usize>,
    root: usize,
) -> Result<Topology> {
    let n = buses.len();
    if lines.len() + 1 != n {
        // A connected graph with n nodes and n - 1 edges is a tree; anything
        // else has a cycle or is disconnected.
        let kind = if lines.len() + 1 > n {
            "contains a cycle"
        } else {
            "is disconnected"
        };
        return Err(Error::Topology(format!(
            "{} lines for {} buses: network {kind}",
            lines.len(),
            n
        )));
    }

    let mut adjacency = vec![Vec::new(); n];
    for (l, line) in lines.iter().enumerate() {
        let (a, b) = (index[&line.from], index[&line.to]);
        adjacency[a].push((b, l));
        adjacency[b].push((a, l));
    }

    let mut parent_bus = vec![None; n];
    let mut parent_line = vec![None; n];
    let mut depth = vec![0; n];
    let mut line_ends = vec![(usize::MAX, usize::MAX); lines.len()];
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::from([root]);
    seen[root] = true;

    while let Some(u) = queue.pop_front() {
        order.push(u);
        for &(v, l) in &adjacency[u] {
            if Some(l) == parent_line[u] {
                continue;
            }
            if seen[v] {
                return Err(Error::Topology(format!(
                    "line {}-{} closes a cycle",
                    lines[l].from, lines[l].to
                )));
            }
            seen[v] = true;
            parent_bus[v] = Some(u);
            parent_line[v] = Some(l);
            depth[v] = depth[u] + 1;
            line_ends[l] = (u, v);
            queue.push_back(v);
        }
    }

    if order.len() != n {
        let missing = seen.iter().position(|s| !s).expect("some bus unseen");
        return Err(Error::Topology(format!(
            "bus {} is not connected to the transformer",
            buses[missing].id
        )));
    }

    Ok(Topology {
        root,
        order,
        parent_bus,
        parent_line,
        line_ends,
        depth,
    })
}

/// Read and validate a network file.
pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Network::from_json(&text)
}
