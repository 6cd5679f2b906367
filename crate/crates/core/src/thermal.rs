//! Lumped RC model of the sensor card.
//!
//! Every pixel contributes two nodes: the copper plate (with the board
//! material under its footprint) and the sensor die glued onto it. Plates
//! lose heat to ambient through both faces, exchange heat laterally through
//! the board bridge between neighbours, and absorb radiation from the heat
//! sources in front of the card.
//!
//! Temperatures are in °C throughout; radiation terms convert to kelvin
//! internally.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::radiation::{self, GaussLegendre, Patch, SIGMA, ZERO_CELSIUS};

/// Volumetric heat capacity of copper, J·m⁻³·K⁻¹ (8960 kg/m³ × 385 J/kg/K).
pub const COPPER_HEAT_CAPACITY: f64 = 8960.0 * 385.0;
/// Volumetric heat capacity of FR4, J·m⁻³·K⁻¹ (1850 kg/m³ × 1100 J/kg/K).
pub const FR4_HEAT_CAPACITY: f64 = 1850.0 * 1100.0;

/// Die-attach resistance with the electrically conductive adhesive, K/W.
pub const CONDUCTIVE_ATTACH: f64 = 5.0;
/// Die-attach resistance with the non-conductive adhesive, K/W.
pub const NON_CONDUCTIVE_ATTACH: f64 = 50.0;

/// Geometry and materials of the sensor card.
#[derive(Debug, Clone, PartialEq)]
pub struct CardSpec {
    pub rows: usize,
    pub cols: usize,
    /// Edge of the square copper plate, m.
    pub pixel_size: f64,
    /// Center-to-center distance between neighbouring plates, m.
    pub pitch: f64,
    pub copper_thickness: f64,
    pub board_thickness: f64,
    /// Plate-to-die thermal resistance, K/W.
    pub attach_resistance: f64,
    pub plate_emissivity: f64,
    /// Convective film coefficient on each exposed face, W·m⁻²·K⁻¹.
    pub film_coefficient: f64,
    /// In-plane conductivity of the board, W·m⁻¹·K⁻¹.
    pub board_conductivity: f64,
    pub die_capacitance: f64,
    /// Edge of the square die footprint, m.
    pub die_size: f64,
    pub copper_heat_capacity: f64,
    pub board_heat_capacity: f64,
}

impl Default for CardSpec {
    fn default() -> Self {
        Self {
            rows: 4,
            cols: 4,
            pixel_size: 0.010,
            pitch: 0.0125,
            copper_thickness: 35e-6,
            board_thickness: 1.55e-3,
            attach_resistance: CONDUCTIVE_ATTACH,
            plate_emissivity: 0.95,
            film_coefficient: 10.0,
            board_conductivity: 0.3,
            die_capacitance: 1e-3,
            die_size: 0.002,
            copper_heat_capacity: COPPER_HEAT_CAPACITY,
            board_heat_capacity: FR4_HEAT_CAPACITY,
        }
    }
}

impl CardSpec {
    /// The 2×4 board with dies on the non-conductive adhesive.
    pub fn second_board() -> Self {
        Self {
            rows: 2,
            cols: 4,
            attach_resistance: NON_CONDUCTIVE_ATTACH,
            ..Self::default()
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidParameter(
                "card needs at least one pixel".into(),
            ));
        }
        let positive = [
            ("pixel_size", self.pixel_size),
            ("pitch", self.pitch),
            ("copper_thickness", self.copper_thickness),
            ("board_thickness", self.board_thickness),
            ("attach_resistance", self.attach_resistance),
            ("die_capacitance", self.die_capacitance),
            ("die_size", self.die_size),
            ("copper_heat_capacity", self.copper_heat_capacity),
            ("board_heat_capacity", self.board_heat_capacity),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("film_coefficient", self.film_coefficient),
            ("board_conductivity", self.board_conductivity),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if self.pitch < self.pixel_size {
            return Err(Error::InvalidParameter(format!(
                "pitch {} is smaller than pixel size {}",
                self.pitch, self.pixel_size
            )));
        }
        if self.die_size >= self.pixel_size {
            return Err(Error::InvalidParameter(
                "die does not fit on the plate".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.plate_emissivity) {
            return Err(Error::InvalidParameter(format!(
                "plate emissivity must lie in [0, 1], got {}",
                self.plate_emissivity
            )));
        }
        Ok(())
    }

    /// Plate center in card coordinates. Row 0 / column 0 is pixel `A1`.
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        let x = (col as f64 - 0.5 * (self.cols as f64 - 1.0)) * self.pitch;
        let y = (row as f64 - 0.5 * (self.rows as f64 - 1.0)) * self.pitch;
        (x, y)
    }

    pub fn pixel_patch(&self, row: usize, col: usize) -> Patch {
        let (x, y) = self.pixel_center(row, col);
        Patch::square(x, y, self.pixel_size, 0.0).with_emissivity(self.plate_emissivity)
    }

    /// Half extents of the card outline (pixel pitch times grid size).
    pub fn half_extent(&self) -> (f64, f64) {
        (
            0.5 * self.cols as f64 * self.pitch,
            0.5 * self.rows as f64 * self.pitch,
        )
    }

    /// Heat capacity of one plate node: copper plus the board under it.
    pub fn plate_capacitance(&self) -> f64 {
        let footprint = self.pixel_size * self.pixel_size;
        footprint
            * (self.copper_thickness * self.copper_heat_capacity
                + self.board_thickness * self.board_heat_capacity)
    }

    /// Convective plus linearized radiative loss of one plate, W/K.
    pub fn ambient_conductance(&self, ambient: f64) -> f64 {
        let exposed = 2.0 * self.pixel_size * self.pixel_size - self.die_size * self.die_size;
        let t = ambient + ZERO_CELSIUS;
        let h_rad = 4.0 * SIGMA * self.plate_emissivity * t.powi(3);
        (self.film_coefficient + h_rad) * exposed
    }

    /// Board bridge between two neighbouring plates, W/K.
    pub fn lateral_conductance(&self) -> f64 {
        self.board_conductivity * self.pixel_size * self.board_thickness / self.pitch
    }
}

/// Pixel label as printed on the card: row letter, 1-based column.
pub fn pixel_name(row: usize, col: usize) -> String {
    let letter = (b'A' + (row % 26) as u8) as char;
    format!("{letter}{}", col + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub label: String,
    /// J/K
    pub capacitance: f64,
    /// °C
    pub temperature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Terminal {
    Node(usize),
    Ambient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Attach,
    Lateral,
    Ambient,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: Terminal,
    /// W/K
    pub conductance: f64,
    pub kind: EdgeKind,
}

/// A node that absorbs radiation through a patch facing the sources.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Absorber {
    pub node: usize,
    pub patch: Patch,
}

/// Grid bookkeeping for networks built from a [`CardSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridLayout {
    pub rows: usize,
    pub cols: usize,
}

impl GridLayout {
    pub fn plate(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn die(&self, row: usize, col: usize) -> usize {
        self.rows * self.cols + row * self.cols + col
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThermalNetwork {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    /// Constant power injected into nodes, W.
    pub power_inputs: Vec<(usize, f64)>,
    /// °C
    pub ambient: f64,
    pub absorbers: Vec<Absorber>,
    pub layout: Option<GridLayout>,
}

impl ThermalNetwork {
    /// An empty network; add nodes and edges, then call [`validate`](Self::validate).
    pub fn new(ambient: f64) -> Self {
        Self {
            nodes: Vec::new(),
            edges: Vec::new(),
            power_inputs: Vec::new(),
            ambient,
            absorbers: Vec::new(),
            layout: None,
        }
    }

    pub fn add_node(&mut self, label: impl Into<String>, capacitance: f64) -> usize {
        self.nodes.push(Node {
            label: label.into(),
            capacitance,
            temperature: self.ambient,
        });
        self.nodes.len() - 1
    }

    pub fn connect(&mut self, from: usize, to: Terminal, conductance: f64, kind: EdgeKind) {
        self.edges.push(Edge {
            from,
            to,
            conductance,
            kind,
        });
    }

    pub fn add_power(&mut self, node: usize, watts: f64) {
        self.power_inputs.push((node, watts));
    }

    pub fn add_absorber(&mut self, node: usize, patch: Patch) {
        self.absorbers.push(Absorber { node, patch });
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn temperatures(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.temperature).collect()
    }

    pub fn set_temperatures(&mut self, temps: &[f64]) {
        for (node, &t) in self.nodes.iter_mut().zip(temps) {
            node.temperature = t;
        }
    }

    /// Puts every node back at ambient.
    pub fn reset(&mut self) {
        let ambient = self.ambient;
        for node in &mut self.nodes {
            node.temperature = ambient;
        }
    }

    pub fn count_edges(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }

    /// Checks the structural invariants: positive capacitances, non-negative
    /// conductances, valid endpoints, and a conductive path to ambient from
    /// every node.
    pub fn validate(&self) -> Result<()> {
        if !self.ambient.is_finite() {
            return Err(Error::Construction(
                "ambient temperature is not finite".into(),
            ));
        }
        let n = self.nodes.len();
        for node in &self.nodes {
            if !(node.capacitance.is_finite() && node.capacitance > 0.0) {
                return Err(Error::Construction(format!(
                    "node `{}` has non-positive capacitance {}",
                    node.label, node.capacitance
                )));
            }
        }
        for edge in &self.edges {
            let to_ok = match edge.to {
                Terminal::Node(j) => j < n && j != edge.from,
                Terminal::Ambient => true,
            };
            if edge.from >= n || !to_ok {
                return Err(Error::Construction(format!(
                    "edge {edge:?} has an invalid endpoint"
                )));
            }
            if !(edge.conductance.is_finite() && edge.conductance >= 0.0) {
                return Err(Error::Construction(format!(
                    "edge {edge:?} has negative or non-finite conductance"
                )));
            }
        }
        for &(node, p) in &self.power_inputs {
            if node >= n || !p.is_finite() {
                return Err(Error::Construction(format!(
                    "invalid power input ({node}, {p})"
                )));
            }
        }
        for a in &self.absorbers {
            if a.node >= n {
                return Err(Error::Construction(format!(
                    "absorber on missing node {}",
                    a.node
                )));
            }
            a.patch.validate()?;
        }

        // Flood fill from ambient over edges that actually conduct.
        let mut reached = vec![false; n];
        let mut stack = Vec::new();
        for e in &self.edges {
            if e.to == Terminal::Ambient && e.conductance > 0.0 && !reached[e.from] {
                reached[e.from] = true;
                stack.push(e.from);
            }
        }
        while let Some(i) = stack.pop() {
            for e in &self.edges {
                if e.conductance <= 0.0 {
                    continue;
                }
                let other = match e.to {
                    Terminal::Node(j) if e.from == i => Some(j),
                    Terminal::Node(j) if j == i => Some(e.from),
                    _ => None,
                };
                if let Some(j) = other {
                    if !reached[j] {
                        reached[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if let Some(i) = reached.iter().position(|r| !r) {
            return Err(Error::Construction(format!(
                "node `{}` has no conductive path to ambient",
                self.nodes[i].label
            )));
        }
        Ok(())
    }

    /// Conductance matrix over the nodes (ambient edges on the diagonal).
    pub fn conductance_matrix(&self) -> DMatrix<f64> {
        let n = self.nodes.len();
        let mut g = DMatrix::zeros(n, n);
        for e in &self.edges {
            let i = e.from;
            g[(i, i)] += e.conductance;
            if let Terminal::Node(j) = e.to {
                g[(j, j)] += e.conductance;
                g[(i, j)] -= e.conductance;
                g[(j, i)] -= e.conductance;
            }
        }
        g
    }

    /// Time constants of the source-free network, longest first.
    pub fn time_constants(&self) -> Vec<f64> {
        let g = self.conductance_matrix();
        let inv_sqrt_c: Vec<f64> = self
            .nodes
            .iter()
            .map(|n| n.capacitance.sqrt().recip())
            .collect();
        let n = g.nrows();
        let scaled = DMatrix::from_fn(n, n, |i, j| g[(i, j)] * inv_sqrt_c[i] * inv_sqrt_c[j]);
        let mut taus: Vec<f64> = SymmetricEigen::new(scaled)
            .eigenvalues
            .iter()
            .map(|&l| 1.0 / l)
            .collect();
        taus.sort_by(|a, b| b.total_cmp(a));
        taus
    }

    /// Heat leaving through ambient edges at the given node temperatures, W.
    pub fn heat_to_ambient(&self, temps: &[f64]) -> f64 {
        self.edges
            .iter()
            .filter(|e| e.to == Terminal::Ambient)
            .map(|e| e.conductance * (temps[e.from] - self.ambient))
            .sum()
    }

    fn external_power(&self) -> DVector<f64> {
        let mut p = DVector::zeros(self.nodes.len());
        for &(i, w) in &self.power_inputs {
            p[i] += w;
        }
        for e in &self.edges {
            if e.to == Terminal::Ambient {
                p[e.from] += e.conductance * self.ambient;
            }
        }
        p
    }
}

/// Builds the two-node-per-pixel network of a card at the given ambient.
pub fn build_network(card: &CardSpec, ambient: f64) -> Result<ThermalNetwork> {
    card.validate()?;
    let mut net = ThermalNetwork::new(ambient);
    let layout = GridLayout {
        rows: card.rows,
        cols: card.cols,
    };
    let c_plate = card.plate_capacitance();
    for r in 0..card.rows {
        for c in 0..card.cols {
            net.add_node(format!("{}.plate", pixel_name(r, c)), c_plate);
        }
    }
    for r in 0..card.rows {
        for c in 0..card.cols {
            net.add_node(format!("{}.die", pixel_name(r, c)), card.die_capacitance);
        }
    }

    let g_attach = 1.0 / card.attach_resistance;
    let g_amb = card.ambient_conductance(ambient);
    let g_lat = card.lateral_conductance();
    for r in 0..card.rows {
        for c in 0..card.cols {
            let plate = layout.plate(r, c);
            net.connect(
                plate,
                Terminal::Node(layout.die(r, c)),
                g_attach,
                EdgeKind::Attach,
            );
            net.connect(plate, Terminal::Ambient, g_amb, EdgeKind::Ambient);
            if c + 1 < card.cols {
                net.connect(
                    plate,
                    Terminal::Node(layout.plate(r, c + 1)),
                    g_lat,
                    EdgeKind::Lateral,
                );
            }
            if r + 1 < card.rows {
                net.connect(
                    plate,
                    Terminal::Node(layout.plate(r + 1, c)),
                    g_lat,
                    EdgeKind::Lateral,
                );
            }
            net.add_absorber(plate, card.pixel_patch(r, c));
        }
    }
    net.layout = Some(layout);
    net.validate()?;
    Ok(net)
}

/// How a heat source is held at its operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceDrive {
    /// Surface held at a fixed temperature, °C.
    Prescribed { temperature: f64 },
    /// Dissipating element with its own thermal mass and path to ambient.
    Powered {
        /// W
        power: f64,
        /// K/W
        resistance: f64,
        /// J/K
        capacitance: f64,
    },
}

/// A radiating patch on the measured board.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatSource {
    pub patch: Patch,
    pub drive: SourceDrive,
}

impl HeatSource {
    pub fn prescribed(patch: Patch, temperature: f64) -> Self {
        Self {
            patch,
            drive: SourceDrive::Prescribed { temperature },
        }
    }

    pub fn powered(patch: Patch, power: f64, resistance: f64, capacitance: f64) -> Self {
        Self {
            patch,
            drive: SourceDrive::Powered {
                power,
                resistance,
                capacitance,
            },
        }
    }

    pub fn validate(&self, ambient: f64) -> Result<()> {
        self.patch.validate()?;
        match self.drive {
            SourceDrive::Prescribed { temperature } => {
                if !temperature.is_finite() || temperature < ambient - 50.0 {
                    return Err(Error::InvalidParameter(format!(
                        "prescribed source temperature {temperature} °C is more than 50 °C below ambient"
                    )));
                }
            }
            SourceDrive::Powered {
                power,
                resistance,
                capacitance,
            } => {
                if !(power.is_finite() && power >= 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "source power must be ≥ 0, got {power}"
                    )));
                }
                if !(resistance.is_finite() && resistance > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "source resistance must be positive, got {resistance}"
                    )));
                }
                if !(capacitance.is_finite() && capacitance > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "source capacitance must be positive, got {capacitance}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Sources facing a network together with their cached radiative couplings.
///
/// A coupling stores `σ·A·F·ε_s·ε_p` for one source/absorber pair, so the
/// exchanged power is `k·(T_s⁴ − T_p⁴)` in kelvin. Powered sources carry
/// their own temperature state.
#[derive(Debug, Clone, PartialEq)]
pub struct Exposure {
    sources: Vec<HeatSource>,
    couplings: Vec<Vec<(usize, f64)>>,
    powered: Vec<usize>,
    source_temperatures: Vec<f64>,
}

impl Exposure {
    pub fn new(net: &ThermalNetwork, sources: Vec<HeatSource>) -> Result<Self> {
        Self::with_rule(net, sources, &GaussLegendre::new(radiation::DEFAULT_ORDER))
    }

    pub fn with_rule(
        net: &ThermalNetwork,
        sources: Vec<HeatSource>,
        rule: &GaussLegendre,
    ) -> Result<Self> {
        let mut couplings = Vec::with_capacity(sources.len());
        let mut powered = Vec::new();
        let mut source_temperatures = Vec::with_capacity(sources.len());
        for (k, src) in sources.iter().enumerate() {
            src.validate(net.ambient)?;
            let mut row = Vec::with_capacity(net.absorbers.len());
            for a in &net.absorbers {
                let f = radiation::view_factor_with(&src.patch, &a.patch, rule)?;
                let k = SIGMA * src.patch.area() * f * src.patch.emissivity * a.patch.emissivity;
                row.push((a.node, k));
            }
            couplings.push(row);
            match src.drive {
                SourceDrive::Prescribed { temperature } => source_temperatures.push(temperature),
                SourceDrive::Powered { .. } => {
                    powered.push(k);
                    source_temperatures.push(net.ambient);
                }
            }
        }
        Ok(Self {
            sources,
            couplings,
            powered,
            source_temperatures,
        })
    }

    /// A network with nothing in front of it.
    pub fn none() -> Self {
        Self {
            sources: Vec::new(),
            couplings: Vec::new(),
            powered: Vec::new(),
            source_temperatures: Vec::new(),
        }
    }

    pub fn sources(&self) -> &[HeatSource] {
        &self.sources
    }

    /// Current source surface temperatures, °C.
    pub fn source_temperatures(&self) -> &[f64] {
        &self.source_temperatures
    }

    /// Returns powered sources to `ambient`.
    pub fn reset(&mut self, ambient: f64) {
        for &k in &self.powered {
            self.source_temperatures[k] = ambient;
        }
    }

    /// `σ·A·F·ε·ε` between source `source` and every absorbing node.
    pub fn couplings(&self, source: usize) -> &[(usize, f64)] {
        &self.couplings[source]
    }

    /// Net radiative power each node receives from the sources, W.
    pub fn radiative_injection(&self, node_temps: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; node_temps.len()];
        for (k, row) in self.couplings.iter().enumerate() {
            let ts4 = (self.source_temperatures[k] + ZERO_CELSIUS).powi(4);
            for &(i, kc) in row {
                out[i] += kc * (ts4 - (node_temps[i] + ZERO_CELSIUS).powi(4));
            }
        }
        out
    }

    fn unknowns(&self, net: &ThermalNetwork) -> usize {
        net.len() + self.powered.len()
    }

    fn state(&self, net: &ThermalNetwork) -> DVector<f64> {
        let n = net.len();
        DVector::from_fn(self.unknowns(net), |i, _| {
            if i < n {
                net.nodes[i].temperature
            } else {
                self.source_temperatures[self.powered[i - n]]
            }
        })
    }

    fn store(&mut self, net: &mut ThermalNetwork, x: &DVector<f64>) {
        let n = net.len();
        for (i, node) in net.nodes.iter_mut().enumerate() {
            node.temperature = x[i];
        }
        for (j, &k) in self.powered.iter().enumerate() {
            self.source_temperatures[k] = x[n + j];
        }
    }

    fn source_temperature(
        &self,
        net: &ThermalNetwork,
        x: &DVector<f64>,
        k: usize,
    ) -> (f64, Option<usize>) {
        match self.powered.iter().position(|&p| p == k) {
            Some(j) => (x[net.len() + j], Some(net.len() + j)),
            None => (self.source_temperatures[k], None),
        }
    }

    /// Linear part `G` and constant forcing `b` over all unknowns.
    fn linear_system(&self, net: &ThermalNetwork) -> (DMatrix<f64>, DVector<f64>) {
        let n = net.len();
        let m = self.unknowns(net);
        let g_net = net.conductance_matrix();
        let b_net = net.external_power();
        let mut g = DMatrix::zeros(m, m);
        g.view_mut((0, 0), (n, n)).copy_from(&g_net);
        let mut b = DVector::zeros(m);
        b.rows_mut(0, n).copy_from(&b_net);
        for (j, &k) in self.powered.iter().enumerate() {
            if let SourceDrive::Powered {
                power, resistance, ..
            } = self.sources[k].drive
            {
                g[(n + j, n + j)] += 1.0 / resistance;
                b[n + j] += power + net.ambient / resistance;
            }
        }
        (g, b)
    }

    fn capacitances(&self, net: &ThermalNetwork) -> Result<Vec<f64>> {
        let mut c = Vec::with_capacity(self.unknowns(net));
        for node in &net.nodes {
            if !(node.capacitance.is_finite() && node.capacitance > 0.0) {
                return Err(Error::Numerical {
                    label: node.label.clone(),
                    reason: format!(
                        "capacitance {} makes the step matrix singular",
                        node.capacitance
                    ),
                });
            }
            c.push(node.capacitance);
        }
        for &k in &self.powered {
            if let SourceDrive::Powered { capacitance, .. } = self.sources[k].drive {
                if !(capacitance.is_finite() && capacitance > 0.0) {
                    return Err(Error::Numerical {
                        label: format!("source{k}"),
                        reason: format!("capacitance {capacitance} makes the step matrix singular"),
                    });
                }
                c.push(capacitance);
            }
        }
        Ok(c)
    }

    /// Radiative source terms at state `x` and, optionally, their Jacobian.
    fn radiation(
        &self,
        net: &ThermalNetwork,
        x: &DVector<f64>,
        mut jac: Option<&mut DMatrix<f64>>,
    ) -> DVector<f64> {
        let mut r = DVector::zeros(x.len());
        for (k, row) in self.couplings.iter().enumerate() {
            let (ts, ts_index) = self.source_temperature(net, x, k);
            let tsk = ts + ZERO_CELSIUS;
            let ts4 = tsk.powi(4);
            let dts = 4.0 * tsk.powi(3);
            for &(i, kc) in row {
                let tik = x[i] + ZERO_CELSIUS;
                let q = kc * (ts4 - tik.powi(4));
                r[i] += q;
                let dti = 4.0 * tik.powi(3);
                if let Some(s) = ts_index {
                    r[s] -= q;
                }
                if let Some(j) = jac.as_deref_mut() {
                    j[(i, i)] -= kc * dti;
                    if let Some(s) = ts_index {
                        j[(i, s)] += kc * dts;
                        j[(s, s)] -= kc * dts;
                        j[(s, i)] += kc * dti;
                    }
                }
            }
        }
        r
    }
}

/// Implicit-Euler stepper with a factorized step matrix.
///
/// Radiation from the sources is evaluated at the start of each step, so
/// the step matrix `C/dt + G` stays constant and is factorized once.
pub struct TransientSolver {
    dt: f64,
    c_over_dt: Vec<f64>,
    forcing: DVector<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl TransientSolver {
    pub fn new(net: &ThermalNetwork, exposure: &Exposure, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "time step must be positive, got {dt}"
            )));
        }
        let c = exposure.capacitances(net)?;
        let (mut a, forcing) = exposure.linear_system(net);
        let c_over_dt: Vec<f64> = c.iter().map(|c| c / dt).collect();
        for (i, &cd) in c_over_dt.iter().enumerate() {
            a[(i, i)] += cd;
        }
        let lu = a.lu();
        if !lu.is_invertible() {
            return Err(Error::Numerical {
                label: net
                    .nodes
                    .first()
                    .map(|n| n.label.clone())
                    .unwrap_or_default(),
                reason: "step matrix is singular".into(),
            });
        }
        Ok(Self {
            dt,
            c_over_dt,
            forcing,
            lu,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances the network and the powered sources by one step.
    pub fn step(&self, net: &mut ThermalNetwork, exposure: &mut Exposure) -> Result<()> {
        let x = exposure.state(net);
        let rad = exposure.radiation(net, &x, None);
        let mut rhs = &self.forcing + rad;
        for (i, &cd) in self.c_over_dt.iter().enumerate() {
            rhs[i] += cd * x[i];
        }
        let x_new = self.lu.solve(&rhs).ok_or_else(|| Error::Numerical {
            label: net
                .nodes
                .first()
                .map(|n| n.label.clone())
                .unwrap_or_default(),
            reason: "step solve failed".into(),
        })?;
        if let Some(i) = x_new.iter().position(|v| !v.is_finite()) {
            let label = net
                .nodes
                .get(i)
                .map(|n| n.label.clone())
                .unwrap_or_else(|| format!("source{}", i - net.len()));
            return Err(Error::Numerical {
                label,
                reason: "temperature became non-finite".into(),
            });
        }
        exposure.store(net, &x_new);
        Ok(())
    }
}

/// One implicit-Euler step of length `dt`.
pub fn step_transient(net: &mut ThermalNetwork, exposure: &mut Exposure, dt: f64) -> Result<()> {
    TransientSolver::new(net, exposure, dt)?.step(net, exposure)
}

/// Recorded trajectory of a transient run.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    /// s
    pub times: Vec<f64>,
    /// One row per sample, one entry per network node, °C.
    pub nodes: Vec<Vec<f64>>,
    /// One row per sample, one entry per source, °C.
    pub sources: Vec<Vec<f64>>,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Temperature history of one node.
    pub fn node(&self, index: usize) -> Vec<f64> {
        self.nodes.iter().map(|row| row[index]).collect()
    }

    pub fn last(&self) -> Option<&[f64]> {
        self.nodes.last().map(|v| v.as_slice())
    }
}

/// Integrates from the current state to `t_end`, sampling every
/// `record_every` seconds (plus the initial state and `t_end` itself).
pub fn run_transient(
    net: &mut ThermalNetwork,
    exposure: &mut Exposure,
    t_end: f64,
    dt: f64,
    record_every: f64,
) -> Result<TimeSeries> {
    if !(dt.is_finite() && dt > 0.0 && t_end.is_finite() && t_end >= dt) {
        return Err(Error::InvalidParameter(format!(
            "need t_end ≥ dt > 0, got t_end={t_end}, dt={dt}"
        )));
    }
    if !(record_every.is_finite() && record_every > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "record cadence must be positive, got {record_every}"
        )));
    }
    let eps = 1e-9 * dt;
    let full_steps = ((t_end + eps) / dt).floor() as usize;
    let remainder = t_end - full_steps as f64 * dt;

    let solver = TransientSolver::new(net, exposure, dt)?;
    let mut series = TimeSeries {
        times: Vec::new(),
        nodes: Vec::new(),
        sources: Vec::new(),
    };
    let record = |series: &mut TimeSeries, t: f64, net: &ThermalNetwork, ex: &Exposure| {
        series.times.push(t);
        series.nodes.push(net.temperatures());
        series.sources.push(ex.source_temperatures().to_vec());
    };
    record(&mut series, 0.0, net, exposure);
    let mut next_mark = 1usize;
    for k in 1..=full_steps {
        solver.step(net, exposure)?;
        let t = k as f64 * dt;
        let is_last = k == full_steps && remainder <= eps;
        if is_last {
            record(&mut series, t_end, net, exposure);
        } else if t + eps >= next_mark as f64 * record_every {
            record(&mut series, t, net, exposure);
            while next_mark as f64 * record_every <= t + eps {
                next_mark += 1;
            }
        }
    }
    if remainder > eps {
        TransientSolver::new(net, exposure, remainder)?.step(net, exposure)?;
        record(&mut series, t_end, net, exposure);
    }
    Ok(series)
}

/// Converged steady operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    /// Node temperatures, °C.
    pub temperatures: Vec<f64>,
    /// Source surface temperatures, °C.
    pub source_temperatures: Vec<f64>,
    pub iterations: usize,
    /// Largest nodal power imbalance, W.
    pub residual: f64,
}

pub const STEADY_TOLERANCE: f64 = 1e-9;
pub const STEADY_MAX_ITERATIONS: usize = 100;

/// Solves the nonlinear steady balance by damped Newton iteration started
/// from ambient. Does not modify `net` or `exposure`.
pub fn solve_steady(net: &ThermalNetwork, exposure: &Exposure) -> Result<SteadyState> {
    net.validate()?;
    let m = exposure.unknowns(net);
    let (g, b) = exposure.linear_system(net);
    let mut x = DVector::from_element(m, net.ambient);

    let residual = |x: &DVector<f64>, jac: Option<&mut DMatrix<f64>>| -> DVector<f64> {
        &b - &g * x + exposure.radiation(net, x, jac)
    };
    let max_abs = |v: &DVector<f64>| v.iter().fold(0.0f64, |acc, r| acc.max(r.abs()));

    let mut r = residual(&x, None);
    let mut norm = max_abs(&r);
    for iteration in 0..STEADY_MAX_ITERATIONS {
        if norm < STEADY_TOLERANCE {
            return Ok(finish(net, exposure, &x, iteration, norm));
        }
        let mut jac = -g.clone();
        let _ = residual(&x, Some(&mut jac));
        let delta = jac.lu().solve(&(-&r)).ok_or_else(|| Error::Numerical {
            label: net
                .nodes
                .first()
                .map(|n| n.label.clone())
                .unwrap_or_default(),
            reason: "singular Newton matrix".into(),
        })?;
        let mut lambda = 1.0;
        loop {
            let trial = &x + &delta * lambda;
            let r_trial = residual(&trial, None);
            let n_trial = max_abs(&r_trial);
            if n_trial < norm || lambda < 1e-6 {
                x = trial;
                r = r_trial;
                norm = n_trial;
                break;
            }
            lambda *= 0.5;
        }
    }
    if norm < STEADY_TOLERANCE {
        return Ok(finish(net, exposure, &x, STEADY_MAX_ITERATIONS, norm));
    }
    Err(Error::NotConverged {
        iterations: STEADY_MAX_ITERATIONS,
        residual: norm,
    })
}

fn finish(
    net: &ThermalNetwork,
    exposure: &Exposure,
    x: &DVector<f64>,
    iterations: usize,
    residual: f64,
) -> SteadyState {
    let n = net.len();
    let mut source_temperatures = exposure.source_temperatures.clone();
    for (j, &k) in exposure.powered.iter().enumerate() {
        source_temperatures[k] = x[n + j];
    }
    SteadyState {
        temperatures: x.rows(0, n).iter().copied().collect(),
        source_temperatures,
        iterations,
        residual,
    }
}
