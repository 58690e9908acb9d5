//! Site networks: geometry, static disorder and the tight-binding Hamiltonian.

use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::EnergyUnit;

/// Relative tolerance used when deciding whether a coupling file is symmetric.
const SYMMETRY_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Chain,
    Ring,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetKind {
    Chain,
    Ring,
}

impl std::str::FromStr for PresetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chain" => Ok(PresetKind::Chain),
            "ring" => Ok(PresetKind::Ring),
            other => Err(Error::invalid(format!("unknown preset '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisorderDistribution {
    /// Uniform on `[-width, +width]`.
    #[default]
    Uniform,
    /// Normal with standard deviation `width`.
    Gaussian,
}

impl std::str::FromStr for DisorderDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(DisorderDistribution::Uniform),
            "gaussian" => Ok(DisorderDistribution::Gaussian),
            other => Err(Error::invalid(format!("unknown distribution '{other}'"))),
        }
    }
}

/// Static site-energy disorder of scale Δω (rad/ps).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisorderSpec {
    pub width: f64,
    #[serde(default)]
    pub distribution: DisorderDistribution,
    #[serde(default)]
    pub seed: u64,
}

impl DisorderSpec {
    pub fn none() -> Self {
        DisorderSpec {
            width: 0.0,
            distribution: DisorderDistribution::Uniform,
            seed: 0,
        }
    }

    pub fn uniform(width: f64, seed: u64) -> Self {
        DisorderSpec {
            width,
            distribution: DisorderDistribution::Uniform,
            seed,
        }
    }

    pub fn gaussian(width: f64, seed: u64) -> Self {
        DisorderSpec {
            width,
            distribution: DisorderDistribution::Gaussian,
            seed,
        }
    }

    /// Draws `n` site energies centred on zero. Equal specs give bit-identical
    /// vectors.
    pub fn draw(&self, n: usize) -> Result<Vec<f64>> {
        if !(self.width.is_finite() && self.width >= 0.0) {
            return Err(Error::invalid(format!(
                "disorder width must be finite and >= 0, got {}",
                self.width
            )));
        }
        if self.width == 0.0 {
            return Ok(vec![0.0; n]);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let energies = match self.distribution {
            DisorderDistribution::Uniform => {
                let dist = Uniform::new_inclusive(-self.width, self.width)
                    .map_err(|e| Error::invalid(e.to_string()))?;
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
            DisorderDistribution::Gaussian => {
                let dist =
                    Normal::new(0.0, self.width).map_err(|e| Error::invalid(e.to_string()))?;
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
        };
        Ok(energies)
    }
}

/// A set of chromophore sites with on-site energies and pairwise couplings.
///
/// Invariants (checked on construction): at least two sites, finite
/// energies, symmetric coupling matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteNetwork {
    positions: Vec<[f64; 3]>,
    site_energies: Vec<f64>,
    couplings: DMatrix<f64>,
    sink_site: Option<usize>,
    topology: Topology,
}

impl SiteNetwork {
    pub fn new(
        site_energies: Vec<f64>,
        couplings: DMatrix<f64>,
        positions: Option<Vec<[f64; 3]>>,
        sink_site: Option<usize>,
        topology: Topology,
    ) -> Result<Self> {
        let n = site_energies.len();
        if n < 2 {
            return Err(Error::invalid(format!("need at least 2 sites, got {n}")));
        }
        if let Some(i) = site_energies.iter().position(|e| !e.is_finite()) {
            return Err(Error::invalid(format!("site energy {i} is not finite")));
        }
        if couplings.nrows() != n || couplings.ncols() != n {
            return Err(Error::invalid(format!(
                "coupling matrix is {}x{}, expected {n}x{n}",
                couplings.nrows(),
                couplings.ncols()
            )));
        }
        for i in 0..n {
            if couplings[(i, i)] != 0.0 {
                return Err(Error::invalid(format!("coupling diagonal ({i},{i}) is non-zero")));
            }
            for j in (i + 1)..n {
                let (a, b) = (couplings[(i, j)], couplings[(j, i)]);
                if !a.is_finite() || a != b {
                    return Err(Error::invalid(format!(
                        "couplings ({i},{j}) = {a} and ({j},{i}) = {b} are not symmetric and finite"
                    )));
                }
            }
        }
        let positions = match positions {
            Some(p) if p.len() != n => {
                return Err(Error::invalid(format!(
                    "{} positions for {n} sites",
                    p.len()
                )))
            }
            Some(p) => p,
            None => (0..n).map(|i| [i as f64, 0.0, 0.0]).collect(),
        };
        if let Some(s) = sink_site {
            if s >= n {
                return Err(Error::invalid(format!("sink site {s} out of range for {n} sites")));
            }
        }
        Ok(SiteNetwork {
            positions,
            site_energies,
            couplings,
            sink_site,
            topology,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.site_energies.len()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn site_energies(&self) -> &[f64] {
        &self.site_energies
    }

    pub fn couplings(&self) -> &DMatrix<f64> {
        &self.couplings
    }

    pub fn sink_site(&self) -> Option<usize> {
        self.sink_site
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn with_sink_site(mut self, sink: Option<usize>) -> Result<Self> {
        if let Some(s) = sink {
            if s >= self.n_sites() {
                return Err(Error::invalid(format!(
                    "sink site {s} out of range for {} sites",
                    self.n_sites()
                )));
            }
        }
        self.sink_site = sink;
        Ok(self)
    }

    /// Euclidean distance between two sites in lattice spacings.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (self.positions[a], self.positions[b]);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
    }

    /// Site pairs `(i, j)`, `i < j`, separated by the smallest inter-site
    /// distance in the network.
    pub fn neighbor_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.n_sites();
        let mut min = f64::INFINITY;
        for i in 0..n {
            for j in (i + 1)..n {
                let r = self.distance(i, j);
                if r > 0.0 && r < min {
                    min = r;
                }
            }
        }
        let tol = 1e-9 * min.max(1.0);
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if (self.distance(i, j) - min).abs() <= tol {
                    pairs.push((i, j));
                }
            }
        }
        pairs
    }

    /// Mean absolute coupling over nearest-neighbour pairs, the J of the
    /// closed-form estimators.
    pub fn mean_neighbor_coupling(&self) -> f64 {
        let pairs = self.neighbor_pairs();
        if pairs.is_empty() {
            return 0.0;
        }
        pairs
            .iter()
            .map(|&(i, j)| self.couplings[(i, j)].abs())
            .sum::<f64>()
            / pairs.len() as f64
    }
}

/// Builds a nearest-neighbour chain or ring with coupling `j` and seeded
/// site-energy disorder.
pub fn build_preset(
    kind: PresetKind,
    n: usize,
    j: f64,
    disorder: &DisorderSpec,
) -> Result<SiteNetwork> {
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 sites, got {n}")));
    }
    if !(j.is_finite() && j > 0.0) {
        return Err(Error::invalid(format!("coupling J must be > 0, got {j}")));
    }
    let energies = disorder.draw(n)?;
    let mut couplings = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        couplings[(i, i + 1)] = j;
        couplings[(i + 1, i)] = j;
    }
    let (positions, topology) = match kind {
        PresetKind::Chain => ((0..n).map(|i| [i as f64, 0.0, 0.0]).collect(), Topology::Chain),
        PresetKind::Ring => {
            couplings[(0, n - 1)] = j;
            couplings[(n - 1, 0)] = j;
            // radius chosen so adjacent sites sit one lattice spacing apart
            let radius = 0.5 / (std::f64::consts::PI / n as f64).sin();
            let positions = (0..n)
                .map(|i| {
                    let theta = std::f64::consts::TAU * i as f64 / n as f64;
                    [radius * theta.cos(), radius * theta.sin(), 0.0]
                })
                .collect();
            (positions, Topology::Ring)
        }
    };
    SiteNetwork::new(energies, couplings, Some(positions), None, topology)
}

/// Tight-binding Hamiltonian: site energies on the diagonal, couplings off it.
pub fn hamiltonian(net: &SiteNetwork) -> DMatrix<f64> {
    let mut h = net.couplings.clone();
    for (i, e) in net.site_energies.iter().enumerate() {
        h[(i, i)] = *e;
    }
    h
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PositionEntry {
    Scalar(f64),
    Vector(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    unit: String,
    energies: Vec<f64>,
    couplings: Vec<Vec<f64>>,
    #[serde(default)]
    positions: Option<Vec<PositionEntry>>,
    #[serde(default)]
    sink_site: Option<usize>,
}

/// Serializable form of a network, the inverse of [`load_network`] (values
/// written in rad/ps).
#[derive(Debug, Serialize)]
struct NetworkFileOut<'a> {
    unit: &'static str,
    energies: &'a [f64],
    couplings: Vec<Vec<f64>>,
    positions: &'a [[f64; 3]],
    #[serde(skip_serializing_if = "Option::is_none")]
    sink_site: Option<usize>,
}

/// Renders a network in the file schema read by [`load_network`].
pub fn network_to_json(net: &SiteNetwork) -> String {
    let n = net.n_sites();
    let out = NetworkFileOut {
        unit: "rad/ps",
        energies: &net.site_energies,
        couplings: (0..n)
            .map(|i| (0..n).map(|j| net.couplings[(i, j)]).collect())
            .collect(),
        positions: &net.positions,
        sink_site: net.sink_site,
    };
    serde_json::to_string_pretty(&out).expect("network serializes")
}

/// Reads a network from a JSON file (see README for the schema) and converts
/// energies and couplings to rad/ps.
pub fn load_network(path: impl AsRef<Path>) -> Result<SiteNetwork> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_network(&text, &path.display().to_string())
}

/// Parses network JSON; `origin` names the source in error messages.
pub fn parse_network(text: &str, origin: &str) -> Result<SiteNetwork> {
    let schema = |location: String, message: String| Error::Schema {
        path: origin.to_string(),
        location,
        message,
    };
    let raw: NetworkFile = serde_json::from_str(text).map_err(|e| {
        schema(
            format!("line {} column {}", e.line(), e.column()),
            e.to_string(),
        )
    })?;
    let unit: EnergyUnit = raw
        .unit
        .parse()
        .map_err(|_| schema("unit".into(), format!("unknown unit tag '{}'", raw.unit)))?;
    let n = raw.energies.len();
    if n < 2 {
        return Err(schema("energies".into(), format!("need at least 2 sites, got {n}")));
    }
    if let Some(i) = raw.energies.iter().position(|e| !e.is_finite()) {
        return Err(schema(format!("energies[{i}]"), "not finite".into()));
    }
    if raw.couplings.len() != n {
        return Err(schema(
            "couplings".into(),
            format!("{} rows for {n} sites", raw.couplings.len()),
        ));
    }
    for (i, row) in raw.couplings.iter().enumerate() {
        if row.len() != n {
            return Err(schema(
                format!("couplings[{i}]"),
                format!("{} columns for {n} sites", row.len()),
            ));
        }
    }
    let mut couplings = DMatrix::zeros(n, n);
    for i in 0..n {
        if raw.couplings[i][i] != 0.0 {
            return Err(schema(
                format!("couplings[{i}][{i}]"),
                "diagonal must be zero (put site energies in `energies`)".into(),
            ));
        }
        for j in (i + 1)..n {
            let (a, b) = (raw.couplings[i][j], raw.couplings[j][i]);
            if !a.is_finite() || !b.is_finite() {
                return Err(schema(format!("couplings[{i}][{j}]"), "not finite".into()));
            }
            if (a - b).abs() > SYMMETRY_RTOL * a.abs().max(b.abs()).max(1.0) {
                return Err(schema(
                    format!("couplings[{i}][{j}]"),
                    format!("asymmetric: {a} vs couplings[{j}][{i}] = {b}"),
                ));
            }
            let v = unit.convert(0.5 * (a + b));
            couplings[(i, j)] = v;
            couplings[(j, i)] = v;
        }
    }
    let positions = match raw.positions {
        None => None,
        Some(entries) => {
            if entries.len() != n {
                return Err(schema(
                    "positions".into(),
                    format!("{} entries for {n} sites", entries.len()),
                ));
            }
            let mut out = Vec::with_capacity(n);
            for (i, entry) in entries.into_iter().enumerate() {
                let p = match entry {
                    PositionEntry::Scalar(x) => [x, 0.0, 0.0],
                    PositionEntry::Vector(v) if (1..=3).contains(&v.len()) => {
                        let mut p = [0.0; 3];
                        p[..v.len()].copy_from_slice(&v);
                        p
                    }
                    PositionEntry::Vector(v) => {
                        return Err(schema(
                            format!("positions[{i}]"),
                            format!("expected 1 to 3 coordinates, got {}", v.len()),
                        ))
                    }
                };
                out.push(p);
            }
            Some(out)
        }
    };
    if let Some(s) = raw.sink_site {
        if s >= n {
            return Err(schema("sink_site".into(), format!("{s} out of range for {n} sites")));
        }
    }
    let energies = raw.energies.iter().map(|&e| unit.convert(e)).collect();
    SiteNetwork::new(energies, couplings, positions, raw.sink_site, Topology::Custom)
        .map_err(|e| schema("network".into(), e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    fn sorted_eigenvalues(h: DMatrix<f64>) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev
    }

    #[test]
    fn two_site_chain_without_disorder() {
        let net = build_preset(PresetKind::Chain, 2, 1.0, &DisorderSpec::none()).unwrap();
        assert_eq!(net.couplings(), &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        assert_eq!(net.site_energies(), &[0.0, 0.0]);
        assert_eq!(hamiltonian(&net), DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    }

    #[test]
    fn ring_has_two_neighbours_per_site() {
        let net = build_preset(PresetKind::Ring, 4, 1.0, &DisorderSpec::none()).unwrap();
        for i in 0..4 {
            let row = net.couplings().row(i);
            assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 2);
            assert_eq!(row.iter().filter(|&&v| v != 0.0).count(), 2);
        }
        assert_eq!(net.neighbor_pairs().len(), 4);
        assert!((net.distance(0, 1) - 1.0).abs() < 1e-12);
        assert!((net.distance(3, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ring_spectrum_is_circulant() {
        let net = build_preset(PresetKind::Ring, 4, 1.0, &DisorderSpec::none()).unwrap();
        let ev = sorted_eigenvalues(hamiltonian(&net));
        for (got, want) in ev.iter().zip([-2.0, 0.0, 0.0, 2.0]) {
            assert!((got - want).abs() < 1e-12, "{ev:?}");
        }
    }

    #[test]
    fn detuned_dimer_gap() {
        let net = SiteNetwork::new(
            vec![0.0, 2.0],
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            None,
            None,
            Topology::Custom,
        )
        .unwrap();
        let ev = sorted_eigenvalues(hamiltonian(&net));
        assert!((ev[1] - ev[0] - 2.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ordered_chain_spectrum() {
        for n in [3usize, 8, 17] {
            let j = 1.3;
            let net = build_preset(PresetKind::Chain, n, j, &DisorderSpec::none()).unwrap();
            let ev = sorted_eigenvalues(hamiltonian(&net));
            let mut want: Vec<f64> = (1..=n)
                .map(|k| 2.0 * j * (k as f64 * std::f64::consts::PI / (n + 1) as f64).cos())
                .collect();
            want.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (g, w) in ev.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-10 * w.abs().max(1.0), "n={n}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn seeded_disorder_is_reproducible_and_bounded() {
        let spec = DisorderSpec::uniform(2.0, 7);
        let a = build_preset(PresetKind::Chain, 8, 1.0, &spec).unwrap();
        let b = build_preset(PresetKind::Chain, 8, 1.0, &spec).unwrap();
        let direct = spec.draw(8).unwrap();
        assert_eq!(a.site_energies(), b.site_energies());
        assert_eq!(a.site_energies(), direct.as_slice());
        assert!(a.site_energies().iter().all(|e| (-2.0..=2.0).contains(e)));
        assert!(a.site_energies().iter().any(|&e| e != 0.0));
    }

    #[test]
    fn different_seeds_differ() {
        for s in 0..10u64 {
            for dist in [DisorderDistribution::Uniform, DisorderDistribution::Gaussian] {
                let a = DisorderSpec { width: 1.0, distribution: dist, seed: 2 * s };
                let b = DisorderSpec { seed: 2 * s + 1, ..a };
                assert_ne!(a.draw(16).unwrap(), b.draw(16).unwrap());
            }
        }
    }

    #[test]
    fn preset_rejects_bad_arguments() {
        assert!(matches!(
            build_preset(PresetKind::Chain, 1, 1.0, &DisorderSpec::none()),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            build_preset(PresetKind::Ring, 4, 0.0, &DisorderSpec::none()),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            build_preset(PresetKind::Chain, 4, -1.0, &DisorderSpec::none()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn file_in_wavenumbers_is_converted() {
        let net = parse_network(
            r#"{"unit": "cm-1", "energies": [0, 0], "couplings": [[0, 1], [1, 0]]}"#,
            "inline",
        )
        .unwrap();
        assert!((net.couplings()[(0, 1)] - 0.188365).abs() < 1e-6);
        assert_eq!(net.topology(), Topology::Custom);
    }

    #[test]
    fn file_in_rad_ps_is_identity() {
        let net = parse_network(
            r#"{"unit": "rad/ps", "energies": [0.5, -0.5], "couplings": [[0, 1], [1, 0]],
                "positions": [[0, 0], [0, 1]], "sink_site": 1}"#,
            "inline",
        )
        .unwrap();
        assert_eq!(net.couplings()[(0, 1)], 1.0);
        assert_eq!(net.site_energies(), &[0.5, -0.5]);
        assert_eq!(net.sink_site(), Some(1));
        assert_eq!(net.positions()[1], [0.0, 1.0, 0.0]);
    }

    #[test]
    fn file_errors_name_the_field() {
        let asym = parse_network(
            r#"{"unit": "rad/ps", "energies": [0, 0], "couplings": [[0, 1], [2, 0]]}"#,
            "inline",
        );
        match asym {
            Err(Error::Schema { location, .. }) => assert_eq!(location, "couplings[0][1]"),
            other => panic!("expected schema error, got {other:?}"),
        }
        let unit = parse_network(
            r#"{"unit": "eV", "energies": [0, 0], "couplings": [[0, 1], [1, 0]]}"#,
            "inline",
        );
        assert!(matches!(unit, Err(Error::Schema { ref location, .. }) if location == "unit"));
        let broken = parse_network("{\"unit\": \"cm-1\",\n \"energies\": [0, 0,\n}", "inline");
        assert!(
            matches!(broken, Err(Error::Schema { ref location, .. }) if location.starts_with("line 3"))
        );
    }

    #[test]
    fn network_json_round_trips() {
        let net = build_preset(PresetKind::Ring, 5, 0.7, &DisorderSpec::uniform(0.3, 3))
            .unwrap()
            .with_sink_site(Some(2))
            .unwrap();
        let back = parse_network(&network_to_json(&net), "inline").unwrap();
        assert_eq!(back.site_energies(), net.site_energies());
        assert_eq!(back.couplings(), net.couplings());
        assert_eq!(back.positions(), net.positions());
        assert_eq!(back.sink_site(), Some(2));
    }
}
