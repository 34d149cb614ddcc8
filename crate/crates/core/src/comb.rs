//! Frequency-comb index algebra for a bichromatic pump.
//!
//! Comb modes sit at `w_n = w_0 + n * delta`, with the pumps at
//! `2 w_0 -+ 2 delta`. Each mode `n` has one idler per pump, `-n - 2` and
//! `-n + 2`, so parity is conserved and the odd modes split by their residue
//! mod 4 into two families that never correlate with each other.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Window of comb indices `-half_width ..= half_width` centred on `omega_0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombSpec<T: Real> {
    /// Comb centre (rad/s).
    pub omega_0: T,
    /// Mode spacing (rad/s), a quarter of the pump separation.
    pub delta: T,
    pub half_width: usize,
}

impl<T: Real> CombSpec<T> {
    pub fn new(omega_0: T, delta: T, half_width: usize) -> Result<Self> {
        if !(delta > T::zero()) {
            return Err(Error::InvalidArgument(format!("comb spacing must be positive, got {delta}")));
        }
        if !(omega_0 > T::zero()) {
            return Err(Error::InvalidArgument(format!("comb centre must be positive, got {omega_0}")));
        }
        Ok(Self {
            omega_0,
            delta,
            half_width,
        })
    }

    /// Comb defined by two pump tones: `w_0 = (w_p1 + w_p2) / 4`, `delta = (w_p2 - w_p1) / 4`.
    pub fn from_pumps(omega_p1: T, omega_p2: T, half_width: usize) -> Result<Self> {
        let quarter = T::lit(0.25);
        Self::new((omega_p1 + omega_p2) * quarter, (omega_p2 - omega_p1) * quarter, half_width)
    }

    /// `(w_p1, w_p2) = (2 w_0 - 2 delta, 2 w_0 + 2 delta)`.
    pub fn pump_frequencies(&self) -> (T, T) {
        let two = T::lit(2.0);
        (two * self.omega_0 - two * self.delta, two * self.omega_0 + two * self.delta)
    }

    pub fn frequency(&self, n: i64) -> T {
        self.omega_0 + T::lit(n as f64) * self.delta
    }

    pub fn indices(&self) -> impl Iterator<Item = i64> + Clone {
        let w = self.half_width as i64;
        -w..=w
    }

    pub fn n_modes(&self) -> usize {
        2 * self.half_width + 1
    }

    pub fn contains(&self, n: i64) -> bool {
        n.unsigned_abs() as usize <= self.half_width
    }

    /// Position of comb index `n` within the window (0 for `-half_width`).
    pub fn position(&self, n: i64) -> Option<usize> {
        self.contains(n).then(|| (n + self.half_width as i64) as usize)
    }
}

/// `(index, w_n)` for every mode of the window.
pub fn comb_frequencies<T: Real>(spec: &CombSpec<T>) -> Vec<(i64, T)> {
    spec.indices().map(|n| (n, spec.frequency(n))).collect()
}

/// Idlers of mode `n`: `(-n - 2, -n + 2)` via pump 1 and pump 2.
pub fn idler_indices(n: i64) -> (i64, i64) {
    (-n - 2, -n + 2)
}

/// The three mutually uncorrelated mode families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KSubset {
    /// Even indices.
    K0,
    /// Odd indices congruent to 1 mod 4 (the family containing mode +1).
    Kplus1,
    /// Odd indices congruent to 3 mod 4 (the family containing mode -1).
    Kminus1,
}

impl KSubset {
    pub const ALL: [KSubset; 3] = [KSubset::K0, KSubset::Kplus1, KSubset::Kminus1];

    pub fn label(self) -> &'static str {
        match self {
            KSubset::K0 => "K0",
            KSubset::Kplus1 => "K+1",
            KSubset::Kminus1 => "K-1",
        }
    }

    pub fn contains(self, n: i64) -> bool {
        classify(n) == self
    }
}

impl std::str::FromStr for KSubset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "k0" => Ok(KSubset::K0),
            "k+1" | "k1" | "kplus1" => Ok(KSubset::Kplus1),
            "k-1" | "kminus1" => Ok(KSubset::Kminus1),
            other => Err(Error::InvalidArgument(format!("unknown K subset '{other}'"))),
        }
    }
}

pub fn classify(n: i64) -> KSubset {
    match n.rem_euclid(4) {
        0 | 2 => KSubset::K0,
        1 => KSubset::Kplus1,
        _ => KSubset::Kminus1,
    }
}

/// Correlation edge between comb indices `a <= b`, labelled by pump (1 or 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub a: i64,
    pub b: i64,
    pub pump: u8,
}

impl Edge {
    fn new(x: i64, y: i64, pump: u8) -> Self {
        Self {
            a: x.min(y),
            b: x.max(y),
            pump,
        }
    }

    pub fn is_self_loop(&self) -> bool {
        self.a == self.b
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrelationGraph {
    pub vertices: Vec<i64>,
    /// Deduplicated in-window edges, sorted.
    pub edges: Vec<Edge>,
    /// Couplings whose idler falls outside the window, one per (mode, pump).
    pub dropped: Vec<Edge>,
}

impl CorrelationGraph {
    pub fn truncated(&self) -> usize {
        self.dropped.len()
    }

    /// Connected components (self-loops ignored), each sorted ascending.
    pub fn components(&self) -> Vec<Vec<i64>> {
        self.components_of(|_| true)
    }

    /// Components of the subgraph induced by vertices satisfying `keep`.
    pub fn components_of(&self, keep: impl Fn(i64) -> bool) -> Vec<Vec<i64>> {
        let mut adjacency: BTreeMap<i64, Vec<i64>> = BTreeMap::new();
        for &v in self.vertices.iter().filter(|&&v| keep(v)) {
            adjacency.entry(v).or_default();
        }
        for e in &self.edges {
            if e.is_self_loop() || !keep(e.a) || !keep(e.b) {
                continue;
            }
            adjacency.entry(e.a).or_default().push(e.b);
            adjacency.entry(e.b).or_default().push(e.a);
        }
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for &start in adjacency.keys() {
            if !seen.insert(start) {
                continue;
            }
            let mut component = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                for &w in &adjacency[&v] {
                    if seen.insert(w) {
                        component.push(w);
                        queue.push_back(w);
                    }
                }
            }
            component.sort_unstable();
            out.push(component);
        }
        out
    }

    /// True when `a` and `b` are joined by an edge (either pump).
    pub fn has_edge(&self, a: i64, b: i64) -> bool {
        let (a, b) = (a.min(b), a.max(b));
        self.edges.iter().any(|e| e.a == a && e.b == b)
    }

    /// Graphviz rendering; pump 1 edges red, pump 2 edges blue.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("graph comb {\n");
        for v in &self.vertices {
            let _ = writeln!(out, "  \"{v}\" [group=\"{}\"];", classify(*v).label());
        }
        for e in &self.edges {
            let color = if e.pump == 1 { "red" } else { "blue" };
            let _ = writeln!(out, "  \"{}\" -- \"{}\" [color={color}, label=\"p{}\"];", e.a, e.b, e.pump);
        }
        out.push_str("}\n");
        out
    }
}

/// Signal-idler graph of the window for the two-tone pump; out-of-window
/// couplings are dropped and recorded.
pub fn correlation_graph<T: Real>(spec: &CombSpec<T>) -> CorrelationGraph {
    correlation_graph_with_offsets(spec, &[-2, 2])
}

/// Graph for pumps whose idler of mode `n` is `offsets[p] - n`; pump
/// numbers in the edges are 1-based positions in `offsets`.
pub fn correlation_graph_with_offsets<T: Real>(spec: &CombSpec<T>, offsets: &[i64]) -> CorrelationGraph {
    let mut edges = BTreeSet::new();
    let mut dropped = Vec::new();
    for n in spec.indices() {
        for (p, k) in offsets.iter().enumerate() {
            let (partner, pump) = (k - n, (p + 1) as u8);
            if spec.contains(partner) {
                edges.insert(Edge::new(n, partner, pump));
            } else {
                dropped.push(Edge::new(n, partner, pump));
            }
        }
    }
    CorrelationGraph {
        vertices: spec.indices().collect(),
        edges: edges.into_iter().collect(),
        dropped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn paper_spec(w: usize) -> CombSpec<f64> {
        CombSpec::new(2.0 * PI * 4.3e9, 2.0 * PI * 2.3e6, w).unwrap()
    }

    #[test]
    fn frequencies_follow_the_comb() {
        let spec = paper_spec(4);
        let freqs = comb_frequencies(&spec);
        assert_eq!(freqs.len(), 9);
        assert_eq!(freqs[4], (0, 2.0 * PI * 4.3e9));
        let (n, w4) = freqs[8];
        assert_eq!(n, 4);
        assert!((w4 - (2.0 * PI * 4.3e9 + 2.0 * PI * 9.2e6)).abs() < 1e-3);
        assert!(CombSpec::new(1.0, 0.0, 2).is_err());
    }

    #[test]
    fn idler_examples() {
        assert_eq!(idler_indices(0), (-2, 2));
        assert_eq!(idler_indices(1), (-3, 1));
        assert_eq!(idler_indices(-2), (0, 4));
    }

    #[test]
    fn subset_examples() {
        assert_eq!(classify(6), KSubset::K0);
        assert_eq!(classify(-3), KSubset::Kplus1);
        assert_eq!(classify(1), KSubset::Kplus1);
        assert_eq!(classify(-1), KSubset::Kminus1);
        for n in [-11, -7, -3, 1, 5, 9] {
            assert_eq!(classify(n), KSubset::Kplus1);
        }
        for n in [-9, -5, -1, 3, 7, 11] {
            assert_eq!(classify(n), KSubset::Kminus1);
        }
        assert_eq!("K-1".parse::<KSubset>().unwrap(), KSubset::Kminus1);
    }

    #[test]
    fn small_window_graph() {
        let g = correlation_graph(&paper_spec(2));
        for (a, b) in [(-2, 0), (0, 2), (-1, -1), (1, 1)] {
            assert!(g.has_edge(a, b), "missing edge ({a},{b})");
        }
        // n=-1 via pump 2 -> 3, n=1 via pump 1 -> -3, n=+-2 lose one each
        assert_eq!(g.truncated(), 4);
    }

    #[test]
    fn even_subgraph_connected() {
        for w in 4..20 {
            let g = correlation_graph(&paper_spec(w));
            let comps = g.components_of(|v| v % 2 == 0);
            assert_eq!(comps.len(), 1, "W = {w}");
        }
    }

    #[test]
    fn dot_output_lists_edges() {
        let g = correlation_graph(&paper_spec(2));
        let dot = g.to_dot();
        assert!(dot.starts_with("graph comb {"));
        assert!(dot.contains("\"-2\" -- \"0\" [color=red"));
    }

    proptest! {
        #[test]
        fn parity_and_subset_closure(n in -1000i64..=1000) {
            let (a, b) = idler_indices(n);
            prop_assert_eq!(a.rem_euclid(2), n.rem_euclid(2));
            prop_assert_eq!(b.rem_euclid(2), n.rem_euclid(2));
            prop_assert_eq!(classify(a), classify(n));
            prop_assert_eq!(classify(b), classify(n));
        }

        #[test]
        fn pumps_recovered_from_pairs(n in -500i64..=500) {
            let spec = CombSpec::new(1000.0, 1.0, 600).unwrap();
            let (p1, p2) = spec.pump_frequencies();
            let (a, b) = idler_indices(n);
            prop_assert_eq!(spec.frequency(n) + spec.frequency(a), p1);
            prop_assert_eq!(spec.frequency(n) + spec.frequency(b), p2);
        }

        #[test]
        fn edges_never_cross_parity(w in 2usize..40) {
            let g = correlation_graph(&CombSpec::new(10.0, 0.5, w).unwrap());
            for e in g.edges {
                prop_assert_eq!(e.a.rem_euclid(2), e.b.rem_euclid(2));
            }
        }
    }
}
