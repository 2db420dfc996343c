//! Transmission graph deduced from the outage data, and midpoint-to-midpoint
//! network distances between lines.
//!
//! The grid is a multigraph: buses are vertices, lines are undirected edges
//! weighted by length in miles, and parallel circuits stay distinct. The
//! distance between two lines is the minimum mileage of a path joining their
//! midpoints, which reduces to half of each line's length plus a shortest
//! bus-to-bus path between the best pair of endpoints.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::LineTable;

#[derive(Debug, Clone)]
pub struct Edge {
    pub line_id: String,
    pub from: usize,
    pub to: usize,
    pub length_miles: f64,
}

/// Undirected multigraph of the grid.
#[derive(Debug, Clone)]
pub struct GridGraph {
    buses: Vec<String>,
    edges: Vec<Edge>,
    /// adjacency[bus] = (neighbor bus, edge length)
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl GridGraph {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_lines(&self) -> usize {
        self.edges.len()
    }

    pub fn buses(&self) -> &[String] {
        &self.buses
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn line_index(&self, line_id: &str) -> Option<usize> {
        self.edges.iter().position(|e| e.line_id == line_id)
    }

    /// Number of connected components (over buses).
    pub fn n_components(&self) -> usize {
        let mut seen = vec![false; self.buses.len()];
        let mut components = 0;
        for start in 0..self.buses.len() {
            if seen[start] {
                continue;
            }
            components += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(b) = stack.pop() {
                for &(nb, _) in &self.adjacency[b] {
                    if !seen[nb] {
                        seen[nb] = true;
                        stack.push(nb);
                    }
                }
            }
        }
        components
    }

    /// Shortest path lengths in miles from one bus to every bus (Dijkstra).
    /// Unreachable buses get +inf.
    pub fn bus_distances(&self, source: usize) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.buses.len()];
        let mut heap: BinaryHeap<Reverse<(ordered::OrdF64, usize)>> = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Reverse((ordered::OrdF64(0.0), source)));
        while let Some(Reverse((ordered::OrdF64(d), b))) = heap.pop() {
            if d > dist[b] {
                continue;
            }
            for &(nb, w) in &self.adjacency[b] {
                let nd = d + w;
                if nd < dist[nb] {
                    dist[nb] = nd;
                    heap.push(Reverse((ordered::OrdF64(nd), nb)));
                }
            }
        }
        dist
    }

    pub fn write_edge_list<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["line_id", "from_bus", "to_bus", "length_miles"])?;
        for e in &self.edges {
            wtr.write_record([
                e.line_id.as_str(),
                self.buses[e.from].as_str(),
                self.buses[e.to].as_str(),
                &e.length_miles.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

mod ordered {
    /// f64 wrapper ordered for the Dijkstra heap; distances are never NaN.
    #[derive(PartialEq, PartialOrd)]
    pub struct OrdF64(pub f64);
    impl Eq for OrdF64 {}
    #[allow(clippy::derive_ord_xor_partial_ord)]
    impl Ord for OrdF64 {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.partial_cmp(other).expect("NaN distance")
        }
    }
}

/// Build the grid multigraph from the line table. A line whose endpoints
/// coincide is a degenerate edge and rejected.
pub fn build_graph(table: &LineTable) -> Result<GridGraph> {
    if table.is_empty() {
        return Err(Error::Invalid("empty line table".into()));
    }
    let mut buses: Vec<String> = Vec::new();
    for l in table.lines() {
        buses.push(l.from_bus.clone());
        buses.push(l.to_bus.clone());
    }
    buses.sort();
    buses.dedup();
    let bus_index = |name: &str| buses.binary_search_by(|b| b.as_str().cmp(name)).unwrap();

    let mut edges = Vec::with_capacity(table.len());
    let mut adjacency = vec![Vec::new(); buses.len()];
    for l in table.lines() {
        if l.from_bus == l.to_bus {
            return Err(Error::Invalid(format!(
                "line {} is a degenerate edge ({} to itself)",
                l.line_id, l.from_bus
            )));
        }
        let from = bus_index(&l.from_bus);
        let to = bus_index(&l.to_bus);
        adjacency[from].push((to, l.length_miles));
        adjacency[to].push((from, l.length_miles));
        edges.push(Edge {
            line_id: l.line_id.clone(),
            from,
            to,
            length_miles: l.length_miles,
        });
    }
    Ok(GridGraph {
        buses,
        edges,
        adjacency,
    })
}

/// Symmetric matrix of line-midpoint distances in miles; +inf marks pairs in
/// different islands.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    line_ids: Vec<String>,
    miles: DMatrix<f64>,
}

impl DistanceMatrix {
    pub fn new(line_ids: Vec<String>, miles: DMatrix<f64>) -> Self {
        assert_eq!(line_ids.len(), miles.nrows());
        assert_eq!(miles.nrows(), miles.ncols());
        Self { line_ids, miles }
    }

    pub fn n_lines(&self) -> usize {
        self.line_ids.len()
    }

    pub fn line_ids(&self) -> &[String] {
        &self.line_ids
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.miles[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.miles
    }

    pub fn n_disconnected_pairs(&self) -> usize {
        let n = self.n_lines();
        let mut k = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                if self.miles[(i, j)].is_infinite() {
                    k += 1;
                }
            }
        }
        k
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["line_id".to_string()];
        header.extend(self.line_ids.iter().cloned());
        wtr.write_record(&header)?;
        for i in 0..self.n_lines() {
            let mut rec = vec![self.line_ids[i].clone()];
            rec.extend((0..self.n_lines()).map(|j| {
                let d = self.miles[(i, j)];
                if d.is_infinite() {
                    "inf".to_string()
                } else {
                    d.to_string()
                }
            }));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Midpoint distance between two lines: 0 for a line and itself, otherwise
/// half of each length plus the shortest bus path between the best endpoint
/// pair; +inf across islands.
pub fn midpoint_distance(graph: &GridGraph, i: usize, j: usize) -> Result<f64> {
    let n = graph.n_lines();
    if i >= n || j >= n {
        return Err(Error::Invalid(format!(
            "line index out of range: {i}, {j} (n = {n})"
        )));
    }
    if i == j {
        return Ok(0.0);
    }
    let ei = &graph.edges()[i];
    let ej = &graph.edges()[j];
    let mut best = f64::INFINITY;
    for &a in &[ei.from, ei.to] {
        let dist = graph.bus_distances(a);
        for &b in &[ej.from, ej.to] {
            let d = 0.5 * ei.length_miles + dist[b] + 0.5 * ej.length_miles;
            if d < best {
                best = d;
            }
        }
    }
    Ok(best)
}

/// All-pairs midpoint distances, computed from one single-source shortest-path
/// run per distinct line endpoint.
pub fn distance_matrix(graph: &GridGraph) -> DistanceMatrix {
    let n = graph.n_lines();
    let mut endpoint_buses: Vec<usize> = graph
        .edges()
        .iter()
        .flat_map(|e| [e.from, e.to])
        .collect();
    endpoint_buses.sort_unstable();
    endpoint_buses.dedup();

    // busdist[k] = distances from endpoint_buses[k] to every bus.
    let busdist: Vec<Vec<f64>> = endpoint_buses
        .iter()
        .map(|&b| graph.bus_distances(b))
        .collect();
    let slot = |bus: usize| endpoint_buses.binary_search(&bus).unwrap();

    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let ei = &graph.edges()[i];
        let from_i = &busdist[slot(ei.from)];
        let to_i = &busdist[slot(ei.to)];
        for j in (i + 1)..n {
            let ej = &graph.edges()[j];
            let bus_part = from_i[ej.from]
                .min(from_i[ej.to])
                .min(to_i[ej.from])
                .min(to_i[ej.to]);
            let d = 0.5 * ei.length_miles + bus_part + 0.5 * ej.length_miles;
            m[(i, j)] = d;
            m[(j, i)] = d;
        }
    }
    let ids = graph.edges().iter().map(|e| e.line_id.clone()).collect();
    DistanceMatrix::new(ids, m)
}

/// Summary emitted alongside exported distances; flags islands explicitly
/// because disconnected pairs become zero kernel entries downstream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkReport {
    pub schema_version: u32,
    pub n_buses: usize,
    pub n_lines: usize,
    pub n_components: usize,
    pub n_disconnected_line_pairs: usize,
}

pub fn save_distances(dm: &DistanceMatrix, path: &Path) -> Result<()> {
    crate::matfile::save_labeled_matrix(path, dm.line_ids(), dm.matrix())
}

pub fn load_distances(path: &Path) -> Result<DistanceMatrix> {
    let (labels, m) = crate::matfile::load_labeled_matrix(path)?;
    Ok(DistanceMatrix::new(labels, m))
}
