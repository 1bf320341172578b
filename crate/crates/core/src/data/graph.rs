//! Region vocabulary and adjacency, with forced self-loops.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved region for examples without a usable location. It is a real graph
/// node adjacent only to itself, so every example has a valid region row.
pub const UNKNOWN_REGION: &str = "UNKNOWN";

/// Region vocabulary plus a symmetric binary adjacency matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoGraph {
    regions: Vec<String>,
    /// Row-major N x N, entries in {0, 1}.
    adjacency: Vec<Vec<u8>>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

impl GeoGraph {
    pub fn new(regions: Vec<String>, edges: &[(String, String)]) -> Result<Self> {
        if regions.is_empty() {
            return Err(Error::Config("region graph must have at least one region".into()));
        }
        let index: BTreeMap<String, usize> =
            regions.iter().enumerate().map(|(i, r)| (r.clone(), i)).collect();
        if index.len() != regions.len() {
            return Err(Error::Config("duplicate region name in graph".into()));
        }
        let n = regions.len();
        let mut adjacency = vec![vec![0u8; n]; n];
        for (i, row) in adjacency.iter_mut().enumerate() {
            row[i] = 1; // self-loops are always present
        }
        for (a, b) in edges {
            let ia = *index.get(a).ok_or_else(|| Error::UnknownRegion(a.clone()))?;
            let ib = *index.get(b).ok_or_else(|| Error::UnknownRegion(b.clone()))?;
            adjacency[ia][ib] = 1;
            adjacency[ib][ia] = 1;
        }
        Ok(GeoGraph { regions, adjacency, index })
    }

    /// Parses the graph file format: region names on the first line, edges after.
    pub fn load(path: &Path) -> Result<Self> {
        let file = path.display().to_string();
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = content.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::Parse {
            file: file.clone(),
            line: 1,
            msg: "empty graph file".to_string(),
        })?;
        let regions: Vec<String> =
            header.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        let mut edges = Vec::new();
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (a, b) = line.split_once(',').ok_or_else(|| Error::Parse {
                file: file.clone(),
                line: lineno + 1,
                msg: "expected regionA,regionB".to_string(),
            })?;
            edges.push((a.trim().to_string(), b.trim().to_string()));
        }
        GeoGraph::new(regions, &edges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = self.regions.join(",");
        out.push('\n');
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                if self.adjacency[i][j] == 1 {
                    out.push_str(&format!("{},{}\n", self.regions[i], self.regions[j]));
                }
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Rebuilds the name index after deserialization.
    pub fn reindex(&mut self) {
        self.index =
            self.regions.iter().enumerate().map(|(i, r)| (r.clone(), i)).collect();
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn regions(&self) -> &[String] {
        &self.regions
    }

    pub fn index_of(&self, region: &str) -> Option<usize> {
        if self.index.is_empty() && !self.regions.is_empty() {
            return self.regions.iter().position(|r| r == region);
        }
        self.index.get(region).copied()
    }

    pub fn require_index(&self, region: &str) -> Result<usize> {
        self.index_of(region).ok_or_else(|| Error::UnknownRegion(region.to_string()))
    }

    /// Index for an optional region, mapping `None` to [`UNKNOWN_REGION`].
    pub fn index_or_unknown(&self, region: Option<&str>) -> Result<usize> {
        match region {
            Some(r) => self.require_index(r),
            None => self.require_index(UNKNOWN_REGION),
        }
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i][j] == 1
    }

    /// Adds the reserved unknown region (self-loop only) if absent.
    pub fn ensure_unknown(&mut self) {
        if self.index_of(UNKNOWN_REGION).is_some() {
            return;
        }
        let n = self.len();
        self.regions.push(UNKNOWN_REGION.to_string());
        for row in &mut self.adjacency {
            row.push(0);
        }
        let mut new_row = vec![0u8; n + 1];
        new_row[n] = 1;
        self.adjacency.push(new_row);
        self.index.insert(UNKNOWN_REGION.to_string(), n);
    }

    /// Dense `f64` adjacency for the graph-convolution layers.
    pub fn dense_adjacency(&self) -> Array2<f64> {
        let n = self.len();
        Array2::from_shape_fn((n, n), |(i, j)| f64::from(self.adjacency[i][j]))
    }

    /// Symmetrically degree-normalized adjacency `D^-1/2 A D^-1/2`.
    pub fn normalized_adjacency(&self) -> Array2<f64> {
        let a = self.dense_adjacency();
        let deg: Vec<f64> = a.rows().into_iter().map(|r| r.sum()).collect();
        let n = self.len();
        Array2::from_shape_fn((n, n), |(i, j)| a[[i, j]] / (deg[i] * deg[j]).sqrt())
    }

    pub fn check_invariants(&self) -> Result<()> {
        let n = self.len();
        for i in 0..n {
            if self.adjacency[i][i] != 1 {
                return Err(Error::Config(format!("missing self-loop at region {i}")));
            }
            for j in 0..n {
                if self.adjacency[i][j] != self.adjacency[j][i] {
                    return Err(Error::Config(format!("asymmetric adjacency at ({i},{j})")));
                }
            }
        }
        Ok(())
    }
}

/// US state borders (50 states + DC), the default region vocabulary for
/// USA-only corpora. The unknown region is appended as an isolated node.
pub fn us_states_graph() -> GeoGraph {
    let borders: &[(&str, &str)] = &[
        ("AL", "FL"), ("AL", "GA"), ("AL", "MS"), ("AL", "TN"),
        ("AR", "LA"), ("AR", "MO"), ("AR", "MS"), ("AR", "OK"), ("AR", "TN"), ("AR", "TX"),
        ("AZ", "CA"), ("AZ", "NM"), ("AZ", "NV"), ("AZ", "UT"),
        ("CA", "NV"), ("CA", "OR"),
        ("CO", "KS"), ("CO", "NE"), ("CO", "NM"), ("CO", "OK"), ("CO", "UT"), ("CO", "WY"),
        ("CT", "MA"), ("CT", "NY"), ("CT", "RI"),
        ("DC", "MD"), ("DC", "VA"),
        ("DE", "MD"), ("DE", "NJ"), ("DE", "PA"),
        ("FL", "GA"),
        ("GA", "NC"), ("GA", "SC"), ("GA", "TN"),
        ("IA", "IL"), ("IA", "MN"), ("IA", "MO"), ("IA", "NE"), ("IA", "SD"), ("IA", "WI"),
        ("ID", "MT"), ("ID", "NV"), ("ID", "OR"), ("ID", "UT"), ("ID", "WA"), ("ID", "WY"),
        ("IL", "IN"), ("IL", "KY"), ("IL", "MO"), ("IL", "WI"),
        ("IN", "KY"), ("IN", "MI"), ("IN", "OH"),
        ("KS", "MO"), ("KS", "NE"), ("KS", "OK"),
        ("KY", "MO"), ("KY", "OH"), ("KY", "TN"), ("KY", "VA"), ("KY", "WV"),
        ("LA", "MS"), ("LA", "TX"),
        ("MA", "NH"), ("MA", "NY"), ("MA", "RI"), ("MA", "VT"),
        ("MD", "PA"), ("MD", "VA"), ("MD", "WV"),
        ("ME", "NH"),
        ("MI", "OH"), ("MI", "WI"),
        ("MN", "ND"), ("MN", "SD"), ("MN", "WI"),
        ("MO", "NE"), ("MO", "OK"), ("MO", "TN"),
        ("MS", "TN"),
        ("MT", "ND"), ("MT", "SD"), ("MT", "WY"),
        ("NC", "SC"), ("NC", "TN"), ("NC", "VA"),
        ("ND", "SD"),
        ("NE", "SD"), ("NE", "WY"),
        ("NH", "VT"),
        ("NJ", "NY"), ("NJ", "PA"),
        ("NM", "OK"), ("NM", "TX"), ("NM", "UT"),
        ("NV", "OR"), ("NV", "UT"),
        ("NY", "PA"), ("NY", "VT"),
        ("OH", "PA"), ("OH", "WV"),
        ("OK", "TX"),
        ("OR", "WA"),
        ("PA", "WV"),
        ("SD", "WY"),
        ("TN", "VA"),
        ("UT", "WY"),
        ("VA", "WV"),
    ];
    let mut names: Vec<String> = [
        "AK", "AL", "AR", "AZ", "CA", "CO", "CT", "DC", "DE", "FL", "GA", "HI", "IA", "ID",
        "IL", "IN", "KS", "KY", "LA", "MA", "MD", "ME", "MI", "MN", "MO", "MS", "MT", "NC",
        "ND", "NE", "NH", "NJ", "NM", "NV", "NY", "OH", "OK", "OR", "PA", "RI", "SC", "SD",
        "TN", "TX", "UT", "VA", "VT", "WA", "WI", "WV", "WY",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    names.push(UNKNOWN_REGION.to_string());
    let edges: Vec<(String, String)> =
        borders.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
    GeoGraph::new(names, &edges).expect("static US graph is well-formed")
}
