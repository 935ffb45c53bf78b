//! Causal DAGs with latent-expanded bidirected edges and d-separation queries.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DagError {
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("node {0:?} already exists")]
    DuplicateNode(String),
    #[error("edge {0} -> {1} would create a directed cycle")]
    Cycle(String, String),
    #[error("selection node {0:?} cannot have outgoing edges")]
    SelectionHasChildren(String),
    #[error("latent node {0:?} cannot be used in a query")]
    LatentInQuery(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("unknown built-in DAG variant {0:?} (expected with_gender or with_selection)")]
    UnknownVariant(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub latent: bool,
}

/// A directed acyclic graph over named variables.
///
/// Bidirected edges `a <-> b` are stored as a fresh latent node `U_a_b`
/// with edges into both endpoints, so a single d-separation routine serves
/// graphs with and without confounding arcs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CausalDag {
    nodes: Vec<Node>,
    directed: Vec<(usize, usize)>,
    bidirected: Vec<(usize, usize)>,
    selection: BTreeSet<usize>,
}

/// Which of the two DAGs from the data-generating story to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinDag {
    /// W, G, Z, X, Y with gender still explicit.
    WithGender,
    /// W, Z, X, Y, S with gender hidden behind a `Z <-> Y` arc.
    WithSelection,
}

impl FromStr for BuiltinDag {
    type Err = DagError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "with_gender" => Ok(BuiltinDag::WithGender),
            "with_selection" => Ok(BuiltinDag::WithSelection),
            other => Err(DagError::UnknownVariant(other.to_string())),
        }
    }
}

impl fmt::Display for BuiltinDag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BuiltinDag::WithGender => "with_gender",
            BuiltinDag::WithSelection => "with_selection",
        })
    }
}

/// Serializable description of a DAG, used for user-supplied graph files.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagSpec {
    pub nodes: Vec<String>,
    #[serde(default)]
    pub directed: Vec<(String, String)>,
    #[serde(default)]
    pub bidirected: Vec<(String, String)>,
    #[serde(default)]
    pub selection: Vec<String>,
}

pub fn builtin_dag(variant: BuiltinDag) -> CausalDag {
    let mut dag = CausalDag::new();
    let edges: &[(&str, &str)] = match variant {
        BuiltinDag::WithGender => {
            for n in ["W", "G", "Z", "X", "Y"] {
                dag.add_node(n).expect("fresh node");
            }
            &[("W", "Z"), ("G", "Z"), ("Z", "X"), ("W", "X"), ("X", "Y"), ("G", "Y")]
        }
        BuiltinDag::WithSelection => {
            for n in ["W", "Z", "X", "Y", "S"] {
                dag.add_node(n).expect("fresh node");
            }
            &[("W", "Z"), ("Z", "X"), ("W", "X"), ("X", "Y"), ("Z", "S")]
        }
    };
    for (a, b) in edges {
        dag.add_edge(a, b).expect("built-in DAG is acyclic");
    }
    if variant == BuiltinDag::WithSelection {
        dag.add_bidirected("Z", "Y").expect("observed endpoints");
        dag.mark_selection("S").expect("S is a sink");
    }
    dag
}

impl CausalDag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_spec(spec: &DagSpec) -> Result<Self, DagError> {
        let mut dag = CausalDag::new();
        for n in &spec.nodes {
            dag.add_node(n)?;
        }
        for (a, b) in &spec.directed {
            dag.add_edge(a, b)?;
        }
        for (a, b) in &spec.bidirected {
            dag.add_bidirected(a, b)?;
        }
        for s in &spec.selection {
            dag.mark_selection(s)?;
        }
        Ok(dag)
    }

    pub fn to_spec(&self) -> DagSpec {
        let name = |i: usize| self.nodes[i].name.clone();
        let latent_children: BTreeSet<usize> = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.latent)
            .map(|(i, _)| i)
            .collect();
        DagSpec {
            nodes: self
                .nodes
                .iter()
                .filter(|n| !n.latent)
                .map(|n| n.name.clone())
                .collect(),
            directed: self
                .directed
                .iter()
                .filter(|(a, _)| !latent_children.contains(a))
                .map(|&(a, b)| (name(a), name(b)))
                .collect(),
            bidirected: self.bidirected.iter().map(|&(a, b)| (name(a), name(b))).collect(),
            selection: self.selection.iter().map(|&i| name(i)).collect(),
        }
    }

    pub fn add_node(&mut self, name: &str) -> Result<(), DagError> {
        self.push_node(name, false).map(|_| ())
    }

    fn push_node(&mut self, name: &str, latent: bool) -> Result<usize, DagError> {
        if self.index_of(name).is_some() {
            return Err(DagError::DuplicateNode(name.to_string()));
        }
        self.nodes.push(Node { name: name.to_string(), latent });
        Ok(self.nodes.len() - 1)
    }

    pub fn add_edge(&mut self, from: &str, to: &str) -> Result<(), DagError> {
        let a = self.require(from)?;
        let b = self.require(to)?;
        self.add_edge_idx(a, b)
    }

    fn add_edge_idx(&mut self, a: usize, b: usize) -> Result<(), DagError> {
        if self.selection.contains(&a) {
            return Err(DagError::SelectionHasChildren(self.nodes[a].name.clone()));
        }
        if a == b || self.is_ancestor(b, a) {
            return Err(DagError::Cycle(
                self.nodes[a].name.clone(),
                self.nodes[b].name.clone(),
            ));
        }
        if !self.directed.contains(&(a, b)) {
            self.directed.push((a, b));
        }
        Ok(())
    }

    /// Adds `a <-> b` by introducing a latent common cause `U_a_b`.
    pub fn add_bidirected(&mut self, a: &str, b: &str) -> Result<(), DagError> {
        let ia = self.require(a)?;
        let ib = self.require(b)?;
        if ia == ib {
            return Err(DagError::InvalidQuery(format!("self-loop {a} <-> {b}")));
        }
        let mut latent_name = format!("U_{a}_{b}");
        while self.index_of(&latent_name).is_some() {
            latent_name.push('\'');
        }
        let u = self.push_node(&latent_name, true)?;
        self.add_edge_idx(u, ia)?;
        self.add_edge_idx(u, ib)?;
        self.bidirected.push((ia, ib));
        Ok(())
    }

    pub fn mark_selection(&mut self, name: &str) -> Result<(), DagError> {
        let i = self.require(name)?;
        if self.directed.iter().any(|&(a, _)| a == i) {
            return Err(DagError::SelectionHasChildren(name.to_string()));
        }
        self.selection.insert(i);
        Ok(())
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn observed_nodes(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().filter(|n| !n.latent).map(|n| n.name.as_str())
    }

    pub fn latent_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.latent).count()
    }

    /// Directed edges as name pairs, including the edges out of latent nodes.
    pub fn directed_edges(&self) -> Vec<(&str, &str)> {
        self.directed
            .iter()
            .map(|&(a, b)| (self.nodes[a].name.as_str(), self.nodes[b].name.as_str()))
            .collect()
    }

    pub fn bidirected_edges(&self) -> Vec<(&str, &str)> {
        self.bidirected
            .iter()
            .map(|&(a, b)| (self.nodes[a].name.as_str(), self.nodes[b].name.as_str()))
            .collect()
    }

    pub fn selection_nodes(&self) -> Vec<&str> {
        self.selection.iter().map(|&i| self.nodes[i].name.as_str()).collect()
    }

    pub fn is_selection(&self, name: &str) -> bool {
        self.index_of(name).is_some_and(|i| self.selection.contains(&i))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    fn require(&self, name: &str) -> Result<usize, DagError> {
        self.index_of(name)
            .ok_or_else(|| DagError::UnknownNode(name.to_string()))
    }

    fn children(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.directed.iter().filter(move |e| e.0 == v).map(|e| e.1)
    }

    fn parents(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.directed.iter().filter(move |e| e.1 == v).map(|e| e.0)
    }

    fn is_ancestor(&self, anc: usize, of: usize) -> bool {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![anc];
        while let Some(v) = stack.pop() {
            if v == of {
                return true;
            }
            if std::mem::replace(&mut seen[v], true) {
                continue;
            }
            stack.extend(self.children(v));
        }
        false
    }

    /// Kahn's algorithm; `None` if the graph has a directed cycle.
    pub fn topological_order(&self) -> Option<Vec<&str>> {
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        for &(_, b) in &self.directed {
            indegree[b] += 1;
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = queue.pop_front() {
            order.push(self.nodes[v].name.as_str());
            for c in self.children(v) {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_some()
    }

    fn query_node(&self, name: &str) -> Result<usize, DagError> {
        let i = self.require(name)?;
        if self.nodes[i].latent {
            return Err(DagError::LatentInQuery(name.to_string()));
        }
        Ok(i)
    }

    /// Tests whether `a` and `b` are d-separated given `given`.
    ///
    /// Uses the reachable-trail search: a trail may pass a collider only when
    /// the collider is an ancestor of (or in) the conditioning set, and may
    /// pass any other node only when that node is not conditioned on.
    pub fn d_separated<S: AsRef<str>>(
        &self,
        a: &str,
        b: &str,
        given: &[S],
    ) -> Result<bool, DagError> {
        let ia = self.query_node(a)?;
        let ib = self.query_node(b)?;
        if ia == ib {
            return Err(DagError::InvalidQuery(format!("{a} queried against itself")));
        }
        let n = self.nodes.len();
        let mut in_given = vec![false; n];
        for g in given {
            let i = self.query_node(g.as_ref())?;
            if i == ia || i == ib {
                return Err(DagError::InvalidQuery(format!(
                    "{} is both an endpoint and conditioned on",
                    g.as_ref()
                )));
            }
            in_given[i] = true;
        }

        // Nodes that are in the conditioning set or have a descendant there.
        let mut anc_of_given = vec![false; n];
        let mut stack: Vec<usize> = (0..n).filter(|&v| in_given[v]).collect();
        while let Some(v) = stack.pop() {
            if std::mem::replace(&mut anc_of_given[v], true) {
                continue;
            }
            stack.extend(self.parents(v));
        }

        // (node, arrived_from_child)
        let mut visited = vec![[false; 2]; n];
        let mut queue = VecDeque::from([(ia, true)]);
        while let Some((v, up)) = queue.pop_front() {
            if std::mem::replace(&mut visited[v][up as usize], true) {
                continue;
            }
            if v == ib {
                return Ok(false);
            }
            if up {
                if !in_given[v] {
                    queue.extend(self.parents(v).map(|p| (p, true)));
                    queue.extend(self.children(v).map(|c| (c, false)));
                }
            } else {
                if !in_given[v] {
                    queue.extend(self.children(v).map(|c| (c, false)));
                }
                if anc_of_given[v] {
                    queue.extend(self.parents(v).map(|p| (p, true)));
                }
            }
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn with_gender_shape() {
        let dag = builtin_dag(BuiltinDag::WithGender);
        assert_eq!(dag.observed_nodes().count(), 5);
        assert_eq!(dag.directed_edges().len(), 6);
        assert!(dag.bidirected_edges().is_empty());
        assert_eq!(dag.latent_count(), 0);
        assert!(dag.is_acyclic());
    }

    #[test]
    fn with_selection_shape() {
        let dag = builtin_dag(BuiltinDag::WithSelection);
        assert_eq!(dag.observed_nodes().count(), 5);
        assert_eq!(dag.latent_count(), 1);
        assert_eq!(dag.bidirected_edges(), vec![("Z", "Y")]);
        assert_eq!(dag.selection_nodes(), vec!["S"]);
        assert!(dag.is_acyclic());
        assert!(dag.observed_nodes().all(|n| n != "G"));
    }

    #[test]
    fn builtin_queries() {
        let g = builtin_dag(BuiltinDag::WithGender);
        assert!(g.d_separated::<&str>("W", "G", &[]).unwrap());
        assert!(!g.d_separated("W", "G", &["Z"]).unwrap());

        let mut with_s = g.clone();
        with_s.add_node("S").unwrap();
        with_s.add_edge("Z", "S").unwrap();
        with_s.mark_selection("S").unwrap();
        assert!(!with_s.d_separated("W", "G", &["S"]).unwrap());

        let s = builtin_dag(BuiltinDag::WithSelection);
        assert!(!s.d_separated("Y", "S", &["X"]).unwrap());
    }

    #[test]
    fn cycles_are_rejected() {
        let mut dag = CausalDag::new();
        for n in ["A", "B", "C"] {
            dag.add_node(n).unwrap();
        }
        dag.add_edge("A", "B").unwrap();
        dag.add_edge("B", "C").unwrap();
        assert_eq!(
            dag.add_edge("C", "A"),
            Err(DagError::Cycle("C".into(), "A".into()))
        );
        assert!(dag.is_acyclic());
    }

    #[test]
    fn selection_nodes_stay_sinks() {
        let mut dag = builtin_dag(BuiltinDag::WithSelection);
        dag.add_node("Q").unwrap();
        assert!(matches!(
            dag.add_edge("S", "Q"),
            Err(DagError::SelectionHasChildren(_))
        ));
        assert!(matches!(
            dag.mark_selection("Z"),
            Err(DagError::SelectionHasChildren(_))
        ));
    }

    #[test]
    fn query_errors() {
        let dag = builtin_dag(BuiltinDag::WithSelection);
        assert_eq!(
            dag.d_separated::<&str>("Q", "S", &[]),
            Err(DagError::UnknownNode("Q".into()))
        );
        assert_eq!(
            dag.d_separated("Y", "S", &["U_Z_Y"]),
            Err(DagError::LatentInQuery("U_Z_Y".into()))
        );
        assert!(matches!(
            dag.d_separated::<&str>("Y", "Y", &[]),
            Err(DagError::InvalidQuery(_))
        ));
    }

    #[test]
    fn spec_round_trip() {
        let dag = builtin_dag(BuiltinDag::WithSelection);
        let back = CausalDag::from_spec(&dag.to_spec()).unwrap();
        assert_eq!(back, dag);
    }
}
