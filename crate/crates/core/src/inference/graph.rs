//! Causal graph queries: d-separation and backdoor adjustment.

use std::collections::VecDeque;

use crate::discovery::WeightedDag;

use super::InferenceError;

pub const OUTCOME: &str = "Presence";

/// Directed graph over named nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalGraph {
    names: Vec<String>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

impl CausalGraph {
    pub fn new(names: Vec<String>) -> Self {
        let n = names.len();
        Self { names, parents: vec![Vec::new(); n], children: vec![Vec::new(); n] }
    }

    pub fn from_edges(names: Vec<String>, edges: &[(usize, usize)]) -> Self {
        let mut g = Self::new(names);
        for &(a, b) in edges {
            g.add_edge(a, b);
        }
        g
    }

    /// Support of `dag` plus an outcome node with an edge from every
    /// variable.
    pub fn with_outcome(dag: &WeightedDag, outcome: &str) -> Self {
        let d = dag.d();
        let mut names = dag.column_names.clone();
        names.push(outcome.to_string());
        let mut g = Self::new(names);
        for e in dag.edges() {
            g.add_edge(e.from, e.to);
        }
        for v in 0..d {
            g.add_edge(v, d);
        }
        g
    }

    pub fn add_edge(&mut self, from: usize, to: usize) {
        if !self.children[from].contains(&to) {
            self.children[from].push(to);
            self.parents[to].push(from);
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, v: usize) -> &str {
        &self.names[v]
    }

    pub fn parents(&self, v: usize) -> &[usize] {
        &self.parents[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn index_of(&self, name: &str) -> Result<usize, InferenceError> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| InferenceError::UnknownNode(name.to_string()))
    }

    fn reach(&self, start: &[usize], next: impl Fn(usize) -> Vec<usize>) -> Vec<bool> {
        let mut seen = vec![false; self.len()];
        let mut queue: VecDeque<usize> = start.iter().copied().collect();
        for &s in start {
            seen[s] = true;
        }
        while let Some(u) = queue.pop_front() {
            for v in next(u) {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    /// Ancestors of `nodes`, the nodes themselves included.
    pub fn ancestors_mask(&self, nodes: &[usize]) -> Vec<bool> {
        self.reach(nodes, |u| self.parents[u].clone())
    }

    /// Descendants of `nodes`, the nodes themselves included.
    pub fn descendants_mask(&self, nodes: &[usize]) -> Vec<bool> {
        self.reach(nodes, |u| self.children[u].clone())
    }

    /// Copy with every edge leaving `v` removed.
    pub fn without_outgoing(&self, v: usize) -> Self {
        let mut g = Self::new(self.names.clone());
        for u in 0..self.len() {
            if u == v {
                continue;
            }
            for &w in &self.children[u] {
                g.add_edge(u, w);
            }
        }
        g
    }

    /// d-separation of `x` and `y` given `z`, decided on the moral graph
    /// of the ancestral set of `{x, y} ∪ z`.
    pub fn d_separated(&self, x: usize, y: usize, z: &[usize]) -> Result<bool, InferenceError> {
        let n = self.len();
        for &v in [x, y].iter().chain(z) {
            if v >= n {
                return Err(InferenceError::UnknownNode(format!("#{v}")));
            }
        }
        if x == y || z.contains(&x) || z.contains(&y) {
            return Err(InferenceError::InvalidQuery(
                "x and y must be distinct and outside the conditioning set".into(),
            ));
        }
        let mut seeds = vec![x, y];
        seeds.extend_from_slice(z);
        let keep = self.ancestors_mask(&seeds);

        let mut adj = vec![Vec::new(); n];
        for v in (0..n).filter(|&v| keep[v]) {
            let ps: Vec<usize> = self.parents[v].iter().copied().filter(|&p| keep[p]).collect();
            for (i, &p) in ps.iter().enumerate() {
                adj[p].push(v);
                adj[v].push(p);
                for &q in &ps[i + 1..] {
                    adj[p].push(q);
                    adj[q].push(p);
                }
            }
        }
        let mut blocked = vec![false; n];
        for &v in z {
            blocked[v] = true;
        }
        let mut seen = vec![false; n];
        seen[x] = true;
        let mut queue = VecDeque::from([x]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if v == y {
                    return Ok(false);
                }
                if !seen[v] && !blocked[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        Ok(true)
    }

    pub fn d_separated_by_name(&self, x: &str, y: &str, z: &[&str]) -> Result<bool, InferenceError> {
        let z: Vec<usize> = z.iter().map(|n| self.index_of(n)).collect::<Result<_, _>>()?;
        self.d_separated(self.index_of(x)?, self.index_of(y)?, &z)
    }

    /// Parents of `treatment`, checked against the backdoor criterion for
    /// the effect on `outcome`.
    pub fn backdoor_adjustment_set(&self, treatment: usize, outcome: usize) -> Result<Vec<usize>, InferenceError> {
        let mut set: Vec<usize> = self.parents[treatment].iter().copied().filter(|&p| p != outcome).collect();
        set.sort_unstable();
        self.verify_backdoor(treatment, outcome, &set)?;
        Ok(set)
    }

    pub fn verify_backdoor(&self, treatment: usize, outcome: usize, set: &[usize]) -> Result<(), InferenceError> {
        let desc = self.descendants_mask(&[treatment]);
        if let Some(&bad) = set.iter().find(|&&v| desc[v]) {
            return Err(InferenceError::BackdoorViolation(format!(
                "{} is a descendant of {}",
                self.names[bad], self.names[treatment]
            )));
        }
        if !self.without_outgoing(treatment).d_separated(treatment, outcome, set)? {
            return Err(InferenceError::BackdoorViolation(format!(
                "{{{}}} leaves a backdoor path from {} to {} open",
                set.iter().map(|&v| self.names[v].as_str()).collect::<Vec<_>>().join(", "),
                self.names[treatment],
                self.names[outcome]
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn named(n: usize) -> Vec<String> {
        ["A", "B", "C", "D", "E", "F"][..n].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn chain_rule() {
        let g = CausalGraph::from_edges(named(3), &[(0, 1), (1, 2)]);
        assert!(g.d_separated(0, 2, &[1]).unwrap());
        assert!(!g.d_separated(0, 2, &[]).unwrap());
    }

    #[test]
    fn collider_rule() {
        let g = CausalGraph::from_edges(named(3), &[(0, 1), (2, 1)]);
        assert!(g.d_separated(0, 2, &[]).unwrap());
        assert!(!g.d_separated(0, 2, &[1]).unwrap());
    }

    #[test]
    fn descendant_of_collider_opens_path() {
        let g = CausalGraph::from_edges(named(4), &[(0, 1), (2, 1), (1, 3)]);
        assert!(!g.d_separated(0, 2, &[3]).unwrap());
    }

    #[test]
    fn unknown_and_invalid_queries() {
        let g = CausalGraph::from_edges(named(3), &[(0, 1)]);
        assert!(matches!(g.d_separated_by_name("A", "Q", &[]), Err(InferenceError::UnknownNode(_))));
        assert!(matches!(g.d_separated(0, 1, &[0]), Err(InferenceError::InvalidQuery(_))));
    }

    #[test]
    fn confounder_triangle() {
        // Z -> T, Z -> Y, T -> Y
        let g = CausalGraph::from_edges(vec!["Z".into(), "T".into(), "Y".into()], &[(0, 1), (0, 2), (1, 2)]);
        assert_eq!(g.backdoor_adjustment_set(1, 2).unwrap(), vec![0]);
    }

    #[test]
    fn root_treatment_needs_no_adjustment() {
        let g = CausalGraph::from_edges(named(3), &[(0, 1), (0, 2), (1, 2)]);
        assert_eq!(g.backdoor_adjustment_set(0, 2).unwrap(), Vec::<usize>::new());
    }

    #[test]
    fn outcome_construction_and_chain() {
        let dag = WeightedDag::from_edges(2, &[(0, 1, 0.8)], vec!["BIO1".into(), "BIO2".into()]).unwrap();
        let g = CausalGraph::with_outcome(&dag, OUTCOME);
        assert_eq!(g.len(), 3);
        assert_eq!(g.parents(2), &[0, 1]);
        let set = g.backdoor_adjustment_set(1, 2).unwrap();
        assert_eq!(set, vec![0]);
        assert!(g.without_outgoing(1).d_separated(1, 2, &set).unwrap());
        assert!(!g.without_outgoing(1).d_separated(1, 2, &[]).unwrap());
    }

    #[test]
    fn descendant_in_set_is_a_violation() {
        let g = CausalGraph::from_edges(named(3), &[(0, 1), (1, 2), (0, 2)]);
        assert!(matches!(g.verify_backdoor(0, 2, &[1]), Err(InferenceError::BackdoorViolation(_))));
    }

    #[test]
    fn open_backdoor_is_a_violation() {
        let g = CausalGraph::from_edges(named(3), &[(0, 1), (0, 2), (1, 2)]);
        assert!(matches!(g.verify_backdoor(1, 2, &[]), Err(InferenceError::BackdoorViolation(_))));
    }
}
