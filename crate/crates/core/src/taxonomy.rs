//! Rooted-tree taxonomies over categorical domains.
//!
//! A taxonomy gives every categorical label a set of ancestors (the path to
//! the root, inclusive of the label itself). The semantic distance between
//! two labels is a log-scaled ratio of their non-shared ancestors to all of
//! their ancestors:
//!
//! ```text
//! δ(a, b) = log2(1 + (|φ(a) ∪ φ(b)| − |φ(a) ∩ φ(b)|) / |φ(a) ∪ φ(b)|)
//! ```
//!
//! On a tree, `φ(a) ∩ φ(b)` is exactly the ancestor path of the lowest common
//! ancestor, so the distance only needs depths and one LCA walk.
//!
//! Marginality of a candidate with respect to a multiset of values is the sum
//! of its distances to every value; the marginality centroid is the least
//! marginal node of the subtree spanned by the sample.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// Index of a node inside one [`Taxonomy`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug)]
pub struct Taxonomy {
    labels: Vec<String>,
    index: HashMap<String, NodeId>,
    parent: Vec<Option<NodeId>>,
    depth: Vec<u32>,
    root: NodeId,
}

impl Taxonomy {
    /// Builds a taxonomy from a root label and `(parent, child)` edges in any
    /// order. Every node must reach the root and have at most one parent.
    pub fn from_edges<'a, I>(root: &str, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let fail = |message: String| Error::TaxonomyFormat {
            path: None,
            message,
        };
        let root = root.trim();
        if root.is_empty() {
            return Err(fail("empty root label".into()));
        }

        let mut labels = vec![root.to_string()];
        let mut index = HashMap::from([(root.to_string(), NodeId(0))]);
        let mut parent: Vec<Option<NodeId>> = vec![None];

        let mut intern =
            |label: &str, labels: &mut Vec<String>, parent: &mut Vec<Option<NodeId>>| -> NodeId {
                if let Some(&id) = index.get(label) {
                    return id;
                }
                let id = NodeId(labels.len() as u32);
                labels.push(label.to_string());
                parent.push(None);
                index.insert(label.to_string(), id);
                id
            };

        for (p, c) in edges {
            let (p, c) = (p.trim(), c.trim());
            if p.is_empty() || c.is_empty() {
                return Err(fail(format!("empty label in edge `{p}` -> `{c}`")));
            }
            if c == root {
                return Err(fail(format!("root `{root}` appears as a child of `{p}`")));
            }
            let pid = intern(p, &mut labels, &mut parent);
            let cid = intern(c, &mut labels, &mut parent);
            match parent[cid.index()] {
                Some(existing) if existing != pid => {
                    return Err(fail(format!(
                        "`{c}` has two parents: `{}` and `{p}`",
                        labels[existing.index()]
                    )))
                }
                _ => parent[cid.index()] = Some(pid),
            }
        }

        // Depth resolution doubles as the connectivity/cycle check.
        let n = labels.len();
        let mut depth: Vec<Option<u32>> = vec![None; n];
        depth[0] = Some(0);
        for start in 0..n {
            let mut path = Vec::new();
            let mut cur = start;
            while depth[cur].is_none() {
                if path.len() > n {
                    return Err(fail(format!("cycle through `{}`", labels[start])));
                }
                path.push(cur);
                match parent[cur] {
                    Some(p) => cur = p.index(),
                    None => {
                        return Err(fail(format!(
                            "`{}` is not connected to root `{root}`",
                            labels[cur]
                        )))
                    }
                }
            }
            let mut d = depth[cur].unwrap_or(0);
            for &node in path.iter().rev() {
                d += 1;
                depth[node] = Some(d);
            }
        }

        let index = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), NodeId(i as u32)))
            .collect();
        Ok(Self {
            labels,
            index,
            parent,
            depth: depth.into_iter().map(|d| d.unwrap_or(0)).collect(),
            root: NodeId(0),
        })
    }

    /// Parses the edge-list format: first non-empty line is the root label,
    /// every further line is `parent<TAB>child`. Lines starting with `#` are
    /// comments.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(|l| l.trim_end_matches('\r'))
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let (_, root) = lines.next().ok_or_else(|| Error::TaxonomyFormat {
            path: None,
            message: "no root line".into(),
        })?;
        let mut edges = Vec::new();
        for (lineno, line) in lines {
            let (p, c) = line.split_once('\t').ok_or_else(|| Error::TaxonomyFormat {
                path: None,
                message: format!("line {}: expected `parent<TAB>child`", lineno + 1),
            })?;
            edges.push((p, c));
        }
        Self::from_edges(root, edges)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::TaxonomyFormat { message, .. } => Error::TaxonomyFormat {
                path: Some(path.to_path_buf()),
                message,
            },
            other => other,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn label(&self, id: NodeId) -> &str {
        &self.labels[id.index()]
    }

    pub fn id(&self, label: &str) -> Result<NodeId> {
        self.index
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index.contains_key(label)
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.parent[id.index()]
    }

    pub fn depth(&self, id: NodeId) -> u32 {
        self.depth[id.index()]
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = NodeId> + '_ {
        (0..self.labels.len() as u32).map(NodeId)
    }

    /// Path from `id` up to the root, both inclusive.
    pub fn ancestor_ids(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = vec![id];
        let mut cur = id;
        while let Some(p) = self.parent(cur) {
            out.push(p);
            cur = p;
        }
        out
    }

    /// Ancestor set φ(a) of a label, including the label itself and the root.
    pub fn ancestors(&self, label: &str) -> Result<BTreeSet<&str>> {
        let id = self.id(label)?;
        Ok(self
            .ancestor_ids(id)
            .into_iter()
            .map(|a| self.label(a))
            .collect())
    }

    pub fn lowest_common_ancestor(&self, a: NodeId, b: NodeId) -> NodeId {
        let (mut a, mut b) = (a, b);
        while self.depth(a) > self.depth(b) {
            a = self.parent(a).unwrap_or(self.root);
        }
        while self.depth(b) > self.depth(a) {
            b = self.parent(b).unwrap_or(self.root);
        }
        while a != b {
            a = self.parent(a).unwrap_or(self.root);
            b = self.parent(b).unwrap_or(self.root);
        }
        a
    }

    pub fn distance(&self, a: NodeId, b: NodeId) -> f64 {
        if a == b {
            return 0.0;
        }
        let lca = self.lowest_common_ancestor(a, b);
        let shared = f64::from(self.depth(lca) + 1);
        let union = f64::from(self.depth(a) + 1) + f64::from(self.depth(b) + 1) - shared;
        (1.0 + (union - shared) / union).log2()
    }

    pub fn semantic_distance(&self, a: &str, b: &str) -> Result<f64> {
        Ok(self.distance(self.id(a)?, self.id(b)?))
    }

    /// Marginality of `candidate` against a multiset of values: the sum of
    /// distances to every occurrence.
    pub fn marginality(&self, values: &ValueCounts, candidate: NodeId) -> f64 {
        values
            .iter()
            .filter(|&(v, _)| v != candidate)
            .map(|(v, count)| count as f64 * self.distance(candidate, v))
            .sum()
    }

    /// Label-based marginality over a value list (multiset semantics).
    pub fn marginality_of(&self, value_set: &[&str], candidate: &str) -> Result<f64> {
        if value_set.is_empty() {
            return Err(Error::Empty("marginality value set"));
        }
        let ids = value_set
            .iter()
            .map(|l| self.id(l))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.marginality(&ValueCounts::from_ids(&ids), self.id(candidate)?))
    }

    /// All nodes on some path from a sample value up to the root.
    pub fn spanned_subtree(&self, values: &ValueCounts) -> BTreeSet<NodeId> {
        let mut out = BTreeSet::new();
        for (v, _) in values.iter() {
            let mut cur = Some(v);
            while let Some(node) = cur {
                if !out.insert(node) {
                    break;
                }
                cur = self.parent(node);
            }
        }
        out
    }

    /// Least marginal node of the spanned subtree; ties go to the
    /// lexicographically smallest label.
    pub fn marginality_centroid(&self, values: &ValueCounts) -> Result<NodeId> {
        if values.is_empty() {
            return Err(Error::Empty("centroid sample"));
        }
        let table = MarginalityTable::new(self, values, self.spanned_subtree(values));
        Ok(table.argmin(self))
    }

    pub fn marginality_centroid_of(&self, sample: &[&str]) -> Result<&str> {
        let ids = sample
            .iter()
            .map(|l| self.id(l))
            .collect::<Result<Vec<_>>>()?;
        let id = self.marginality_centroid(&ValueCounts::from_ids(&ids))?;
        Ok(self.label(id))
    }

    /// Orders two nodes by label, the crate-wide deterministic tie-break.
    pub fn cmp_labels(&self, a: NodeId, b: NodeId) -> std::cmp::Ordering {
        self.label(a).cmp(self.label(b))
    }
}

impl fmt::Display for Taxonomy {
    /// Writes the edge-list format accepted by [`Taxonomy::parse`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.label(self.root))?;
        for id in self.nodes() {
            if let Some(p) = self.parent(id) {
                writeln!(f, "{}\t{}", self.label(p), self.label(id))?;
            }
        }
        Ok(())
    }
}

/// A multiset of taxonomy nodes with a canonical iteration order, so sums
/// over it do not depend on the order the sample arrived in.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValueCounts(BTreeMap<NodeId, usize>);

impl ValueCounts {
    pub fn from_ids(ids: &[NodeId]) -> Self {
        let mut map = BTreeMap::new();
        for &id in ids {
            *map.entry(id).or_insert(0) += 1;
        }
        Self(map)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, usize)> + '_ {
        self.0.iter().map(|(&k, &v)| (k, v))
    }

    pub fn distinct(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.0.keys().copied()
    }

    pub fn total(&self) -> usize {
        self.0.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<NodeId> for ValueCounts {
    fn from_iter<T: IntoIterator<Item = NodeId>>(iter: T) -> Self {
        let mut map = BTreeMap::new();
        for id in iter {
            *map.entry(id).or_insert(0) += 1;
        }
        Self(map)
    }
}

/// Marginality scores of a set of candidates against one value multiset.
#[derive(Clone, Debug)]
pub struct MarginalityTable {
    pub scores: BTreeMap<NodeId, f64>,
}

impl MarginalityTable {
    pub fn new(
        taxonomy: &Taxonomy,
        values: &ValueCounts,
        candidates: impl IntoIterator<Item = NodeId>,
    ) -> Self {
        let scores = candidates
            .into_iter()
            .map(|c| (c, taxonomy.marginality(values, c)))
            .collect();
        Self { scores }
    }

    pub fn argmin(&self, taxonomy: &Taxonomy) -> NodeId {
        self.pick(taxonomy, |best, score| score < best)
    }

    pub fn argmax(&self, taxonomy: &Taxonomy) -> NodeId {
        self.pick(taxonomy, |best, score| score > best)
    }

    fn pick(&self, taxonomy: &Taxonomy, better: impl Fn(f64, f64) -> bool) -> NodeId {
        let mut iter = self.scores.iter();
        let (&first, &first_score) = iter.next().expect("non-empty candidate set");
        let (mut best, mut best_score) = (first, first_score);
        for (&node, &score) in iter {
            if better(best_score, score)
                || (score == best_score && taxonomy.cmp_labels(node, best).is_lt())
            {
                best = node;
                best_score = score;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// root -> x -> a, root -> y -> b
    fn chain() -> Taxonomy {
        Taxonomy::parse("root\nroot\tx\nroot\ty\nx\ta\ny\tb\n").unwrap()
    }

    #[test]
    fn ancestors_of_root_and_leaf() {
        let t = chain();
        assert_eq!(t.ancestors("root").unwrap(), BTreeSet::from(["root"]));
        assert_eq!(
            t.ancestors("a").unwrap(),
            BTreeSet::from(["a", "x", "root"])
        );
        assert!(matches!(t.ancestors("zzz"), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn distance_hand_values() {
        let t = chain();
        assert_eq!(t.semantic_distance("a", "a").unwrap(), 0.0);
        // union 5, intersection 1
        assert_abs_diff_eq!(
            t.semantic_distance("a", "b").unwrap(),
            0.847_996_906_554_95,
            epsilon = 1e-12
        );
        // union 2, intersection 1
        assert_abs_diff_eq!(
            t.semantic_distance("root", "x").unwrap(),
            0.584_962_500_721_156,
            epsilon = 1e-12
        );
        assert!(t.semantic_distance("a", "nope").is_err());
    }

    #[test]
    fn marginality_hand_values() {
        let t = chain();
        assert_eq!(t.marginality_of(&["a"], "a").unwrap(), 0.0);
        assert_eq!(t.marginality_of(&["a"; 5], "a").unwrap(), 0.0);
        // δ(root, a) = log2(1 + 2/3)
        assert_abs_diff_eq!(
            t.marginality_of(&["a", "b"], "root").unwrap(),
            1.473_931_188_332_411,
            epsilon = 1e-12
        );
        assert!(matches!(t.marginality_of(&[], "a"), Err(Error::Empty(_))));
    }

    #[test]
    fn centroid_of_unanimous_sample() {
        let t = chain();
        assert_eq!(t.marginality_centroid_of(&["a", "a", "a"]).unwrap(), "a");
        assert!(t.marginality_centroid_of(&[]).is_err());
    }

    #[test]
    fn centroid_ties_break_lexicographically() {
        // a and b have equal marginality 0.848 each; root 1.474, x and y larger.
        let t = chain();
        assert_eq!(t.marginality_centroid_of(&["a", "b"]).unwrap(), "a");
        assert_eq!(t.marginality_centroid_of(&["b", "a"]).unwrap(), "a");
    }

    #[test]
    fn rejects_malformed_files() {
        assert!(Taxonomy::parse("").is_err());
        assert!(Taxonomy::parse("r\nr\ta\nb\ta\n").is_err(), "two parents");
        assert!(Taxonomy::parse("r\nr\ta\nb\tc\n").is_err(), "disconnected");
        assert!(Taxonomy::parse("r\na\tb\nb\ta\n").is_err(), "cycle");
        assert!(Taxonomy::parse("r\na\tr\n").is_err(), "root as child");
        assert!(Taxonomy::parse("r\nr a\n").is_err(), "missing tab");
    }

    #[test]
    fn display_round_trips() {
        let t = chain();
        let again = Taxonomy::parse(&t.to_string()).unwrap();
        assert_eq!(again.len(), t.len());
        for id in t.nodes() {
            let label = t.label(id);
            assert_eq!(again.ancestors(label).unwrap(), t.ancestors(label).unwrap());
        }
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let t = Taxonomy::parse("# header\n\nroot\n# edge\nroot\tx\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.depth(t.id("x").unwrap()), 1);
    }
}
