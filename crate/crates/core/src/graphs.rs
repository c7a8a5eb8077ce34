//! Instance spatial graph, label semantic graph and the assignment graph joining them.
//!
//! Edge and adjacency tables are stored as shared index arrays so that the graph
//! network block can gather rows and aggregate neighborhoods without copying.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Bounding box in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    /// Corner form `(x, y, x+w, y+h)`.
    pub fn corners(&self) -> [f64; 4] {
        [self.x, self.y, self.x + self.w, self.y + self.h]
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Checks `w, h > 0`, `x, y ≥ 0` and `x+w, y+h ≤ 1`.
    pub fn validate(&self) -> Result<()> {
        let finite = [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite());
        if !finite
            || self.w <= 0.0
            || self.h <= 0.0
            || self.x < 0.0
            || self.y < 0.0
            || self.x + self.w > 1.0
            || self.y + self.h > 1.0
        {
            return Err(Error::Data(format!("bounding box {self:?} outside the unit square")));
        }
        Ok(())
    }
}

/// One detected region of an image.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub feature: Vec<f64>,
    pub bbox: BBox,
    /// Detector confidence in `[0, 1]`.
    pub confidence: f64,
    /// Preliminary class index from the detector. Only used for ranking and diagnostics.
    pub class: usize,
}

/// Label names with their word embeddings (one row per label).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVocab {
    names: Vec<String>,
    embeddings: Tensor,
}

impl LabelVocab {
    pub fn new(names: Vec<String>, embeddings: Tensor) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Data("label vocabulary is empty".into()));
        }
        if embeddings.shape().len() != 2 || embeddings.rows() != names.len() {
            return Err(Error::shape(
                "label embeddings",
                &[names.len(), embeddings.cols()],
                embeddings.shape(),
            ));
        }
        let mut sorted: Vec<&String> = names.iter().collect();
        sorted.sort();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Data(format!("duplicate label name `{}`", w[0])));
        }
        Ok(LabelVocab { names, embeddings })
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

    pub fn embeddings(&self) -> &Tensor {
        &self.embeddings
    }

    pub fn embed_dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Indices of the `m` most confident instances, most confident first.
/// Equal confidences keep their original order.
pub fn top_m_indices(instances: &[Instance], m: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..instances.len()).collect();
    order.sort_by(|a, b| {
        instances[*b]
            .confidence
            .total_cmp(&instances[*a].confidence)
            .then(a.cmp(b))
    });
    order.truncate(m);
    order
}

pub fn select_top_m(instances: &[Instance], m: usize) -> Vec<Instance> {
    top_m_indices(instances, m)
        .into_iter()
        .map(|i| instances[i].clone())
        .collect()
}

/// Directed graph with node attributes, per-edge attributes and out-adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributedGraph {
    /// One row per node.
    pub nodes: Tensor,
    /// `(source, target)` per edge.
    pub edges: Vec<(usize, usize)>,
    /// One row per edge; `None` when there are no edges.
    pub edge_attr: Option<Tensor>,
    /// Outgoing edge indices per node; the neighborhood a node aggregates over.
    pub out_edges: Arc<[Vec<usize>]>,
    pub edge_src: Arc<[usize]>,
    pub edge_dst: Arc<[usize]>,
}

impl AttributedGraph {
    fn new(nodes: Tensor, edges: Vec<(usize, usize)>, attr_rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = nodes.rows();
        let mut out_edges = vec![Vec::new(); n];
        for (e, (s, t)) in edges.iter().enumerate() {
            if *s >= n || *t >= n || s == t {
                return Err(Error::Contract(format!("invalid edge ({s}, {t}) for {n} nodes")));
            }
            out_edges[*s].push(e);
        }
        let edge_attr = if attr_rows.is_empty() {
            None
        } else {
            Some(Tensor::from_rows(&attr_rows)?)
        };
        Ok(AttributedGraph {
            nodes,
            edge_src: edges.iter().map(|e| e.0).collect(),
            edge_dst: edges.iter().map(|e| e.1).collect(),
            edges,
            edge_attr,
            out_edges: out_edges.into(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.rows()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Target nodes of the out-edges of `i`, in edge order.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.out_edges[i].iter().map(|e| self.edges[*e].1)
    }
}

fn center_distance(a: &BBox, b: &BBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    libm::hypot(ax - bx, ay - by)
}

/// kNN instance graph: each instance points at its `knn_k` nearest other
/// instances by bounding-box center distance (ties to the lower index).
/// Edge `i→j` carries `[corners(B_i), corners(B_j)]`.
pub fn build_instance_graph(instances: &[Instance], knn_k: usize) -> Result<AttributedGraph> {
    if instances.is_empty() {
        return Err(Error::Contract("instance graph needs at least one instance".into()));
    }
    if knn_k == 0 {
        return Err(Error::Config("knn_k must be at least 1".into()));
    }
    let d = instances[0].feature.len();
    if let Some((i, _)) = instances.iter().enumerate().find(|(_, x)| x.feature.len() != d) {
        return Err(Error::shape(format!("instance {i} feature"), &[d], &[instances[i].feature.len()]));
    }
    let rows: Vec<&[f64]> = instances.iter().map(|x| x.feature.as_slice()).collect();
    let nodes = Tensor::from_rows(&rows)?;

    let m = instances.len();
    let k = knn_k.min(m - 1);
    let mut edges = Vec::with_capacity(m * k);
    let mut attrs = Vec::with_capacity(m * k);
    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(m);
    for (i, src) in instances.iter().enumerate() {
        candidates.clear();
        candidates.extend(
            instances
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, dst)| (center_distance(&src.bbox, &dst.bbox), j)),
        );
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (_, j) in candidates.iter().take(k) {
            edges.push((i, *j));
            let mut a = Vec::with_capacity(8);
            a.extend_from_slice(&src.bbox.corners());
            a.extend_from_slice(&instances[*j].bbox.corners());
            attrs.push(a);
        }
    }
    AttributedGraph::new(nodes, edges, attrs)
}

/// Complete directed label graph without self-loops; edge `i→j` carries `[w_i, w_j]`.
pub fn build_label_graph(vocab: &LabelVocab) -> Result<AttributedGraph> {
    let c = vocab.len();
    let emb = vocab.embeddings();
    let mut edges = Vec::with_capacity(c * c.saturating_sub(1));
    let mut attrs = Vec::with_capacity(edges.capacity());
    for i in 0..c {
        for j in (0..c).filter(|j| *j != i) {
            edges.push((i, j));
            let mut a = Vec::with_capacity(2 * emb.cols());
            a.extend_from_slice(emb.row(i));
            a.extend_from_slice(emb.row(j));
            attrs.push(a);
        }
    }
    AttributedGraph::new(emb.clone(), edges, attrs)
}

/// Instance graph plus label graph plus a matching edge from every instance to every label.
///
/// Matching edge `(i, j)` is stored at row `i·C + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentGraph {
    pub instances: AttributedGraph,
    pub labels: AttributedGraph,
    /// `[v_i^o, v_j^l]` per matching edge.
    pub matching_attr: Tensor,
    /// Instance endpoint per matching edge.
    pub match_instance: Arc<[usize]>,
    /// Label endpoint per matching edge.
    pub match_label: Arc<[usize]>,
    /// Matching edges incident to each instance, in label order.
    pub match_by_instance: Arc<[Vec<usize>]>,
    /// Matching edges incident to each label, in instance order.
    pub match_by_label: Arc<[Vec<usize>]>,
}

pub fn build_assignment_graph(
    instances: AttributedGraph,
    labels: AttributedGraph,
) -> Result<AssignmentGraph> {
    let (m, c) = (instances.num_nodes(), labels.num_nodes());
    let (d, dw) = (instances.nodes.cols(), labels.nodes.cols());
    let mut data = Vec::with_capacity(m * c * (d + dw));
    let mut match_instance = Vec::with_capacity(m * c);
    let mut match_label = Vec::with_capacity(m * c);
    let mut by_label = vec![Vec::with_capacity(m); c];
    let mut by_instance = Vec::with_capacity(m);
    for i in 0..m {
        by_instance.push((i * c..(i + 1) * c).collect::<Vec<_>>());
        for (j, group) in by_label.iter_mut().enumerate() {
            data.extend_from_slice(instances.nodes.row(i));
            data.extend_from_slice(labels.nodes.row(j));
            match_instance.push(i);
            match_label.push(j);
            group.push(i * c + j);
        }
    }
    Ok(AssignmentGraph {
        matching_attr: Tensor::new(vec![m * c, d + dw], data)?,
        instances,
        labels,
        match_instance: match_instance.into(),
        match_label: match_label.into(),
        match_by_instance: by_instance.into(),
        match_by_label: by_label.into(),
    })
}

impl AssignmentGraph {
    /// Builds the full assignment graph for one image.
    pub fn build(instances: &[Instance], label_graph: &AttributedGraph, knn_k: usize) -> Result<Self> {
        build_assignment_graph(build_instance_graph(instances, knn_k)?, label_graph.clone())
    }

    pub fn num_instances(&self) -> usize {
        self.instances.num_nodes()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.num_nodes()
    }

    pub fn num_matching_edges(&self) -> usize {
        self.matching_attr.rows()
    }

    pub fn matching_edge(&self, instance: usize, label: usize) -> usize {
        instance * self.num_labels() + label
    }
}
