//! Rule-based relation extraction over tagged entities and knowledge-graph
//! export.
//!
//! Every entity mention becomes a node keyed by its normalized surface text
//! and label. A [`RelationRule`] links a head mention to each tail mention
//! whose label matches and whose sentence lies within the rule's window.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Document, LabelSet};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("relation rule `{relation}` references unknown label `{label}`")]
    UnknownLabel { relation: String, label: String },
    #[error("relation rule has an empty relation name")]
    EmptyRelation,
    #[error("unknown graph format `{0}` (expected `json` or `dot`)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationRule {
    pub head_label: String,
    pub tail_label: String,
    pub relation_name: String,
    /// maximum sentence distance between head and tail
    pub window: usize,
}

impl RelationRule {
    pub fn new(head: &str, tail: &str, relation: &str, window: usize) -> Self {
        Self { head_label: head.to_string(), tail_label: tail.to_string(), relation_name: relation.to_string(), window }
    }

    pub fn validate(&self, labels: &LabelSet) -> Result<(), GraphError> {
        if self.relation_name.trim().is_empty() {
            return Err(GraphError::EmptyRelation);
        }
        for label in [&self.head_label, &self.tail_label] {
            if !labels.contains(label) {
                return Err(GraphError::UnknownLabel { relation: self.relation_name.clone(), label: label.clone() });
            }
        }
        Ok(())
    }
}

/// The default co-occurrence rules, all with a window of one sentence.
pub fn default_rules() -> Vec<RelationRule> {
    let imd = "Immune_Mediated_Disease";
    vec![
        RelationRule::new(imd, "Symptom", "HAS_SYMPTOM", 1),
        RelationRule::new(imd, "Treatment", "TREATED_WITH", 1),
        RelationRule::new(imd, "Biomarker", "HAS_BIOMARKER", 1),
        RelationRule::new(imd, "Other_Disease_Disorder", "COMORBID_WITH", 1),
    ]
}

/// A graph node. Ordering is by label, then text.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Node {
    pub label: String,
    pub text: String,
}

impl Node {
    pub fn new(text: &str, label: &str) -> Self {
        Self { label: label.to_string(), text: normalize(text) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Edge {
    pub head: Node,
    pub tail: Node,
    pub relation: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct EntityGraph {
    pub nodes: BTreeSet<Node>,
    pub edges: BTreeSet<Edge>,
}

impl EntityGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains_edge(&self, head: &Node, tail: &Node, relation: &str) -> bool {
        self.edges.iter().any(|e| &e.head == head && &e.tail == tail && e.relation == relation)
    }
}

/// Lowercases and collapses internal whitespace.
pub fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

struct Mention {
    node: Node,
    sentence: usize,
}

pub fn extract_graph(docs: &[Document], rules: &[RelationRule], labels: &LabelSet) -> Result<EntityGraph, GraphError> {
    for rule in rules {
        rule.validate(labels)?;
    }
    let mut graph = EntityGraph::default();
    for doc in docs {
        let mentions: Vec<Mention> = doc
            .spans()
            .into_iter()
            .map(|span| Mention { node: Node::new(&doc.span_text(&span), &span.label), sentence: span.sentence_index })
            .collect();
        graph.nodes.extend(mentions.iter().map(|m| m.node.clone()));
        for rule in rules {
            for (hi, head) in mentions.iter().enumerate() {
                if head.node.label != rule.head_label {
                    continue;
                }
                for (ti, tail) in mentions.iter().enumerate() {
                    if hi == ti || tail.node.label != rule.tail_label || head.node == tail.node {
                        continue;
                    }
                    if head.sentence.abs_diff(tail.sentence) <= rule.window {
                        graph.edges.insert(Edge {
                            head: head.node.clone(),
                            tail: tail.node.clone(),
                            relation: rule.relation_name.clone(),
                        });
                    }
                }
            }
        }
    }
    Ok(graph)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    Json,
    Dot,
}

impl FromStr for GraphFormat {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" | "structured" => Ok(Self::Json),
            "dot" => Ok(Self::Dot),
            _ => Err(GraphError::UnknownFormat(s.to_string())),
        }
    }
}

const PALETTE: [&str; 12] = [
    "#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#42d4f4", "#f032e6", "#bfef45", "#fabed4", "#469990",
    "#dcbeff", "#9a6324",
];

pub fn export_graph(graph: &EntityGraph, format: GraphFormat) -> String {
    match format {
        GraphFormat::Json => {
            let mut out = serde_json::to_string_pretty(graph).expect("graph serializes");
            out.push('\n');
            out
        }
        GraphFormat::Dot => to_dot(graph),
    }
}

fn to_dot(graph: &EntityGraph) -> String {
    let ids: std::collections::BTreeMap<&Node, usize> = graph.nodes.iter().enumerate().map(|(i, n)| (n, i)).collect();
    let labels: Vec<&str> = {
        let set: BTreeSet<&str> = graph.nodes.iter().map(|n| n.label.as_str()).collect();
        set.into_iter().collect()
    };
    let mut out = String::from("digraph entities {\n  node [style=filled];\n");
    for (node, id) in &ids {
        let colour = labels.iter().position(|l| *l == node.label).map_or(PALETTE[0], |i| PALETTE[i % PALETTE.len()]);
        let _ = writeln!(
            out,
            "  n{id} [label=\"{}\", group=\"{}\", fillcolor=\"{colour}\"];",
            escape(&node.text),
            escape(&node.label)
        );
    }
    for edge in &graph.edges {
        let _ = writeln!(out, "  n{} -> n{} [label=\"{}\"];", ids[&edge.head], ids[&edge.tail], escape(&edge.relation));
    }
    out.push_str("}\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}
