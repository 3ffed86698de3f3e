use serde::{Deserialize, Serialize};

use crate::ndmath::{dot, Tensor2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

/// Pairwise token cosine similarities. Entries involving a zero vector are
/// `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub tokens: Vec<String>,
    pub matrix: Vec<Vec<Option<f64>>>,
    pub threshold: f64,
    pub edges: Vec<Edge>,
    /// Indices of zero-norm vectors.
    pub undefined: Vec<usize>,
}

pub fn cosine_matrix(tokens: &[String], vectors: &Tensor2, threshold: f64) -> SimilarityMatrix {
    let n = vectors.rows();
    let norms: Vec<f64> = (0..n).map(|i| dot(vectors.row(i), vectors.row(i)).sqrt()).collect();
    let mut matrix = vec![vec![None; n]; n];
    let mut edges = Vec::new();
    for i in 0..n {
        if norms[i] == 0.0 {
            continue;
        }
        matrix[i][i] = Some(1.0);
        for j in i + 1..n {
            if norms[j] == 0.0 {
                continue;
            }
            let c = (dot(vectors.row(i), vectors.row(j)) / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            matrix[i][j] = Some(c);
            matrix[j][i] = Some(c);
            if c >= threshold {
                edges.push(Edge { i, j, value: c });
            }
        }
    }
    SimilarityMatrix {
        tokens: tokens.to_vec(),
        matrix,
        threshold,
        edges,
        undefined: (0..n).filter(|&i| norms[i] == 0.0).collect(),
    }
}

impl SimilarityMatrix {
    /// `i,j,token_i,token_j,value` rows for every edge.
    pub fn edges_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["i", "j", "token_i", "token_j", "value"]).expect("in-memory write");
        for e in &self.edges {
            w.write_record([
                e.i.to_string(),
                e.j.to_string(),
                self.tokens[e.i].clone(),
                self.tokens[e.j].clone(),
                e.value.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }
}
