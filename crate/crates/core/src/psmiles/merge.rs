//! Alignment of an external subword tokenization onto chemical tokens.
//!
//! A language-model tokenizer splits `[*]` or `(` at arbitrary byte
//! boundaries. Given its raw pieces and the chemical tokens of the same text,
//! [`build_merge_map`] assigns every raw piece to the chemical token(s) it
//! overlaps. A piece straddling two chemical tokens is shared between them in
//! proportion to the bytes each one covers, so every raw index carries a total
//! weight of exactly one across all groups.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MergeError {
    #[error("token texts diverge at byte {offset}")]
    TextMismatch { offset: usize },
    #[error("target token {index} is empty")]
    EmptyTarget { index: usize },
    #[error("expected {expected} entries, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("vector {index} has dimension {actual}, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub raw_index: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeGroup {
    pub text: String,
    pub members: Vec<Member>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeMap {
    pub groups: Vec<MergeGroup>,
    pub raw_len: usize,
}

impl MergeMap {
    pub fn identity<S: AsRef<str>>(tokens: &[S]) -> Self {
        let groups = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| MergeGroup {
                text: t.as_ref().to_string(),
                members: vec![Member { raw_index: i, weight: 1.0 }],
            })
            .collect();
        Self { groups, raw_len: tokens.len() }
    }

    pub fn refined_tokens(&self) -> Vec<String> {
        self.groups.iter().map(|g| g.text.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

fn first_divergence(a: &str, b: &str) -> usize {
    a.bytes().zip(b.bytes()).position(|(x, y)| x != y).unwrap_or_else(|| a.len().min(b.len()))
}

/// Greedy left-to-right byte alignment of `raw` pieces onto `target` tokens.
pub fn build_merge_map<R, T>(raw: &[R], target: &[T]) -> Result<MergeMap, MergeError>
where
    R: AsRef<str>,
    T: AsRef<str>,
{
    let raw_text: String = raw.iter().map(|r| r.as_ref()).collect();
    let target_text: String = target.iter().map(|t| t.as_ref()).collect();
    if raw_text != target_text {
        return Err(MergeError::TextMismatch { offset: first_divergence(&raw_text, &target_text) });
    }
    if let Some(index) = target.iter().position(|t| t.as_ref().is_empty()) {
        return Err(MergeError::EmptyTarget { index });
    }

    let mut groups: Vec<MergeGroup> =
        target.iter().map(|t| MergeGroup { text: t.as_ref().to_string(), members: Vec::new() }).collect();
    let mut bounds = Vec::with_capacity(target.len());
    let mut pos = 0;
    for t in target {
        bounds.push((pos, pos + t.as_ref().len()));
        pos += t.as_ref().len();
    }

    let mut g = 0;
    let mut start = 0;
    for (raw_index, piece) in raw.iter().enumerate() {
        let len = piece.as_ref().len();
        let end = start + len;
        if len == 0 {
            // Zero-width pieces attach whole to the group at their offset.
            while g + 1 < bounds.len() && bounds[g].1 <= start {
                g += 1;
            }
            if !groups.is_empty() {
                groups[g].members.push(Member { raw_index, weight: 1.0 });
            }
            continue;
        }
        while bounds[g].1 <= start {
            g += 1;
        }
        let mut k = g;
        while k < bounds.len() && bounds[k].0 < end {
            let covered = end.min(bounds[k].1) - start.max(bounds[k].0);
            let weight = if covered == len { 1.0 } else { covered as f64 / len as f64 };
            groups[k].members.push(Member { raw_index, weight });
            k += 1;
        }
        start = end;
    }
    Ok(MergeMap { groups, raw_len: raw.len() })
}

/// Weighted mean of member vectors per refined token.
pub fn merge_vectors(vectors: &[Vec<f64>], map: &MergeMap) -> Result<Vec<Vec<f64>>, MergeError> {
    if vectors.len() != map.raw_len {
        return Err(MergeError::LengthMismatch { expected: map.raw_len, actual: vectors.len() });
    }
    let dim = vectors.first().map_or(0, Vec::len);
    if let Some((index, v)) = vectors.iter().enumerate().find(|(_, v)| v.len() != dim) {
        return Err(MergeError::DimensionMismatch { index, expected: dim, actual: v.len() });
    }
    Ok(map
        .groups
        .iter()
        .map(|group| {
            if let [only] = group.members.as_slice() {
                if only.weight == 1.0 {
                    return vectors[only.raw_index].clone();
                }
            }
            let total: f64 = group.members.iter().map(|m| m.weight).sum();
            let mut out = vec![0.0; dim];
            for m in &group.members {
                for (o, x) in out.iter_mut().zip(&vectors[m.raw_index]) {
                    *o += m.weight * x;
                }
            }
            out.iter_mut().for_each(|o| *o /= total);
            out
        })
        .collect())
}

/// Weighted sum of member scores per refined token. Totals are preserved.
pub fn merge_scores(scores: &[f64], map: &MergeMap) -> Result<Vec<f64>, MergeError> {
    if scores.len() != map.raw_len {
        return Err(MergeError::LengthMismatch { expected: map.raw_len, actual: scores.len() });
    }
    Ok(map.groups.iter().map(|g| g.members.iter().map(|m| m.weight * scores[m.raw_index]).sum()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weights(map: &MergeMap) -> Vec<Vec<(usize, f64)>> {
        map.groups.iter().map(|g| g.members.iter().map(|m| (m.raw_index, m.weight)).collect()).collect()
    }

    #[test]
    fn split_connection_point_merges() {
        let map = build_merge_map(&["[", "*]"], &["[*]"]).unwrap();
        assert_eq!(weights(&map), vec![vec![(0, 1.0), (1, 1.0)]]);
    }

    #[test]
    fn identical_partitions_give_identity() {
        let map = build_merge_map(&["[*]", "CC"], &["[*]", "CC"]).unwrap();
        assert_eq!(map, MergeMap::identity(&["[*]", "CC"]));
    }

    #[test]
    fn straddling_piece_is_split_by_bytes() {
        // "([" covers byte 2..4; "(" takes byte 2, "[*]" takes byte 3.
        let map = build_merge_map(&["CC", "([", "*]"], &["CC", "(", "[*]"]).unwrap();
        assert_eq!(weights(&map), vec![vec![(0, 1.0)], vec![(1, 0.5)], vec![(1, 0.5), (2, 1.0)]]);
    }

    #[test]
    fn mismatch_reports_offset() {
        let err = build_merge_map(&["CC", "O"], &["CC", "N"]).unwrap_err();
        assert_eq!(err, MergeError::TextMismatch { offset: 2 });
        let err = build_merge_map(&["CC"], &["CCC"]).unwrap_err();
        assert_eq!(err, MergeError::TextMismatch { offset: 2 });
    }

    #[test]
    fn zero_width_raw_piece_is_kept() {
        let map = build_merge_map(&["", "C", "", "O"], &["C", "O"]).unwrap();
        assert_eq!(weights(&map), vec![vec![(0, 1.0), (1, 1.0)], vec![(2, 1.0), (3, 1.0)]]);
    }

    #[test]
    fn mean_of_merged_vectors() {
        let map = build_merge_map(&["[", "*]"], &["[*]"]).unwrap();
        let out = merge_vectors(&[vec![2.0, 0.0], vec![0.0, 2.0]], &map).unwrap();
        assert_eq!(out, vec![vec![1.0, 1.0]]);
    }

    #[test]
    fn identity_map_leaves_vectors() {
        let v = vec![vec![0.1, -3.0], vec![7.5, 1e-9]];
        let map = MergeMap::identity(&["a", "b"]);
        assert_eq!(merge_vectors(&v, &map).unwrap(), v);
    }

    #[test]
    fn fractional_weighted_mean() {
        let map = MergeMap {
            groups: vec![MergeGroup {
                text: "x".into(),
                members: vec![Member { raw_index: 0, weight: 0.25 }, Member { raw_index: 1, weight: 0.75 }],
            }],
            raw_len: 2,
        };
        assert_eq!(merge_vectors(&[vec![4.0], vec![0.0]], &map).unwrap(), vec![vec![1.0]]);
    }

    #[test]
    fn vector_dimension_mismatch() {
        let map = MergeMap::identity(&["a", "b"]);
        let err = merge_vectors(&[vec![1.0], vec![1.0, 2.0]], &map).unwrap_err();
        assert!(matches!(err, MergeError::DimensionMismatch { index: 1, .. }));
    }

    #[test]
    fn scores_sum_within_groups() {
        let map = build_merge_map(&["[", "*]"], &["[*]"]).unwrap();
        assert_eq!(merge_scores(&[0.3, 0.2], &map).unwrap(), vec![0.5]);
        let ident = MergeMap::identity(&["a", "b", "c"]);
        assert_eq!(merge_scores(&[0.1, -0.2, 0.3], &ident).unwrap(), vec![0.1, -0.2, 0.3]);
    }

    #[test]
    fn split_score_halves() {
        // One raw piece "CO" shared between targets "C" and "O".
        let map = build_merge_map(&["CO"], &["C", "O"]).unwrap();
        assert_eq!(merge_scores(&[0.8], &map).unwrap(), vec![0.4, 0.4]);
    }

    #[test]
    fn score_length_mismatch() {
        let map = MergeMap::identity(&["a"]);
        assert!(matches!(merge_scores(&[1.0, 2.0], &map), Err(MergeError::LengthMismatch { .. })));
    }
}
