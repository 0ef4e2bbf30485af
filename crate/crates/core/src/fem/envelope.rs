//! Envelope (variable band) Cholesky factorization for the reduced stiffness
//! system, with a reverse Cuthill-McKee vertex ordering to keep the envelope tight.

use std::collections::VecDeque;

use crate::{Error, Result};

/// Reverse Cuthill-McKee order of the vertices flagged in `active`.
///
/// `adjacency` lists neighbours of every vertex; inactive vertices are skipped.
/// Each connected component starts from a pseudo-peripheral vertex, ties are
/// broken by vertex index so the order is deterministic.
pub fn reverse_cuthill_mckee(adjacency: &[Vec<usize>], active: &[bool]) -> Vec<usize> {
    let n = adjacency.len();
    let degree: Vec<usize> = (0..n)
        .map(|v| adjacency[v].iter().filter(|&&w| active[w]).count())
        .collect();
    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    loop {
        let seed = (0..n)
            .filter(|&v| active[v] && !visited[v])
            .min_by_key(|&v| (degree[v], v));
        let Some(seed) = seed else { break };
        let start = pseudo_peripheral(adjacency, active, &degree, seed);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adjacency[v]
                .iter()
                .copied()
                .filter(|&w| active[w] && !visited[w])
                .collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(adjacency: &[Vec<usize>], active: &[bool], start: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; adjacency.len()];
    seen[start] = true;
    let mut levels = vec![vec![start]];
    loop {
        let mut next = Vec::new();
        for &v in levels.last().unwrap() {
            for &w in &adjacency[v] {
                if active[w] && !seen[w] {
                    seen[w] = true;
                    next.push(w);
                }
            }
        }
        if next.is_empty() {
            return levels;
        }
        levels.push(next);
    }
}

fn pseudo_peripheral(adjacency: &[Vec<usize>], active: &[bool], degree: &[usize], seed: usize) -> usize {
    let mut current = seed;
    let mut depth = bfs_levels(adjacency, active, current).len();
    loop {
        let levels = bfs_levels(adjacency, active, current);
        let candidate = *levels
            .last()
            .unwrap()
            .iter()
            .min_by_key(|&&w| (degree[w], w))
            .unwrap();
        let candidate_depth = bfs_levels(adjacency, active, candidate).len();
        if candidate_depth <= depth {
            return current;
        }
        current = candidate;
        depth = candidate_depth;
    }
}

/// Lower-triangle envelope layout: row `i` stores columns `first[i]..=i`.
#[derive(Debug, Clone)]
pub struct Envelope {
    first: Vec<usize>,
    start: Vec<usize>,
}

impl Envelope {
    pub fn new(first: Vec<usize>) -> Self {
        let mut start = Vec::with_capacity(first.len() + 1);
        let mut offset = 0;
        start.push(0);
        for (i, &f) in first.iter().enumerate() {
            debug_assert!(f <= i);
            offset += i - f + 1;
            start.push(offset);
        }
        Self { first, start }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn len(&self) -> usize {
        *self.start.last().unwrap()
    }

    pub fn is_empty(&self) -> bool {
        self.dim() == 0
    }

    /// Storage offset of `(row, col)` with `col <= row`, if inside the envelope.
    pub fn offset(&self, row: usize, col: usize) -> Option<usize> {
        debug_assert!(col <= row);
        (col >= self.first[row]).then(|| self.start[row] + col - self.first[row])
    }

    /// Factorizes `values` (the lower envelope of an SPD matrix) in place into
    /// its Cholesky factor `L`.
    pub fn factorize(&self, values: &mut [f64]) -> Result<()> {
        debug_assert_eq!(values.len(), self.len());
        for i in 0..self.dim() {
            let fi = self.first[i];
            let si = self.start[i];
            for j in fi..i {
                let fj = self.first[j];
                let sj = self.start[j];
                let k0 = fi.max(fj);
                let (head, row_i) = values.split_at_mut(si);
                let dot = dot(&row_i[k0 - fi..j - fi], &head[sj + k0 - fj..sj + j - fj]);
                let diag_j = head[sj + j - fj];
                row_i[j - fi] = (row_i[j - fi] - dot) / diag_j;
            }
            let row = &mut values[si..si + i - fi + 1];
            let a_ii = row[i - fi];
            let pivot = a_ii - dot(&row[..i - fi], &row[..i - fi]);
            if !(pivot > 1e-13 * a_ii.abs()) || !pivot.is_finite() {
                return Err(Error::Singular(format!(
                    "non-positive pivot {pivot:e} at reduced row {i} (diagonal {a_ii:e}); \
                     the constraints may not remove all rigid-body modes"
                )));
            }
            row[i - fi] = pivot.sqrt();
        }
        Ok(())
    }

    /// Solves `L L^T x = b` in place given a factor produced by [`Envelope::factorize`].
    pub fn solve_in_place(&self, factor: &[f64], b: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            let row = &factor[si..si + i - fi + 1];
            let s = b[i] - dot(&row[..i - fi], &b[fi..i]);
            b[i] = s / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let si = self.start[i];
            let row = &factor[si..si + i - fi + 1];
            let x = b[i] / row[i - fi];
            b[i] = x;
            for (bj, lij) in b[fi..i].iter_mut().zip(&row[..i - fi]) {
                *bj -= lij * x;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
