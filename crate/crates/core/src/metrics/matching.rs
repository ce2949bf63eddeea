use super::{MatchMode, Tolerances};
use crate::corpus::NoteEvent;

/// Distances are compared after rounding to this many decimals, so that
/// values a hair over a tolerance from float noise still count.
const DECIMALS: i32 = 7;

fn rounded(x: f64) -> f64 {
    let s = 10f64.powi(DECIMALS);
    (x * s).round() / s
}

fn admissible(r: &NoteEvent, e: &NoteEvent, mode: MatchMode, tol: &Tolerances) -> bool {
    if rounded((r.onset_s - e.onset_s).abs()) > tol.onset_s {
        return false;
    }
    if mode == MatchMode::COn {
        return true;
    }
    let cents = 100.0 * f64::from((r.pitch_midi - e.pitch_midi).abs());
    if cents > tol.pitch_cents {
        return false;
    }
    if mode == MatchMode::COnP {
        return true;
    }
    let window = tol.offset_s_min.max(tol.offset_ratio * r.duration_s());
    rounded((r.offset_s - e.offset_s).abs()) <= window
}

/// Maximum-cardinality matching of reference to estimated notes over
/// admissible pairs; returns `(ref_index, est_index)` sorted by reference.
pub fn match_notes(reference: &[NoteEvent], estimate: &[NoteEvent], mode: MatchMode, tol: &Tolerances) -> Vec<(usize, usize)> {
    let adj: Vec<Vec<usize>> = reference
        .iter()
        .map(|r| {
            (0..estimate.len())
                .filter(|&j| admissible(r, &estimate[j], mode, tol))
                .collect()
        })
        .collect();
    max_bipartite_matching(&adj, estimate.len())
}

/// Hopcroft–Karp on a left-to-right adjacency list.
pub fn max_bipartite_matching(adj: &[Vec<usize>], n_right: usize) -> Vec<(usize, usize)> {
    const NIL: usize = usize::MAX;
    let n_left = adj.len();
    let mut match_l = vec![NIL; n_left];
    let mut match_r = vec![NIL; n_right];
    let mut dist = vec![0usize; n_left];

    loop {
        // layered BFS from free left vertices
        let mut queue = std::collections::VecDeque::new();
        for u in 0..n_left {
            if match_l[u] == NIL {
                dist[u] = 0;
                queue.push_back(u);
            } else {
                dist[u] = usize::MAX;
            }
        }
        let mut found = false;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                let w = match_r[v];
                if w == NIL {
                    found = true;
                } else if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        if !found {
            break;
        }
        for u in 0..n_left {
            if match_l[u] == NIL {
                augment(u, adj, &mut match_l, &mut match_r, &mut dist);
            }
        }
    }
    (0..n_left)
        .filter(|&u| match_l[u] != NIL)
        .map(|u| (u, match_l[u]))
        .collect()
}

fn augment(u: usize, adj: &[Vec<usize>], match_l: &mut [usize], match_r: &mut [usize], dist: &mut [usize]) -> bool {
    for &v in &adj[u] {
        let w = match_r[v];
        let ok = w == usize::MAX || (dist[w] == dist[u] + 1 && augment(w, adj, match_l, match_r, dist));
        if ok {
            match_l[u] = v;
            match_r[v] = u;
            return true;
        }
    }
    dist[u] = usize::MAX;
    false
}
