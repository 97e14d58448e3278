use super::Problem;
use rayon::prelude::*;

/// Default normalized edit-distance threshold for replica removal.
pub const DEFAULT_DEDUP_THRESHOLD: f64 = 0.1;

/// Character-level Levenshtein distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    bounded(&a, &b, usize::MAX).expect("unbounded")
}

/// Levenshtein distance if it is at most `limit`, computed on a diagonal band.
fn bounded(a: &[char], b: &[char], limit: usize) -> Option<usize> {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    if a.len() - b.len() > limit {
        return None;
    }
    if b.is_empty() {
        return Some(a.len());
    }
    let band = limit.min(a.len());
    let inf = usize::MAX / 2;
    let mut prev = vec![inf; b.len() + 1];
    let mut cur = vec![inf; b.len() + 1];
    for (j, p) in prev.iter_mut().enumerate().take(band.min(b.len()) + 1) {
        *p = j;
    }
    for i in 1..=a.len() {
        let lo = i.saturating_sub(band).max(1);
        let hi = (i + band).min(b.len());
        cur.iter_mut().for_each(|c| *c = inf);
        if i <= band {
            cur[0] = i;
        }
        let mut row_min = cur[0];
        for j in lo..=hi {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            let v = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
            cur[j] = v;
            row_min = row_min.min(v);
        }
        if row_min > limit {
            return None;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let d = prev[b.len()];
    (d <= limit).then_some(d)
}

/// Edit distance divided by the longer string's length in characters.
pub fn normalized_distance(a: &str, b: &str) -> f64 {
    let n = a.chars().count().max(b.chars().count());
    if n == 0 {
        return 0.0;
    }
    levenshtein(a, b) as f64 / n as f64
}

fn near_duplicate(a: &[char], b: &[char], threshold: f64) -> bool {
    let n = a.len().max(b.len());
    if n == 0 {
        return true;
    }
    let limit = (threshold * n as f64).floor() as usize;
    bounded(a, b, limit).is_some_and(|d| d as f64 / n as f64 <= threshold)
}

/// Drops every training problem whose question is within `threshold`
/// normalized edit distance of some held-out question. Order is preserved.
pub fn levenshtein_dedup(heldout: &[Problem], train: &[Problem], threshold: f64) -> Vec<Problem> {
    assert!((0.0..=1.0).contains(&threshold), "threshold must lie in [0, 1]");
    let held: Vec<Vec<char>> = heldout.iter().map(|p| p.question.chars().collect()).collect();
    let keep: Vec<bool> = train
        .par_iter()
        .map(|p| {
            let q: Vec<char> = p.question.chars().collect();
            !held.iter().any(|h| near_duplicate(h, &q, threshold))
        })
        .collect();
    train.iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| p.clone()).collect()
}
