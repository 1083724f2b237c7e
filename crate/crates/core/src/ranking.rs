//! Rank orders of per-parameter sensitivity values.

/// Parameter indices sorted by decreasing value; equal values keep ascending
/// index order.
pub fn rank_descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));
    order
}

/// Renders a ranking with parameter names, e.g. `K_S>r_S>K_R`.
pub fn format_ranking(ranking: &[usize], names: &[String]) -> String {
    ranking.iter().map(|&i| names[i].as_str()).collect::<Vec<_>>().join(">")
}

/// Inverse of [`format_ranking`].
pub fn parse_ranking(text: &str, names: &[String]) -> Option<Vec<usize>> {
    if text.is_empty() {
        return Some(Vec::new());
    }
    text.split('>').map(|tok| names.iter().position(|n| n == tok)).collect()
}
