use combent::comb::KSubset;

use crate::error::{usage, CliResult};

/// Which modes of a stored matrix to test.
#[derive(Debug, Clone, Default)]
pub struct ModeSelection {
    /// Explicit comb indices.
    pub modes: Option<Vec<i64>>,
    pub subset: Option<KSubset>,
    /// Keep the `count` modes closest to the comb centre.
    pub count: Option<usize>,
}

/// Positions (ascending) of the selected modes among `available` comb indices.
pub fn select_modes(available: &[i64], sel: &ModeSelection) -> CliResult<Vec<usize>> {
    let mut positions = if let Some(modes) = &sel.modes {
        if sel.subset.is_some() || sel.count.is_some() {
            return usage("--modes cannot be combined with --subset or --count");
        }
        let mut out = Vec::with_capacity(modes.len());
        for n in modes {
            match available.iter().position(|a| a == n) {
                Some(p) if !out.contains(&p) => out.push(p),
                Some(_) => return usage(format!("mode {n} listed twice")),
                None => return usage(format!("mode {n} is not in the input (available: {available:?})")),
            }
        }
        out
    } else {
        let mut candidates: Vec<(usize, i64)> = available
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, n)| sel.subset.is_none_or(|s| s.contains(*n)))
            .collect();
        candidates.sort_by_key(|(_, n)| (n.abs(), *n));
        let take = sel.count.unwrap_or(candidates.len());
        if take > candidates.len() {
            return usage(format!(
                "asked for {take} modes but the selection only has {}",
                candidates.len()
            ));
        }
        candidates.truncate(take);
        candidates.into_iter().map(|(p, _)| p).collect()
    };
    if positions.is_empty() {
        return usage("mode selection is empty");
    }
    positions.sort_unstable();
    Ok(positions)
}
