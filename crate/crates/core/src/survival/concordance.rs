use crate::data::SurvivalOutcome;
use crate::error::{Error, Result};

/// Harrell's C-index with the convention that a higher score predicts an
/// earlier event.
///
/// A pair is comparable when the shorter time is an event, or when both
/// times are equal and only the first is an event. Equal times with two
/// events are not comparable. Tied scores count one half.
pub fn concordance_index(risk: &[f64], outcomes: &[SurvivalOutcome]) -> Result<f64> {
    if risk.len() != outcomes.len() {
        return Err(Error::shape(
            "concordance_index",
            format!("{} scores vs {} outcomes", risk.len(), outcomes.len()),
        ));
    }
    let mut order: Vec<usize> = (0..risk.len()).collect();
    order.sort_by(|&a, &b| outcomes[a].time.total_cmp(&outcomes[b].time));
    let (mut concordant, mut comparable) = (0.0, 0u64);
    for (pos, &i) in order.iter().enumerate() {
        let oi = &outcomes[i];
        if !oi.event {
            continue;
        }
        for &j in &order[pos + 1..] {
            let oj = &outcomes[j];
            if oj.time == oi.time && oj.event {
                continue;
            }
            comparable += 1;
            if risk[i] > risk[j] {
                concordant += 1.0;
            } else if risk[i] == risk[j] {
                concordant += 0.5;
            }
        }
        // Earlier entries with the same time were skipped by the forward scan.
        for &j in order[..pos].iter().rev() {
            let oj = &outcomes[j];
            if oj.time != oi.time {
                break;
            }
            if oj.event {
                continue;
            }
            comparable += 1;
            if risk[i] > risk[j] {
                concordant += 1.0;
            } else if risk[i] == risk[j] {
                concordant += 0.5;
            }
        }
    }
    if comparable == 0 {
        return Err(Error::invalid("no comparable pairs"));
    }
    Ok(concordant / comparable as f64)
}
