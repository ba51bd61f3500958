use serde::{Deserialize, Serialize};

use crate::data::Provenance;
use crate::error::{Error, Result};
use crate::nn::{argmax, class_index};

/// Selection quality against known provenance. `precision` is `None` when
/// nothing is selected but informative features exist (0/0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub selected: usize,
    pub informative: usize,
    pub hits: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

pub fn selection(selected: &[bool], provenance: &[Provenance]) -> Result<Selection> {
    if selected.len() != provenance.len() {
        return Err(Error::shape(format!("{} provenance tags", selected.len()), provenance.len()));
    }
    let informative = provenance.iter().filter(|&&p| p == Provenance::Informative).count();
    let n_sel = selected.iter().filter(|&&s| s).count();
    let hits = selected
        .iter()
        .zip(provenance)
        .filter(|(&s, &p)| s && p == Provenance::Informative)
        .count();
    let precision = match (n_sel, informative) {
        (0, 0) => Some(1.0),
        (0, _) => None,
        _ => Some(hits as f64 / n_sel as f64),
    };
    let recall = (informative > 0).then(|| hits as f64 / informative as f64);
    Ok(Selection {
        selected: n_sel,
        informative,
        hits,
        precision,
        recall,
    })
}

/// Selected informative features over all selected features.
pub fn selection_precision(selected: &[bool], provenance: &[Provenance]) -> Result<Option<f64>> {
    Ok(selection(selected, provenance)?.precision)
}

/// Coefficient of determination `1 - SS_res / SS_tot`. `None` for constant
/// targets.
pub fn r2_score(y_true: &[f64], y_pred: &[f64]) -> Result<Option<f64>> {
    if y_true.len() != y_pred.len() {
        return Err(Error::shape(format!("{} predictions", y_true.len()), y_pred.len()));
    }
    if y_true.len() < 2 {
        return Err(Error::Data("R^2 needs at least two samples".into()));
    }
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Ok(None);
    }
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p).powi(2)).sum();
    Ok(Some(1.0 - ss_res / ss_tot))
}

pub fn accuracy(preds: &[Vec<f64>], y: &[f64], classes: usize) -> Result<f64> {
    if preds.len() != y.len() || y.is_empty() {
        return Err(Error::shape(format!("{} predictions", y.len()), preds.len()));
    }
    let mut hits = 0;
    for (p, &t) in preds.iter().zip(y) {
        if argmax(p) == class_index(t, classes)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / y.len() as f64)
}

/// First round at which `series` reaches `fraction` of its final value.
pub fn rounds_to_reach(series: &[(u64, f64)], fraction: f64) -> Option<u64> {
    let &(_, last) = series.last()?;
    let target = fraction * last;
    series.iter().find(|(_, v)| *v >= target).map(|&(r, _)| r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Provenance::{Informative as I, Noisy as N};

    #[test]
    fn precision_examples() {
        let prov = [I, I, N, N];
        assert_eq!(selection_precision(&[true, true, false, false], &prov).unwrap(), Some(1.0));
        let mut prov50 = vec![I; 5];
        prov50.extend(vec![N; 45]);
        assert_eq!(selection_precision(&[true; 50], &prov50).unwrap(), Some(0.1));
        assert_eq!(selection_precision(&[false; 4], &prov).unwrap(), None);
        assert_eq!(selection_precision(&[false; 2], &[N, N]).unwrap(), Some(1.0));
        assert!(matches!(selection_precision(&[true], &prov), Err(Error::Shape(_))));
    }

    #[test]
    fn r2_examples() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(r2_score(&y, &y).unwrap(), Some(1.0));
        assert_eq!(r2_score(&y, &[2.0; 3]).unwrap(), Some(0.0));
        assert_eq!(r2_score(&y, &[1.0, 2.0, 4.0]).unwrap(), Some(0.5));
        assert_eq!(r2_score(&[4.0; 3], &y).unwrap(), None);
    }

    #[test]
    fn rounds_to_reach_fraction() {
        let s = [(1, 0.1), (2, 0.5), (3, 0.95), (4, 1.0)];
        assert_eq!(rounds_to_reach(&s, 0.9), Some(3));
        assert_eq!(rounds_to_reach(&[], 0.9), None);
    }

    proptest! {
        #[test]
        fn precision_times_selected_counts_hits(bits in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..60)) {
            let selected: Vec<bool> = bits.iter().map(|b| b.0).collect();
            let prov: Vec<Provenance> = bits.iter().map(|b| if b.1 { I } else { N }).collect();
            let s = selection(&selected, &prov).unwrap();
            if let Some(p) = s.precision {
                if s.selected > 0 {
                    prop_assert_eq!((p * s.selected as f64).round() as usize, s.hits);
                }
            }
        }
    }
}
