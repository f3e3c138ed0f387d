use crate::grid::{same_grid, LabelMap};
use crate::{Error, Result};

/// Per-label Dice scores; `None` marks labels absent from both maps.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DiceScores {
    pub per_label: Vec<(i32, Option<f64>)>,
    /// Mean over labels present in at least one map (1.0 when none are).
    pub mean: f64,
}

pub fn dice(a: &LabelMap, b: &LabelMap, labels: &[i32]) -> Result<DiceScores> {
    same_grid(a.shape(), b.shape(), "dice")?;
    if labels.is_empty() {
        return Err(Error::Config("dice needs at least one label".into()));
    }
    let mut per_label = Vec::with_capacity(labels.len());
    let (mut total, mut counted) = (0.0, 0usize);
    for &k in labels {
        let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
        for (&x, &y) in a.data().iter().zip(b.data()) {
            let (ia, ib) = (x == k, y == k);
            na += ia as usize;
            nb += ib as usize;
            both += (ia && ib) as usize;
        }
        let score = (na + nb > 0).then(|| 2.0 * both as f64 / (na + nb) as f64);
        if let Some(s) = score {
            total += s;
            counted += 1;
        }
        per_label.push((k, score));
    }
    let mean = if counted == 0 {
        1.0
    } else {
        total / counted as f64
    };
    Ok(DiceScores { per_label, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;

    fn map(rows: &[&[i32]]) -> LabelMap {
        let w = rows[0].len();
        let data: Vec<i32> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        LabelMap::from_values(GridShape::new(vec![rows.len(), w]).unwrap(), data).unwrap()
    }

    #[test]
    fn identical_maps_score_one() {
        let a = map(&[&[0, 1, 1], &[2, 2, 0]]);
        let d = dice(&a, &a, &[1, 2]).unwrap();
        assert_eq!(d.per_label, vec![(1, Some(1.0)), (2, Some(1.0))]);
        assert_eq!(d.mean, 1.0);
    }

    #[test]
    fn disjoint_regions_score_zero() {
        let a = map(&[&[1, 1, 0, 0]]);
        let b = map(&[&[0, 0, 1, 1]]);
        assert_eq!(dice(&a, &b, &[1]).unwrap().mean, 0.0);
    }

    #[test]
    fn half_overlap() {
        // two 8-voxel regions sharing 4 voxels
        let a = map(&[&[1, 1, 1, 1, 0, 0], &[1, 1, 1, 1, 0, 0]]);
        let b = map(&[&[0, 0, 1, 1, 1, 1], &[0, 0, 1, 1, 1, 1]]);
        assert_eq!(dice(&a, &b, &[1]).unwrap().mean, 0.5);
    }

    #[test]
    fn absent_labels_are_excluded_from_the_mean() {
        let a = map(&[&[1, 0]]);
        let d = dice(&a, &a, &[1, 3]).unwrap();
        assert_eq!(d.per_label[1], (3, None));
        assert_eq!(d.mean, 1.0);
        assert!(matches!(dice(&a, &a, &[]), Err(Error::Config(_))));
    }
}
