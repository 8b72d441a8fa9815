use crate::targets::MatchAssignment;

/// Background boxes with the highest classification loss, at most
/// `floor(neg_pos_ratio * N)` of them, ordered by descending loss (ties go to
/// the lower box index).
pub fn hard_negative_mining(
    per_box_cls_loss: &[f64],
    assignment: &MatchAssignment,
    neg_pos_ratio: f64,
) -> Vec<usize> {
    let quota = (neg_pos_ratio * assignment.n_positive as f64).floor() as usize;
    if quota == 0 {
        return Vec::new();
    }
    let mut candidates: Vec<usize> = (0..per_box_cls_loss.len())
        .filter(|&i| assignment.is_background(i))
        .collect();
    candidates.sort_by(|&a, &b| {
        per_box_cls_loss[b]
            .total_cmp(&per_box_cls_loss[a])
            .then(a.cmp(&b))
    });
    candidates.truncate(quota);
    candidates
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::Matched;

    fn assignment(n: usize, positives: &[usize]) -> MatchAssignment {
        let mut entries = vec![None; n];
        for &p in positives {
            entries[p] = Some(Matched {
                gt: 0,
                iou: 0.9,
                forced: false,
            });
        }
        MatchAssignment {
            entries,
            n_positive: positives.len(),
        }
    }

    #[test]
    fn quota_is_ratio_times_positives() {
        let losses: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let sel = hard_negative_mining(&losses, &assignment(20, &[19, 3]), 3.0);
        assert_eq!(sel, vec![18, 17, 16, 15, 14, 13]);
    }

    #[test]
    fn saturates_when_few_background() {
        let losses = vec![1.0, 2.0, 3.0, 4.0];
        let sel = hard_negative_mining(&losses, &assignment(4, &[0, 1]), 3.0);
        assert_eq!(sel, vec![3, 2]);
    }

    #[test]
    fn no_positives_no_negatives() {
        let losses = vec![1.0; 5];
        assert!(hard_negative_mining(&losses, &assignment(5, &[]), 3.0).is_empty());
    }

    #[test]
    fn ties_prefer_lower_index() {
        let losses = vec![1.0; 6];
        let sel = hard_negative_mining(&losses, &assignment(6, &[0]), 2.0);
        assert_eq!(sel, vec![1, 2]);
    }
}
