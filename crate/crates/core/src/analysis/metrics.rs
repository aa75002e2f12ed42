use crate::error::{Error, Result};

/// Mann–Whitney AUC; tied scores count one half.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::data(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(k) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {k}")));
    }
    let n_pos = labels.iter().filter(|&&y| y > 0.5).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks over tie groups, 1-based
    let mut rank_sum_pos = 0.0;
    let mut k = 0;
    while k < order.len() {
        let mut end = k + 1;
        while end < order.len() && scores[order[end]] == scores[order[k]] {
            end += 1;
        }
        let avg = (k + 1 + end) as f64 / 2.0;
        rank_sum_pos += order[k..end].iter().filter(|&&i| labels[i] > 0.5).count() as f64 * avg;
        k = end;
    }
    let np = n_pos as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Kendall tau-b between two paired score lists.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::data("kendall_tau: lists differ in length"));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::UndefinedMetric("Kendall tau needs at least two pairs".into()));
    }
    let (mut conc, mut disc, mut ties_a, mut ties_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let da = a[i].partial_cmp(&a[j]).ok_or_else(|| Error::NonFinite("kendall_tau input".into()))?;
            let db = b[i].partial_cmp(&b[j]).ok_or_else(|| Error::NonFinite("kendall_tau input".into()))?;
            use std::cmp::Ordering::Equal;
            match (da, db) {
                (Equal, Equal) => {}
                (Equal, _) => ties_a += 1,
                (_, Equal) => ties_b += 1,
                (x, y) if x == y => conc += 1,
                _ => disc += 1,
            }
        }
    }
    let n0 = (conc + disc) as f64;
    let denom = ((n0 + ties_a as f64) * (n0 + ties_b as f64)).sqrt();
    if denom == 0.0 {
        return Err(Error::UndefinedMetric("Kendall tau undefined: a ranking is constant".into()));
    }
    Ok((conc - disc) as f64 / denom)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0.0, 0.0, 1.0, 1.0]).unwrap(), 1.0);
        assert!((auc(&[0.1, 0.4, 0.35, 0.8], &[0.0, 0.0, 1.0, 1.0]).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(auc(&[0.3; 6], &[0.0, 1.0, 0.0, 1.0, 1.0, 0.0]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[1.0, 1.0]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn kendall_examples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau(&a, &a).unwrap(), 1.0);
        assert_eq!(kendall_tau(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        let t = kendall_tau(&a, &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((t - 4.0 / 6.0).abs() < 1e-15);
        assert!(kendall_tau(&[1.0], &[1.0]).is_err());
        let two = kendall_tau(&[0.1, 0.2], &[0.9, 0.3]).unwrap();
        assert_eq!(two, -1.0);
    }

    fn brute_auc(s: &[f64], y: &[f64]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if y[i] > 0.5 && y[j] < 0.5 {
                    den += 1.0;
                    num += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
                }
            }
        }
        num / den
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_and_is_rank_invariant(
            v in proptest::collection::vec((0u8..20, any::<bool>()), 2..60)
        ) {
            let s: Vec<f64> = v.iter().map(|p| p.0 as f64 / 20.0).collect();
            let y: Vec<f64> = v.iter().map(|p| p.1 as u8 as f64).collect();
            prop_assume!(y.iter().any(|&l| l > 0.5) && y.iter().any(|&l| l < 0.5));
            let a = auc(&s, &y).unwrap();
            prop_assert!((a - brute_auc(&s, &y)).abs() < 1e-12);
            let t: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
            prop_assert!((auc(&t, &y).unwrap() - a).abs() < 1e-12);
        }

        #[test]
        fn kendall_is_symmetric(v in proptest::collection::vec((0u8..6, 0u8..6), 2..30)) {
            let a: Vec<f64> = v.iter().map(|p| p.0 as f64).collect();
            let b: Vec<f64> = v.iter().map(|p| p.1 as f64).collect();
            match (kendall_tau(&a, &b), kendall_tau(&b, &a)) {
                (Ok(x), Ok(y)) => prop_assert!((x - y).abs() < 1e-15 && x.abs() <= 1.0 + 1e-12),
                (Err(_), Err(_)) => {}
                other => prop_assert!(false, "{:?}", other),
            }
        }
    }
}
