use serde::{Deserialize, Serialize};

use crate::data::AttributeTable;
use crate::error::{invalid, Error, Result};

/// One value per attribute; attributes without enough positive samples are
/// listed in `excluded` instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeStats {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub excluded: Vec<String>,
}

/// Population standard deviation.
pub fn population_std(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

fn check_rows(table: &AttributeTable, n: usize) -> Result<()> {
    if table.rows() != n {
        return Err(Error::Attributes(format!("{} attribute rows for {n} samples", table.rows())));
    }
    Ok(())
}

/// Mean retrieval error over the positive queries of each attribute.
pub fn per_attribute_ivom(errors: &[f64], table: &AttributeTable) -> Result<AttributeStats> {
    check_rows(table, errors.len())?;
    let mut out = AttributeStats { names: Vec::new(), values: Vec::new(), excluded: Vec::new() };
    for (c, name) in table.names().iter().enumerate() {
        let pos = table.positives(c);
        if pos.is_empty() {
            out.excluded.push(name.clone());
            continue;
        }
        out.names.push(name.clone());
        out.values.push(pos.iter().map(|&i| errors[i]).sum::<f64>() / pos.len() as f64);
    }
    Ok(out)
}

/// Per attribute: the mean over feature dimensions of the population std of
/// that dimension among positive samples.
pub fn attribute_variance(features: &[f32], dim: usize, table: &AttributeTable) -> Result<AttributeStats> {
    if dim == 0 || !features.len().is_multiple_of(dim) {
        return Err(invalid("features do not divide into rows"));
    }
    check_rows(table, features.len() / dim)?;
    let mut out = AttributeStats { names: Vec::new(), values: Vec::new(), excluded: Vec::new() };
    for (c, name) in table.names().iter().enumerate() {
        let pos = table.positives(c);
        if pos.len() < 2 {
            out.excluded.push(name.clone());
            continue;
        }
        let spread: f64 = (0..dim)
            .map(|j| population_std(&pos.iter().map(|&i| features[i * dim + j] as f64).collect::<Vec<_>>()))
            .sum();
        out.names.push(name.clone());
        out.values.push(spread / dim as f64);
    }
    Ok(out)
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    (cov / (va * vb).sqrt()).clamp(-1.0, 1.0)
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|x| *x == v[0])
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(invalid("spearman needs two equal-length vectors of length >= 2"));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("spearman input".into()));
    }
    if is_constant(a) || is_constant(b) {
        return Err(invalid("rank correlation is undefined for a constant vector"));
    }
    Ok(pearson(&average_ranks(a), &average_ranks(b)))
}

fn zscore(v: &[f64]) -> Result<Vec<f64>> {
    let sd = population_std(v);
    if !(sd > 0.0) {
        return Err(invalid("cannot normalise a constant vector"));
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    Ok(v.iter().map(|x| (x - mean) / sd).collect())
}

/// The joint difficulty variable: normalised variance minus normalised count.
pub fn joint_difficulty(counts: &[f64], variances: &[f64]) -> Result<Vec<f64>> {
    let (c, v) = (zscore(counts)?, zscore(variances)?);
    Ok(c.iter().zip(&v).map(|(c, v)| v - c).collect())
}

/// Rank correlation between per-attribute difficulty (few samples, high
/// feature spread) and per-attribute retrieval error.
pub fn bias_correlation(counts: &[f64], variances: &[f64], ivoms: &[f64]) -> Result<f64> {
    if counts.len() != variances.len() || counts.len() != ivoms.len() {
        return Err(invalid("counts, variances and ivoms must have equal length"));
    }
    if counts.len() < 3 {
        return Err(invalid("bias correlation needs at least 3 attributes"));
    }
    spearman(&joint_difficulty(counts, variances)?, ivoms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_spearman(a: &[f64], b: &[f64]) -> f64 {
        // Rank of x = 1 + (#smaller) + (#equal - 1) / 2.
        let rank = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .map(|x| {
                    let less = v.iter().filter(|y| *y < x).count() as f64;
                    let eq = v.iter().filter(|y| *y == x).count() as f64;
                    1.0 + less + (eq - 1.0) / 2.0
                })
                .collect()
        };
        let (ra, rb) = (rank(a), rank(b));
        let n = a.len() as f64;
        let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
        let mut num = 0.0;
        let (mut da, mut db) = (0.0, 0.0);
        for i in 0..a.len() {
            num += (ra[i] - ma) * (rb[i] - mb);
            da += (ra[i] - ma).powi(2);
            db += (rb[i] - mb).powi(2);
        }
        num / (da * db).sqrt()
    }

    #[test]
    fn two_point_std() {
        let t = AttributeTable::new(vec!["a".into(), "b".into(), "none".into()], vec![vec![true, false, false], vec![false, true, false]]).unwrap();
        let s = per_attribute_ivom(&[0.2, 0.4], &t).unwrap();
        assert_eq!(s.excluded, vec!["none".to_string()]);
        assert!((population_std(&s.values) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn identical_queries_have_zero_spread() {
        let t = AttributeTable::new(vec!["a".into(), "b".into()], vec![vec![true, true]; 5]).unwrap();
        let s = per_attribute_ivom(&[0.3; 5], &t).unwrap();
        assert_eq!(population_std(&s.values), 0.0);
    }

    #[test]
    fn variance_examples() {
        let t = AttributeTable::new(vec!["a".into(), "solo".into()], vec![vec![true, true], vec![true, false]]).unwrap();
        let s = attribute_variance(&[0.0, 0.0, 2.0, 2.0], 2, &t).unwrap();
        assert_eq!(s.values, vec![1.0]);
        assert_eq!(s.excluded, vec!["solo".to_string()]);
        let same = attribute_variance(&[1.5, -2.0, 1.5, -2.0], 2, &t).unwrap();
        assert_eq!(same.values, vec![0.0]);
    }

    #[test]
    fn monotone_fixtures() {
        let counts = [100.0, 80.0, 60.0, 40.0, 20.0];
        let vars = [0.01, 0.02, 0.03, 0.04, 0.05];
        let ivoms = [0.1, 0.2, 0.3, 0.4, 0.5];
        assert!((bias_correlation(&counts, &vars, &ivoms).unwrap() - 1.0).abs() < 1e-12);
        let rev: Vec<f64> = ivoms.iter().rev().copied().collect();
        assert!((bias_correlation(&counts, &vars, &rev).unwrap() + 1.0).abs() < 1e-12);
        assert!(bias_correlation(&[1.0; 5], &vars, &ivoms).is_err());
        assert!(bias_correlation(&counts, &vars, &[0.2; 5]).is_err());
        assert!(bias_correlation(&counts[..2], &vars[..2], &ivoms[..2]).is_err());
    }

    proptest! {
        #[test]
        fn ties_match_brute_force(a in prop::collection::vec(0u8..5, 3..30), b in prop::collection::vec(0u8..5, 3..30)) {
            let n = a.len().min(b.len());
            let a: Vec<f64> = a[..n].iter().map(|&x| x as f64).collect();
            let b: Vec<f64> = b[..n].iter().map(|&x| x as f64).collect();
            match spearman(&a, &b) {
                Ok(r) => prop_assert!((r - brute_spearman(&a, &b)).abs() < 1e-12),
                Err(_) => prop_assert!(is_constant(&a) || is_constant(&b)),
            }
        }

        #[test]
        fn bounded_and_rank_invariant(c in prop::collection::vec(1.0f64..100.0, 4..12), seed in any::<u64>()) {
            let n = c.len();
            let v: Vec<f64> = (0..n).map(|i| ((i as u64 * 7919 + seed) % 97) as f64 / 10.0).collect();
            let iv: Vec<f64> = (0..n).map(|i| ((i as u64 * 104729 + seed / 3) % 89) as f64 / 50.0).collect();
            if let Ok(r) = bias_correlation(&c, &v, &iv) {
                prop_assert!((-1.0..=1.0).contains(&r));
                let squashed: Vec<f64> = iv.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
                prop_assert!((bias_correlation(&c, &v, &squashed).unwrap() - r).abs() < 1e-12);
            }
        }
    }
}
