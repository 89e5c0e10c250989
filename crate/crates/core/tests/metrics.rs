//! Recognition metrics, subject-wise folds and the rank-sum test, each against
//! an oracle written from the definitions rather than from the confusion matrix.

use fdp::eval::{
    confusion, loso_split, macro_f1, uar, war, weighted_f1, wilcoxon_rank_sum, ConfusionCounts, Metrics,
    Sidedness, F1Average,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-sample oracle: recall and F1 computed by scanning label/prediction pairs.
struct Oracle {
    recall: Vec<Option<f64>>,
    f1: Vec<f64>,
    support: Vec<usize>,
    accuracy: f64,
}

fn oracle(labels: &[usize], preds: &[usize], classes: usize) -> Oracle {
    let mut recall = Vec::new();
    let mut f1 = Vec::new();
    let mut support = Vec::new();
    for j in 0..classes {
        let pairs = labels.iter().zip(preds);
        let tp = pairs.clone().filter(|&(&l, &p)| l == j && p == j).count() as f64;
        let actual = labels.iter().filter(|&&l| l == j).count();
        let predicted = preds.iter().filter(|&&p| p == j).count() as f64;
        support.push(actual);
        recall.push((actual > 0).then(|| tp / actual as f64));
        // F1 = 2TP / (2TP + FP + FN), and 0 when TP = 0.
        f1.push(if tp == 0.0 { 0.0 } else { 2.0 * tp / (predicted + actual as f64) });
    }
    let hits = labels.iter().zip(preds).filter(|(l, p)| l == p).count();
    Oracle {
        recall,
        f1,
        support,
        accuracy: hits as f64 / labels.len() as f64,
    }
}

/// Random confusion matrix expanded into explicit samples, in shuffled order.
fn random_samples(rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>, usize) {
    let classes = rng.gen_range(2..7);
    let mut labels = Vec::new();
    let mut preds = Vec::new();
    for t in 0..classes {
        for p in 0..classes {
            let n = if t == p { rng.gen_range(0..9) } else { rng.gen_range(0..4) };
            for _ in 0..n {
                labels.push(t);
                preds.push(p);
            }
        }
    }
    if labels.is_empty() {
        labels.push(0);
        preds.push(0);
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(rng);
    let labels = order.iter().map(|&i| labels[i]).collect();
    let preds = order.iter().map(|&i| preds[i]).collect();
    (labels, preds, classes)
}

#[test]
fn two_class_worked_example() {
    let c = ConfusionCounts::from_matrix(vec![vec![3, 1], vec![2, 4]]).unwrap();
    assert!((war(&c).unwrap() - 0.7).abs() < 1e-12);
    assert!((uar(&c).unwrap() - 0.708_333_333_333).abs() < 1e-9);
    assert!((macro_f1(&c) - 0.6970).abs() < 1e-4);
}

#[test]
fn perfect_empty_and_degenerate_cases() {
    let perfect = confusion(&[0, 1, 2, 2], &[0, 1, 2, 2], 3).unwrap();
    let m = Metrics::from_counts(&perfect, F1Average::Macro).unwrap();
    assert_eq!((m.accuracy, m.f1, m.uar, m.war), (1.0, 1.0, Some(1.0), 1.0));

    assert!(war(&ConfusionCounts::zeros(3)).is_err());

    // A class with no samples has no recall, so UAR is undefined but WAR is not.
    let missing = confusion(&[0, 0, 1], &[0, 0, 1], 3).unwrap();
    let m = Metrics::from_counts(&missing, F1Average::Macro).unwrap();
    assert_eq!(m.uar, None);
    assert_eq!(m.war, 1.0);

    // Everything predicted as one class.
    let constant = confusion(&[0; 6], &[0, 0, 1, 1, 2, 2], 3).unwrap();
    assert!((uar(&constant).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    assert!((macro_f1(&constant) - 0.5 / 3.0).abs() < 1e-12);
}

#[test]
fn hundred_random_matrices_match_the_sample_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let (labels, preds, classes) = random_samples(&mut rng);
        let c = confusion(&preds, &labels, classes).unwrap();
        let o = oracle(&labels, &preds, classes);

        assert!((war(&c).unwrap() - o.accuracy).abs() < 1e-12);
        match o.recall.iter().copied().collect::<Option<Vec<f64>>>() {
            Some(r) => {
                let want = r.iter().sum::<f64>() / classes as f64;
                assert!((uar(&c).unwrap() - want).abs() < 1e-12);
            }
            None => assert!(uar(&c).is_err()),
        }
        let macro_want = o.f1.iter().sum::<f64>() / classes as f64;
        assert!((macro_f1(&c) - macro_want).abs() < 1e-12);
        let n: usize = o.support.iter().sum();
        let weighted_want = o.f1.iter().zip(&o.support).map(|(f, &s)| f * s as f64).sum::<f64>() / n as f64;
        assert!((weighted_f1(&c) - weighted_want).abs() < 1e-12);
    }
}

#[test]
fn balanced_matrices_have_equal_uar_and_war() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let classes = rng.gen_range(2..6);
        let per_class = rng.gen_range(1..8);
        let mut labels = Vec::new();
        let mut preds = Vec::new();
        for t in 0..classes {
            for _ in 0..per_class {
                labels.push(t);
                preds.push(rng.gen_range(0..classes));
            }
        }
        let c = confusion(&preds, &labels, classes).unwrap();
        assert!((uar(&c).unwrap() - war(&c).unwrap()).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn metrics_ignore_class_relabeling(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (labels, preds, classes) = random_samples(&mut rng);
        let mut perm: Vec<usize> = (0..classes).collect();
        perm.shuffle(&mut rng);
        let relabel = |v: &[usize]| v.iter().map(|&x| perm[x]).collect::<Vec<_>>();
        let a = confusion(&preds, &labels, classes).unwrap();
        let b = confusion(&relabel(&preds), &relabel(&labels), classes).unwrap();
        prop_assert!((war(&a).unwrap() - war(&b).unwrap()).abs() < 1e-12);
        prop_assert_eq!(uar(&a).is_ok(), uar(&b).is_ok());
        if let (Ok(x), Ok(y)) = (uar(&a), uar(&b)) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        prop_assert!((macro_f1(&a) - macro_f1(&b)).abs() < 1e-12);
        prop_assert!((weighted_f1(&a) - weighted_f1(&b)).abs() < 1e-12);
    }

    #[test]
    fn folds_do_not_depend_on_row_order(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<(String, String)> = (0..rng.gen_range(4..30))
            .map(|i| (format!("c{i:02}"), format!("s{}", rng.gen_range(0..5))))
            .collect();
        prop_assume!(rows.iter().map(|r| &r.1).collect::<std::collections::BTreeSet<_>>().len() >= 2);
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut rng);
        let keyed = |rows: &[(String, String)]| {
            let plan = loso_split(rows.iter().map(|r| r.1.as_str())).unwrap();
            plan.folds
                .iter()
                .map(|f| {
                    let ids = |ix: &[usize]| {
                        let mut v: Vec<&str> = ix.iter().map(|&i| rows[i].0.as_str()).collect();
                        v.sort();
                        v.into_iter().map(String::from).collect::<Vec<_>>()
                    };
                    (f.subject.clone(), ids(&f.test), ids(&f.train))
                })
                .collect::<Vec<_>>()
        };
        let a = keyed(&rows);
        prop_assert_eq!(&a, &keyed(&shuffled));
        let subjects: Vec<&String> = a.iter().map(|f| &f.0).collect();
        prop_assert!(subjects.windows(2).all(|w| w[0] < w[1]));
    }
}

// ---- rank-sum -------------------------------------------------------------

/// Exact null distribution by listing every way to draw `na` of the pooled
/// ranks 1..=n (tie-free), counted through a recursive walk over subsets.
fn enumerate_rank_sums(na: usize, n: usize) -> Vec<u64> {
    fn walk(next: usize, n: usize, left: usize, sum: usize, out: &mut Vec<u64>) {
        if left == 0 {
            out[sum] += 1;
            return;
        }
        for r in next..=n {
            walk(r + 1, n, left - 1, sum + r, out);
        }
    }
    let mut counts = vec![0u64; n * (n + 1) / 2 + 1];
    walk(1, n, na, 0, &mut counts);
    counts
}

fn tail(counts: &[u64], w: usize, lower: bool) -> f64 {
    let total: u64 = counts.iter().sum();
    let hits: u64 = if lower { counts[..=w].iter().sum() } else { counts[w..].iter().sum() };
    hits as f64 / total as f64
}

#[test]
fn smallest_one_sided_example_is_one_in_six() {
    let r = wilcoxon_rank_sum(&[1.0, 2.0], &[3.0, 4.0], Sidedness::Less).unwrap();
    assert_eq!(r.w, 3.0);
    assert!((r.p_exact.unwrap() - 1.0 / 6.0).abs() < 1e-12);
    assert!((tail(&enumerate_rank_sums(2, 4), 3, true) - 1.0 / 6.0).abs() < 1e-12);
}

#[test]
fn exact_p_matches_independent_enumeration() {
    let counts = enumerate_rank_sums(6, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let mut pool: Vec<f64> = (1..=12).map(f64::from).collect();
        pool.shuffle(&mut rng);
        let (a, b) = pool.split_at(6);
        let w: f64 = a.iter().sum();
        let lower = wilcoxon_rank_sum(a, b, Sidedness::Less).unwrap();
        let upper = wilcoxon_rank_sum(a, b, Sidedness::Greater).unwrap();
        assert!((lower.p_exact.unwrap() - tail(&counts, w as usize, true)).abs() < 1e-12);
        assert!((upper.p_exact.unwrap() - tail(&counts, w as usize, false)).abs() < 1e-12);
    }
}

#[test]
fn normal_approximation_tracks_enumeration_at_six_and_six() {
    let counts = enumerate_rank_sums(6, 12);
    let mut worst = 0.0f64;
    // Every attainable rank sum of a tie-free 6/6 split.
    for w in 21..=57usize {
        let a: Vec<f64> = {
            // Greedy construction of a 6-subset of 1..=12 with sum w.
            let mut chosen: Vec<usize> = (1..=6).collect();
            let mut need = w - 21;
            for i in (0..6).rev() {
                let room = 12 - (5 - i) - chosen[i];
                let step = room.min(need);
                chosen[i] += step;
                need -= step;
            }
            chosen.into_iter().map(|v| v as f64).collect()
        };
        assert_eq!(a.iter().sum::<f64>() as usize, w);
        let b: Vec<f64> = (1..=12).map(f64::from).filter(|v| !a.contains(v)).collect();
        for (side, lower) in [(Sidedness::Less, true), (Sidedness::Greater, false)] {
            let r = wilcoxon_rank_sum(&a, &b, side).unwrap();
            let exact = tail(&counts, w, lower);
            worst = worst.max((r.p - exact).abs());
        }
        let two = wilcoxon_rank_sum(&a, &b, Sidedness::TwoSided).unwrap();
        worst = worst.max((two.p - two.p_exact.unwrap()).abs());
    }
    assert!(worst < 0.03, "largest normal/exact gap {worst}");
}

#[test]
fn identical_samples_give_zero_statistic() {
    for v in [vec![1.0], vec![0.5, 0.7, 0.9], vec![3.0, 3.0, 1.0, 8.0]] {
        let r = wilcoxon_rank_sum(&v, &v, Sidedness::TwoSided).unwrap();
        assert_eq!(r.z, 0.0);
        assert_eq!(r.p, 1.0);
    }
}

#[test]
fn normal_tail_reference_points() {
    // Standard normal upper-tail probabilities from printed tables.
    for (z, p) in [(0.0, 0.5), (1.0, 0.158_655), (1.644_854, 0.05), (1.959_964, 0.025), (2.575_829, 0.005)] {
        assert!((fdp::eval::normal_sf(z) - p).abs() < 1e-6, "z = {z}");
    }
}
