use emobias_core::gbt::{fit_tree, train_multiclass, BoostedEnsemble, TrainParams, TreeNode};
use proptest::prelude::*;

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    if h + lambda > 0.0 {
        g * g / (h + lambda)
    } else {
        0.0
    }
}

fn sums(idx: &[usize], g: &[f64], h: &[f64]) -> (f64, f64) {
    idx.iter().fold((0.0, 0.0), |(a, b), &i| (a + g[i], b + h[i]))
}

/// Every admissible split of the rows in `idx`, by enumeration.
#[allow(clippy::needless_range_loop)]
fn candidates(rows: &[Vec<f64>], idx: &[usize], g: &[f64], h: &[f64], p: &TrainParams) -> Vec<Split> {
    let (gt, ht) = sums(idx, g, h);
    let parent = score(gt, ht, p.lambda_l2);
    let mut out = Vec::new();
    for f in 0..rows[0].len() {
        let mut vals: Vec<f64> = idx.iter().map(|&i| rows[i][f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let mut threshold = w[0] + (w[1] - w[0]) / 2.0;
            if threshold <= w[0] {
                threshold = w[1];
            }
            let (left, right): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| rows[i][f] < threshold);
            let (gl, hl) = sums(&left, g, h);
            let (gr, hr) = sums(&right, g, h);
            if hl >= p.min_child_weight && hr >= p.min_child_weight {
                let gain = 0.5 * (score(gl, hl, p.lambda_l2) + score(gr, hr, p.lambda_l2) - parent);
                out.push(Split {
                    feature: f,
                    threshold,
                    gain,
                });
            }
        }
    }
    out
}

/// Checks that `tree` makes a maximum-gain split at every node it splits and
/// stops only where no split clears the gain floor or depth runs out.
fn check_greedy(
    tree: &TreeNode,
    rows: &[Vec<f64>],
    idx: &[usize],
    g: &[f64],
    h: &[f64],
    p: &TrainParams,
    depth: usize,
) -> Result<(), TestCaseError> {
    let (gt, ht) = sums(idx, g, h);
    let parent = score(gt, ht, p.lambda_l2);
    let cands = candidates(rows, idx, g, h, p);
    let best = cands.iter().map(|c| c.gain).fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-9 * (1.0 + parent.abs() + best.abs().min(1e12));
    let floor = 1e-12 * (1.0 + parent);
    match tree {
        TreeNode::Leaf { weight } => {
            prop_assert!(
                depth == p.max_depth || best <= floor + tol,
                "stopped early: best gain {best}"
            );
            let expect = if ht + p.lambda_l2 > 0.0 {
                -gt / (ht + p.lambda_l2)
            } else {
                0.0
            };
            prop_assert!((weight - expect).abs() <= 1e-9 * (1.0 + expect.abs()));
        }
        TreeNode::Split {
            feature_index,
            threshold,
            left,
            right,
        } => {
            prop_assert!(depth < p.max_depth);
            let chosen = cands
                .iter()
                .find(|c| c.feature == *feature_index && c.threshold == *threshold);
            let Some(chosen) = chosen else {
                return Err(TestCaseError::fail(format!(
                    "split ({feature_index}, {threshold}) is not a candidate"
                )));
            };
            prop_assert!(chosen.gain >= best - tol, "gain {} below best {best}", chosen.gain);
            prop_assert!(chosen.gain > floor - tol);
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| rows[i][*feature_index] < *threshold);
            check_greedy(left, rows, &l, g, h, p, depth + 1)?;
            check_greedy(right, rows, &r, g, h, p, depth + 1)?;
        }
    }
    Ok(())
}

prop_compose! {
    /// Values from a coarse grid so ties and repeated values are common.
    fn tree_problem()(n in 2usize..40, d in 1usize..10)
        (rows in prop::collection::vec(prop::collection::vec((-6i32..6).prop_map(|v| v as f64 * 0.5), d), n),
         g in prop::collection::vec(-2.0f64..2.0, n),
         h in prop::collection::vec(0.05f64..2.0, n),
         max_depth in 1usize..5,
         lambda in prop::sample::select(vec![0.0, 1.0, 2.5]),
         mcw in prop::sample::select(vec![0.0, 0.5, 1.0, 3.0]))
        -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>, TrainParams)
    {
        let p = TrainParams { max_depth, lambda_l2: lambda, min_child_weight: mcw, ..TrainParams::default() };
        (rows, g, h, p)
    }
}

fn classification(n: usize, d: usize, classes: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
    (
        prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), n),
        prop::collection::vec(0..classes, n),
    )
}

fn quick(rounds: usize) -> TrainParams {
    TrainParams {
        rounds,
        ..TrainParams::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn tree_is_greedy_optimal((rows, g, h, p) in tree_problem()) {
        let tree = fit_tree(&rows, &g, &h, &p);
        prop_assert!(tree.depth() <= p.max_depth);
        let idx: Vec<usize> = (0..rows.len()).collect();
        check_greedy(&tree, &rows, &idx, &g, &h, &p, 0)?;
    }

    #[test]
    fn probabilities_are_distributions((x, y) in classification(30, 5, 4), probe in prop::collection::vec(-5.0f64..5.0, 5)) {
        let m = train_multiclass(&x, &y, 4, &quick(6)).unwrap();
        for row in x.iter().chain(std::iter::once(&probe)) {
            let p = m.predict_proba(row).unwrap();
            prop_assert!(p.iter().all(|v| v.is_finite() && *v > 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn training_is_deterministic_and_serializable((x, y) in classification(25, 7, 3)) {
        let a = train_multiclass(&x, &y, 3, &quick(5)).unwrap();
        let b = train_multiclass(&x, &y, 3, &quick(5)).unwrap();
        prop_assert_eq!(&a, &b);
        let json = a.to_json().unwrap();
        prop_assert_eq!(BoostedEnsemble::from_json(&json).unwrap(), a);
    }

    #[test]
    fn zero_weight_rows_are_ignored((x, y) in classification(24, 4, 4), drop in prop::collection::vec(any::<bool>(), 24)) {
        prop_assume!(drop.iter().any(|d| !d));
        let weights: Vec<f64> = drop.iter().map(|&d| if d { 0.0 } else { 1.0 }).collect();
        let weighted = TrainParams { sample_weights: Some(weights), ..quick(4) };
        let a = train_multiclass(&x, &y, 4, &weighted).unwrap();
        let kept: Vec<usize> = (0..x.len()).filter(|&i| !drop[i]).collect();
        let xs: Vec<Vec<f64>> = kept.iter().map(|&i| x[i].clone()).collect();
        let ys: Vec<usize> = kept.iter().map(|&i| y[i]).collect();
        let b = train_multiclass(&xs, &ys, 4, &quick(4)).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn feature_order_breaks_ties() {
    // Identical columns: the lowest index must win wherever they tie,
    // including across the lane groups of a wide matrix.
    let base: Vec<f64> = (0..12).map(|i| (i % 6) as f64).collect();
    let g: Vec<f64> = base.iter().map(|v| if *v < 3.0 { -1.0 } else { 1.0 }).collect();
    let h = vec![1.0; 12];
    for width in [2, 5, 9] {
        let rows: Vec<Vec<f64>> = base.iter().map(|v| vec![*v; width]).collect();
        let tree = fit_tree(
            &rows,
            &g,
            &h,
            &TrainParams {
                max_depth: 1,
                ..TrainParams::default()
            },
        );
        match tree {
            TreeNode::Split {
                feature_index,
                threshold,
                ..
            } => {
                assert_eq!(feature_index, 0, "width {width}");
                assert_eq!(threshold, 2.5);
            }
            other => panic!("expected a split, got {other:?}"),
        }
    }
}
