use gstd_core::corpus::Gender;
use gstd_core::genderloss::{
    combined_loss, gr_loss, head_forward, head_gradients, proxy_gta, separable_utterances, sweep,
    train_toy_head, transducer_loss_standin, FrameMatrix, GenderHead, HarnessConfig, TrainConfig,
    BLANK,
};
use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// Loss recomputed with plain loops, used by the finite-difference check.
fn scalar_loss(h: &Array2<f64>, head: &GenderHead, y: usize, alpha: f64, l_trans: f64) -> f64 {
    let (t, d) = h.dim();
    let hid = head.b_g.len();
    let mut l_gr = 0.0;
    for f in 0..t {
        let a: Vec<f64> = (0..hid)
            .map(|j| {
                let z: f64 =
                    (0..d).map(|k| head.w_g[[j, k]] * h[[f, k]]).sum::<f64>() + head.b_g[j];
                z.max(0.0)
            })
            .collect();
        let logits: Vec<f64> = (0..2)
            .map(|c| (0..hid).map(|j| head.w_out[[c, j]] * a[j]).sum())
            .collect();
        let m = logits[0].max(logits[1]);
        let log_z = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
        l_gr -= logits[y] - log_z;
    }
    alpha * l_gr + (1.0 - alpha) * l_trans
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

#[test]
fn analytic_gradients_match_finite_differences() {
    const STEP: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut trials = 0;
    while trials < 120 {
        let (t, d, hid) = (
            rng.random_range(1..=8),
            rng.random_range(1..=16),
            rng.random_range(1..=16),
        );
        let h = random_matrix(&mut rng, t, d);
        let head = GenderHead::new(
            random_matrix(&mut rng, hid, d),
            Array1::from_shape_fn(hid, |_| rng.random_range(-0.5..0.5)),
            random_matrix(&mut rng, 2, hid),
        )
        .unwrap();
        // Skip fixtures with a pre-activation at the ReLU kink, where the
        // loss is not differentiable and central differences are meaningless.
        let z = h.dot(&head.w_g.t()) + &head.b_g;
        if z.iter().any(|v| v.abs() < 1e-3) {
            continue;
        }
        trials += 1;
        let gender = if rng.random_bool(0.5) {
            Gender::Male
        } else {
            Gender::Female
        };
        let y = usize::from(gender == Gender::Female);
        let alpha = rng.random_range(0.05..=1.0);
        let l_trans = rng.random_range(0.0..5.0);
        let frames = FrameMatrix::new("fd", h.clone()).unwrap();
        let grads = head_gradients(&frames, &head, gender, alpha, l_trans).unwrap();

        let check = |param: &dyn Fn(&mut GenderHead) -> &mut f64, analytic: f64| {
            let mut plus = head.clone();
            *param(&mut plus) += STEP;
            let mut minus = head.clone();
            *param(&mut minus) -= STEP;
            let numeric = (scalar_loss(&h, &plus, y, alpha, l_trans)
                - scalar_loss(&h, &minus, y, alpha, l_trans))
                / (2.0 * STEP);
            let err = relative_error(analytic, numeric);
            assert!(
                err <= 1e-4,
                "analytic {analytic} numeric {numeric} (rel err {err})"
            );
        };
        for ((j, k), &g) in grads.w_g.indexed_iter() {
            check(&|p: &mut GenderHead| &mut p.w_g[[j, k]], g);
        }
        for (j, &g) in grads.b_g.indexed_iter() {
            check(&|p: &mut GenderHead| &mut p.b_g[j], g);
        }
        for ((c, j), &g) in grads.w_out.indexed_iter() {
            check(&|p: &mut GenderHead| &mut p.w_out[[c, j]], g);
        }
    }
}

/// Sum path probabilities over every ordering of `T − 1` blanks and `U` labels.
fn enumerate_paths(lp: &Array3<f64>, labels: &[usize]) -> f64 {
    let t_len = lp.dim().0;
    let u_len = labels.len();
    let moves = t_len - 1 + u_len;
    let mut total = 0.0;
    for mask in 0u32..(1 << moves) {
        if mask.count_ones() as usize != u_len {
            continue;
        }
        let (mut t, mut u, mut log_p) = (0, 0, 0.0);
        for bit in 0..moves {
            if mask & (1 << bit) != 0 {
                log_p += lp[[t, u, labels[u]]];
                u += 1;
            } else {
                log_p += lp[[t, u, BLANK]];
                t += 1;
            }
        }
        log_p += lp[[t_len - 1, u_len, BLANK]];
        total += log_p.exp();
    }
    -total.ln()
}

#[test]
fn transducer_loss_matches_path_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut lattices = 0;
    for t in 1..=4 {
        for u in 0..=3 {
            for _ in 0..13 {
                let vocab = rng.random_range(1..=4);
                let mut lp =
                    Array3::from_shape_fn((t, u + 1, vocab + 1), |_| rng.random_range(-3.0..0.0));
                // Normalize half of the lattices; the recursion must not care.
                if lattices % 2 == 0 {
                    for mut cell in lp.lanes_mut(ndarray::Axis(2)) {
                        let z = cell.iter().map(|v: &f64| v.exp()).sum::<f64>().ln();
                        cell.mapv_inplace(|v| v - z);
                    }
                }
                let labels: Vec<usize> = (0..u).map(|_| rng.random_range(1..=vocab)).collect();
                let dp = transducer_loss_standin(&lp, &labels).unwrap();
                let brute = enumerate_paths(&lp, &labels);
                assert!((dp - brute).abs() <= 1e-9, "T={t} U={u}: {dp} vs {brute}");
                lattices += 1;
            }
        }
    }
    assert!(lattices >= 200);
}

#[test]
fn closed_forms() {
    for t in 1..=20 {
        let o = Array2::from_elem((t, 2), 0.5);
        for g in [Gender::Male, Gender::Female] {
            let l = gr_loss(&o, g).unwrap();
            assert!((l - t as f64 * std::f64::consts::LN_2).abs() <= 1e-10);
        }
    }
    for (l_gr, l_trans) in [(2.0, 1.0), (0.3, 7.25), (1e-9, 1e9)] {
        assert_eq!(combined_loss(l_gr, l_trans, 0.0).unwrap(), l_trans);
        assert_eq!(combined_loss(l_gr, l_trans, 1.0).unwrap(), l_gr);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let x = rng.random_range(0.0..100.0);
        let a = rng.random_range(0.0..=1.0);
        assert!((combined_loss(x, x, a).unwrap() - x).abs() <= 1e-12 * x.max(1.0));
    }
}

#[test]
fn softmax_rows_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let (t, d, hid) = (
            rng.random_range(1..=8),
            rng.random_range(1..=6),
            rng.random_range(1..=6),
        );
        let head = GenderHead::new(
            random_matrix(&mut rng, hid, d) * 5.0,
            Array1::zeros(hid),
            random_matrix(&mut rng, 2, hid) * 5.0,
        )
        .unwrap();
        let o = head_forward(
            &FrameMatrix::new("x", random_matrix(&mut rng, t, d)).unwrap(),
            &head,
        )
        .unwrap();
        for row in o.rows() {
            assert!((row.sum() - 1.0).abs() <= 1e-12);
            assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }
}

#[test]
fn synthetic_data_is_linearly_separable() {
    // Independent check: the fixed direction (1, ..., 1) separates every frame.
    let cfg = HarnessConfig::default();
    let data = separable_utterances(200, &cfg, 1);
    for u in &data {
        let sign = if u.gender == Gender::Female {
            1.0
        } else {
            -1.0
        };
        assert!(u
            .frames
            .values()
            .rows()
            .into_iter()
            .all(|r| sign * r.sum() > 0.0));
    }
}

#[test]
fn gr_loss_training_reaches_high_frame_accuracy() {
    let cfg = HarnessConfig::default();
    let data = separable_utterances(200, &cfg, 1);
    let tcfg = TrainConfig {
        alpha: 0.1,
        steps: 500,
        ..TrainConfig::default()
    };
    let trained = train_toy_head(&data, &tcfg, 1).unwrap();
    let first = trained.trace.first().unwrap();
    let last = trained.trace.last().unwrap();
    assert_eq!(first.frame_accuracy, 0.5);
    assert!(
        last.frame_accuracy >= 0.95,
        "final accuracy {}",
        last.frame_accuracy
    );
    assert!(last.l_gr < first.l_gr);
    assert!(trained.trace.iter().all(|s| s.l_trans == first.l_trans));

    let again = train_toy_head(&data, &tcfg, 1).unwrap();
    assert_eq!(again.trace, trained.trace);

    let without = train_toy_head(&data, &TrainConfig { alpha: 0.0, ..tcfg }, 1).unwrap();
    assert!(without.trace.iter().all(|s| s.frame_accuracy == 0.5));
    let eval = separable_utterances(50, &cfg, 99);
    assert_eq!(proxy_gta(&without.head, &eval).unwrap(), 0.5);
    assert!(proxy_gta(&trained.head, &eval).unwrap() > 0.95);
}

#[test]
fn gr_loss_beats_no_gr_loss_at_high_neutral_ratio() {
    let cfg = HarnessConfig::default();
    let seeds = [1, 2, 3, 4, 5];
    let report = sweep(&[0.8], &[0.0, 0.1], &seeds, &cfg).unwrap();
    assert_eq!(report.cells.len(), 2);
    let (without, with): (Vec<_>, Vec<_>) = report.runs.iter().partition(|r| r.alpha == 0.0);
    let wins = without
        .iter()
        .zip(&with)
        .filter(|(a, b)| {
            assert_eq!(a.seed, b.seed);
            b.proxy_gta > a.proxy_gta
        })
        .count();
    assert!(wins >= 4, "GR loss won in {wins} of {} seeds", seeds.len());
    assert!(without.iter().all(|r| r.proxy_gta == 0.5));
}
