//! Scan permutations and the selective scan checked against direct
//! sequential evaluation.

use hssnet::scan::{make_order, ModeSet, PatchGrid, ScanDirection, ScanMode};
use hssnet::ssm::{selective_recurrence, selective_scan, stcs_directions, stcs_mix, SsmParams, StcsParams};
use hssnet::tensor::{fd_check, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{naive_scan, random_params, random_tensor};

fn grid(t: usize, r: usize, c: usize) -> PatchGrid {
    PatchGrid::new(t, r, c).unwrap()
}

#[test]
fn worked_permutations() {
    let g = grid(2, 2, 2);
    let perm = |m, d| make_order(g, m, d).perm;
    assert_eq!(perm(ScanMode::Temporal, ScanDirection::Forward), [0, 1, 2, 3, 4, 5, 6, 7]);
    assert_eq!(perm(ScanMode::Spatial, ScanDirection::Forward), [0, 4, 1, 5, 2, 6, 3, 7]);
    assert_eq!(perm(ScanMode::AntiDiagonal, ScanDirection::Forward), [1, 5, 0, 4, 3, 7, 2, 6]);
    assert_eq!(perm(ScanMode::Temporal, ScanDirection::Backward), [7, 6, 5, 4, 3, 2, 1, 0]);
}

#[test]
fn every_order_is_a_bijection_with_reversed_backward() {
    for t in 1..=3 {
        for r in 1..=4 {
            for c in 1..=5 {
                let g = grid(t, r, c);
                for mode in ScanMode::ALL {
                    let fwd = make_order(g, mode, ScanDirection::Forward);
                    let bwd = make_order(g, mode, ScanDirection::Backward);
                    for o in [&fwd, &bwd] {
                        let mut sorted = o.perm.clone();
                        sorted.sort_unstable();
                        assert_eq!(sorted, (0..g.len()).collect::<Vec<_>>(), "{mode} {t}x{r}x{c}");
                        assert!(o.perm.iter().enumerate().all(|(k, &p)| o.inv_perm[p] == k));
                    }
                    let mut rev = fwd.perm.clone();
                    rev.reverse();
                    assert_eq!(rev, bwd.perm);
                }
            }
        }
    }
}

#[test]
fn ramp_and_constant_sequences() {
    let g = grid(2, 2, 2);
    let ramp = Tensor::from_vec(&[1, 8], (0..8).map(f64::from).collect()).unwrap();
    let spatial = make_order(g, ScanMode::Spatial, ScanDirection::Forward);
    assert_eq!(spatial.apply(&ramp).unwrap().data(), &[0.0, 4.0, 1.0, 5.0, 2.0, 6.0, 3.0, 7.0]);
    let constant = Tensor::full(&[2, 8], 3.5);
    for mode in ScanMode::ALL {
        for dir in ScanDirection::BOTH {
            assert_eq!(make_order(g, mode, dir).apply(&constant).unwrap().data(), constant.data());
        }
    }
}

#[test]
fn length_mismatch_is_rejected() {
    let order = make_order(grid(2, 2, 2), ScanMode::Diagonal, ScanDirection::Forward);
    let short = Tensor::zeros(&[3, 7]);
    assert!(order.apply(&short).is_err());
    assert!(order.invert(&short).is_err());
}

#[test]
fn diagonal_orders_coincide_only_on_degenerate_grids() {
    let same = |g| {
        make_order(g, ScanMode::Diagonal, ScanDirection::Forward).perm
            == make_order(g, ScanMode::AntiDiagonal, ScanDirection::Forward).perm
    };
    for t in 1..=3 {
        assert!(same(grid(t, 1, 1)));
        for r in 2..=4 {
            for c in 2..=4 {
                assert!(!same(grid(t, r, c)), "{t}x{r}x{c}");
            }
        }
    }
}

proptest! {
    #[test]
    fn invert_undoes_apply(t in 1usize..=3, r in 1usize..=4, c in 1usize..=4, seed in any::<u64>()) {
        let g = grid(t, r, c);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seq = random_tensor(&mut rng, &[3, g.len()], -5.0, 5.0);
        for mode in ScanMode::ALL {
            for dir in ScanDirection::BOTH {
                let order = make_order(g, mode, dir);
                let back = order.invert(&order.apply(&seq).unwrap()).unwrap();
                prop_assert_eq!(back.data(), seq.data());
            }
        }
    }

    #[test]
    fn spatial_visits_each_position_across_all_frames(t in 1usize..=4, r in 1usize..=5, c in 1usize..=5) {
        let g = grid(t, r, c);
        let perm = make_order(g, ScanMode::Spatial, ScanDirection::Forward).perm;
        for (q, visits) in perm.chunks(t).enumerate() {
            prop_assert!(visits.iter().all(|&slot| slot % g.positions() == q));
            prop_assert_eq!(visits.iter().map(|&slot| slot / g.positions()).collect::<Vec<_>>(), (0..t).collect::<Vec<_>>());
        }
    }
}

#[test]
fn optimized_scan_matches_sequential_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let d_model = rng.random_range(1..=6);
        let d_state = rng.random_range(1..=8);
        let len = if case % 10 == 0 { 512 } else { rng.random_range(1..=512) };
        let p = random_params(&mut rng, d_model, d_state);
        let x = random_tensor(&mut rng, &[d_model, len], -1.0, 1.0);
        let got = selective_scan(&p, &x).unwrap();
        let want = naive_scan(&p, &x);
        for (a, b) in got.data().iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst <= 1e-10, "max abs error {worst:e}");
}

#[test]
fn hidden_state_respects_decay_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..40 {
        let (len, ch, n) = (rng.random_range(1..=300), rng.random_range(1..=4), rng.random_range(1..=6));
        let x = random_tensor(&mut rng, &[len, ch], -1.0, 1.0);
        let delta = random_tensor(&mut rng, &[len, ch], 0.01, 2.0);
        let a = random_tensor(&mut rng, &[ch, n], -3.0, -0.05);
        let b = random_tensor(&mut rng, &[len, n], -2.0, 2.0);
        let max_decay = (0..len * ch)
            .flat_map(|i| (0..n).map(move |s| (i, s)))
            .map(|(i, s)| (delta.data()[i] * a.data()[(i % ch) * n + s]).exp())
            .fold(0.0, f64::max);
        let max_input = (0..len)
            .flat_map(|l| (0..ch).map(move |c| (l, c)))
            .flat_map(|(l, c)| (0..n).map(move |s| (l, c, s)))
            .map(|(l, c, s)| (delta.data()[l * ch + c] * b.data()[l * n + s]).abs())
            .fold(0.0, f64::max);
        let bound = max_input * 1.0 / (1.0 - max_decay);
        for s in 0..n {
            // one-hot readout of state `s` with the skip disabled exposes h
            let c_sel = Tensor::from_vec(&[len, n], (0..len * n).map(|i| f64::from(i % n == s)).collect()).unwrap();
            let h = selective_recurrence(&x, &delta, &a, &b, &c_sel, &Tensor::zeros(&[ch])).unwrap();
            let peak = h.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(peak <= bound * (1.0 + 1e-12), "peak {peak} > bound {bound}");
        }
    }
}

#[test]
fn scan_gradients_all_groups() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for len in [1, 7, 32] {
        let p = random_params(&mut rng, 3, 4);
        let x = random_tensor(&mut rng, &[3, len], -1.0, 1.0);
        let w = random_tensor(&mut rng, &[3, len], -1.0, 1.0);
        let loss = |p: &SsmParams, x: &Tensor| selective_scan(p, x)?.mul(&w)?.sum();
        let check = |name: &str, err: f64| assert!(err < 1e-4, "{name} at L={len}: {err}");
        check("x", fd_check(|x| loss(&p, x), &x, 1e-5).unwrap());
        type Field = fn(&mut SsmParams) -> &mut Tensor;
        let groups: [(&str, Field); 7] = [
            ("a_log", |p| &mut p.a_log),
            ("d_skip", |p| &mut p.d_skip),
            ("w_dt_down", |p| &mut p.w_dt_down),
            ("w_dt_up", |p| &mut p.w_dt_up),
            ("dt_bias", |p| &mut p.dt_bias),
            ("w_b", |p| &mut p.w_b),
            ("w_c", |p| &mut p.w_c),
        ];
        for (name, field) in groups {
            let at = field(&mut p.clone()).clone();
            let err = fd_check(
                |v| {
                    let mut q = p.clone();
                    *field(&mut q) = v.clone();
                    loss(&q, &x)
                },
                &at,
                1e-5,
            )
            .unwrap();
            check(name, err);
        }
    }
}

#[test]
fn mixer_is_independent_of_accumulation_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = grid(3, 3, 4);
    let params = StcsParams::new(&mut rng, 4, 8, false);
    let seq = random_tensor(&mut rng, &[4, g.len()], -1.0, 1.0);
    let mixed = stcs_mix(&params, &seq, g, ModeSet::all()).unwrap();
    let outs = stcs_directions(&params, &seq, g, ModeSet::all()).unwrap();
    let mut rev = outs[outs.len() - 1].clone();
    for o in outs.iter().rev().skip(1) {
        rev = rev.add(o).unwrap();
    }
    let rev = rev.scale(1.0 / outs.len() as f64).unwrap();
    for (a, b) in mixed.data().iter().zip(rev.data()) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn mixer_rejects_empty_mode_set() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let g = grid(1, 2, 2);
    let params = StcsParams::new(&mut rng, 2, 4, true);
    assert!(stcs_mix(&params, &Tensor::zeros(&[2, 4]), g, ModeSet::empty()).is_err());
}
