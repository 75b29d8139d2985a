//! Segmentation and agreement metrics against brute-force and closed-form
//! references, plus loss symmetry and gradient properties.

use hssnet::mask::BinaryMask;
use hssnet::metrics::{dice_metric, ef_stats, hd95, total_loss};
use hssnet::tensor::{fd_check, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{brute_hd95, random_mask};

#[test]
fn hd95_equals_brute_force_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let (h, w) = (rng.random_range(1..=16), rng.random_range(1..=16));
        let (p, g) = (random_mask(&mut rng, h, w), random_mask(&mut rng, h, w));
        let fast = hd95(&p, &g).unwrap();
        assert_eq!(fast, brute_hd95(&p, &g), "{h}x{w}");
        assert_eq!(fast, hd95(&g, &p).unwrap());
    }
}

#[test]
fn hd95_examples_and_missing() {
    let single = |r, c| BinaryMask::from_fn(8, 8, move |i, j| (i, j) == (r, c));
    assert_eq!(hd95(&single(0, 0), &single(3, 4)).unwrap(), 5.0);
    let blob = BinaryMask::from_fn(8, 8, |r, c| (2..6).contains(&r) && (1..7).contains(&c));
    assert_eq!(hd95(&blob, &blob).unwrap(), 0.0);
    let empty = BinaryMask::new(8, 8);
    assert!(hd95(&empty, &blob).unwrap_err().is_data_error());
    assert!(hd95(&blob, &empty).is_err());
}

#[test]
fn dice_closed_forms() {
    let m = |px: &[(usize, usize)]| {
        let mut b = BinaryMask::new(4, 4);
        px.iter().for_each(|&(r, c)| b.set(r, c, true));
        b
    };
    let a = m(&[(0, 0), (0, 1)]);
    assert_eq!(dice_metric(&a, &a).unwrap(), 1.0);
    assert_eq!(dice_metric(&a, &m(&[(3, 3)])).unwrap(), 0.0);
    assert!((dice_metric(&a, &m(&[(0, 1), (1, 1)])).unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(dice_metric(&BinaryMask::new(4, 4), &BinaryMask::new(4, 4)).unwrap(), 1.0);
    assert!(dice_metric(&a, &BinaryMask::new(3, 4)).is_err());
}

#[test]
fn ef_stats_closed_forms() {
    let truth = [30.0, 45.5, 52.0, 61.0, 70.25];
    let same = ef_stats(&truth, &truth).unwrap();
    assert!((same.corr.unwrap() - 1.0).abs() < 1e-12);
    assert_eq!((same.bias, same.std), (0.0, 0.0));

    let shifted: Vec<f64> = truth.iter().map(|t| t + 5.0).collect();
    let s = ef_stats(&shifted, &truth).unwrap();
    assert!((s.corr.unwrap() - 1.0).abs() < 1e-12);
    assert!((s.bias - 5.0).abs() < 1e-12 && s.std < 1e-12);

    let r = ef_stats(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
    assert!((r.corr.unwrap() + 1.0).abs() < 1e-12);
    assert!(r.bias.abs() < 1e-12);
    assert!((r.std - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);

    assert_eq!(ef_stats(&[50.0, 50.0], &[40.0, 60.0]).unwrap().corr, None);
    assert!(ef_stats(&[], &[]).is_err());
}

#[test]
fn worked_loss_value() {
    let p = Tensor::full(&[2, 2], 0.5);
    let g = Tensor::from_vec(&[2, 2], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
    let loss = total_loss(&p, &g, 0.8).unwrap().item();
    assert!((loss - 0.4586).abs() < 1e-4, "{loss}");
    assert!((loss - (0.8 * 0.4 + 0.2 * 2f64.ln())).abs() < 1e-12);
}

fn prob_map() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (prop::collection::vec(0.02f64..0.98, 64), prop::collection::vec(any::<bool>(), 64))
}

fn as_tensor(bits: &[bool]) -> Tensor {
    Tensor::from_vec(&[8, 8], bits.iter().map(|&b| f64::from(u8::from(b))).collect()).unwrap()
}

proptest! {
    #[test]
    fn dice_is_symmetric(a in prop::collection::vec(any::<bool>(), 64), b in prop::collection::vec(any::<bool>(), 64)) {
        let (ma, mb) = (BinaryMask::from_bits(8, 8, a).unwrap(), BinaryMask::from_bits(8, 8, b).unwrap());
        prop_assert_eq!(dice_metric(&ma, &mb).unwrap(), dice_metric(&mb, &ma).unwrap());
    }

    #[test]
    fn loss_gradient_on_random_masks((p, g) in prob_map()) {
        let p = Tensor::from_vec(&[8, 8], p).unwrap();
        let g = as_tensor(&g);
        let err = fd_check(|p| total_loss(p, &g, 0.8), &p, 1e-5).unwrap();
        prop_assert!(err < 1e-4, "{err}");
    }
}

#[test]
fn loss_is_not_symmetric() {
    let p = Tensor::from_vec(&[2, 2], vec![0.9, 0.2, 0.6, 0.1]).unwrap();
    let g = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 1.0, 1.0]).unwrap();
    let forward = total_loss(&p, &g, 0.8).unwrap().item();
    let swapped = total_loss(&g, &p, 0.8).unwrap().item();
    assert!((forward - swapped).abs() > 1e-3);
}
