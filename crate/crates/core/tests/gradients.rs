//! Finite-difference checks of every differentiable op and of the joint loss.

use fdp::gradsuite::{self, CheckOutcome};

fn assert_all(outcomes: &[CheckOutcome]) {
    for o in outcomes {
        println!("{o}");
    }
    for o in outcomes {
        assert!(o.passed(), "{} ({}) failed: {o:?}", o.name, o.precision);
    }
}

#[test]
fn every_op_in_double_precision() {
    assert_all(&gradsuite::op_checks().unwrap());
}

#[test]
fn conv_and_batch_norm_in_single_precision() {
    assert_all(&gradsuite::single_precision_op_checks().unwrap());
}

#[test]
fn full_loss_double_precision() {
    assert_all(&[gradsuite::full_loss_f64(11, 3).unwrap()]);
}

#[test]
fn full_loss_single_precision() {
    assert_all(&gradsuite::full_loss_f32(11, 2).unwrap());
}

#[test]
fn full_loss_other_seeds() {
    for seed in [1, 2] {
        assert_all(&[gradsuite::full_loss_f64(seed, 2).unwrap()]);
        assert_all(&gradsuite::full_loss_f32(seed, 2).unwrap());
    }
}
