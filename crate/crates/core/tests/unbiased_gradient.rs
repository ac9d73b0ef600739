mod common;

#[test]
fn minibatch_gradient_is_unbiased() {
    let worst = common::unbiasedness(99, 20, 100_000).unwrap();
    assert!(worst <= 3.0);
}
