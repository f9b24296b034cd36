use affectkit_bench::{gru_model, sequence_batch, series};

#[test]
fn fixtures_are_deterministic() {
    assert_eq!(series(32, 7), series(32, 7));
    assert_ne!(series(32, 7), series(32, 8));
    assert!(series(1000, 1).iter().all(|v| (-1.0..1.0).contains(v)));
    assert_eq!(sequence_batch(2, 3, 4, 9), sequence_batch(2, 3, 4, 9));
}

#[test]
fn gru_fixture_predicts_every_frame() {
    let model = gru_model(6, 5, 0);
    let batch = sequence_batch(3, 4, 6, 1);
    assert_eq!(model.predict(&batch).unwrap().len(), 12);
}
