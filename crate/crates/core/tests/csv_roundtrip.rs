use std::io::Cursor;

use poolsel::io::{read_dataset, read_truth, write_dataset, write_truth};
use poolsel::simulation::{simulate_dataset, DgpConfig};
use poolsel::Coefficients;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dataset_survives_a_csv_round_trip(seed in any::<u64>(), n in 1usize..60, m in 1usize..5, p in 1usize..4) {
        let cfg = DgpConfig {
            n,
            p,
            theta_true: Coefficients::new(-1.0, vec![1.0; p]).unwrap(),
            pool_size: m,
            seed,
            ..DgpConfig::default()
        };
        let sim = simulate_dataset(&cfg).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &sim.dataset).unwrap();
        let back = read_dataset(Cursor::new(&buf), cfg.se, cfg.sp).unwrap();
        prop_assert_eq!(&back, &sim.dataset);

        let mut truth = Vec::new();
        write_truth(&mut truth, &sim.y_true).unwrap();
        prop_assert_eq!(read_truth(Cursor::new(&truth)).unwrap(), sim.y_true);
    }
}

#[test]
fn inconsistent_pool_outcomes_are_rejected() {
    let text = "pool_id,z,x1\na,1,0.5\na,0,0.1\n";
    assert!(read_dataset(Cursor::new(text), 0.95, 0.97).is_err());
}

#[test]
fn pool_labels_keep_first_appearance_order() {
    let text = "pool_id,z,x1\nq,0,1\np,1,2\nq,0,3\n";
    let data = read_dataset(Cursor::new(text), 0.95, 0.97).unwrap();
    assert_eq!(data.pool_labels(), ["q", "p"]);
    assert_eq!(data.pools(), [vec![0, 2], vec![1]]);
    assert_eq!(data.z(), [false, true]);
}
