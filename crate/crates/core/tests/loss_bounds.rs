mod common;

use common::loss_bounds::loss_trial;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn every_loss_stays_in_range(seed in any::<u64>()) {
        if let Err(msg) = loss_trial(seed) {
            prop_assert!(false, "{}", msg);
        }
    }
}
