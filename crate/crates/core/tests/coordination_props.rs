mod common;

use common::coordlog::{converges, step, LOG_LEN};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn any_delivery_order_converges(
        steps in prop::collection::vec(step(), 8..40),
        order in Just((0..LOG_LEN).collect::<Vec<_>>()).prop_shuffle(),
        dups in prop::collection::vec(0..LOG_LEN, 0..6),
    ) {
        converges(&steps, &order, &dups)?;
    }
}
