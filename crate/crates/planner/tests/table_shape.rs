mod support;

use support::shape;

#[test]
fn cost_curve_is_u_shaped_with_interior_minimum() {
    shape::cost_curve_is_u_shaped();
}

#[test]
fn savings_table_has_the_expected_structure() {
    shape::savings_table_structure();
}
