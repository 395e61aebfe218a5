use deforest_bench::{random_band, random_input, random_layer, random_mask};
use deforest_core::GeoTransform;

#[test]
fn fixtures_are_seeded() {
    assert_eq!(random_mask(64, 0.4, 7), random_mask(64, 0.4, 7));
    assert_ne!(random_mask(64, 0.4, 7), random_mask(64, 0.4, 8));
    assert_eq!(random_band(100, 1), random_band(100, 1));
    assert_eq!(random_input(1, 2, 8, 3).data(), random_input(1, 2, 8, 3).data());
    let t = GeoTransform::north_up(0.0, 0.0, 1.0, -1.0);
    assert_eq!(random_layer(5, 64, &t, 2), random_layer(5, 64, &t, 2));
}
