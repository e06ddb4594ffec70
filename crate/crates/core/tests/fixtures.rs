use sdprior::degradation::ikonos_like_srf;
use sdprior::hsi::load_matrix_csv;

#[test]
fn shipped_srf_matches_generator() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/ikonos_like_srf_31.csv");
    let shipped = load_matrix_csv(path).unwrap();
    let generated = ikonos_like_srf(31, 400.0, 1000.0).unwrap();
    assert_eq!(shipped.dim(), (4, 31));
    assert_eq!(shipped, generated);
    for row in shipped.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-12);
    }
}
