use sdprior::degradation::gaussian_kernel;
use sdprior::metrics::{fid_spectra, full_reference, no_reference, Q_WINDOW};
use sdprior::numerics::{gaussian_matrix, RngStream};
use sdprior::toy::toy_degradation;
use sdprior::{HyperCube, SpectrumBatch};
use sdprior_oracle as oracle;

fn cube(seed: u64, b: usize, h: usize, w: usize) -> HyperCube {
    let m = gaussian_matrix(&mut RngStream::new(seed), b, h * w).mapv(|v| (0.5 + 0.15 * v).clamp(0.01, 1.0));
    HyperCube::new(m.into_shape_with_order((b, h, w)).unwrap()).unwrap()
}

fn to_oracle(c: &HyperCube) -> oracle::Cube {
    oracle::Cube {
        bands: c.bands(),
        height: c.height(),
        width: c.width(),
        values: c.as_slice().to_vec(),
    }
}

fn rows(b: &SpectrumBatch) -> Vec<Vec<f64>> {
    b.data().rows().into_iter().map(|r| r.to_vec()).collect()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn full_reference_matches_oracle_on_small_cubes() {
    let (r, e) = (cube(1, 4, 8, 8), cube(2, 4, 8, 8));
    let rep = full_reference(&r, &e, 4).unwrap();
    let (or, oe) = (to_oracle(&r), to_oracle(&e));
    let bands = oracle::psnr_per_band(&or, &oe);
    for (a, b) in rep.per_band_psnr.iter().zip(&bands) {
        assert!(close(*a, *b, 1e-10));
    }
    assert!(close(rep.psnr_db, bands.iter().sum::<f64>() / 4.0, 1e-10));
    assert!(close(rep.sam_deg, oracle::sam_degrees(&or, &oe), 1e-10));
    assert!(close(rep.rmse, oracle::rmse(&or, &oe), 1e-10));
    assert!(close(rep.ergas, oracle::ergas(&or, &oe, 4), 1e-10));
    assert!(close(rep.uiqi, oracle::uiqi(&or, &oe, Q_WINDOW), 1e-10));
}

#[test]
fn uiqi_matches_oracle_with_several_windows() {
    let (r, e) = (cube(3, 3, 64, 40), cube(4, 3, 64, 40));
    let rep = full_reference(&r, &e, 2).unwrap();
    assert!(close(rep.uiqi, oracle::uiqi(&to_oracle(&r), &to_oracle(&e), Q_WINDOW), 1e-10));
}

#[test]
fn fid_matches_oracle() {
    let mut rng = RngStream::new(5);
    let a = SpectrumBatch::new(gaussian_matrix(&mut rng, 30, 4)).unwrap();
    let b = SpectrumBatch::new(gaussian_matrix(&mut rng, 25, 4).mapv(|v| 0.7 * v + 0.2)).unwrap();
    let got = fid_spectra(&a, &b).unwrap();
    let want = oracle::fid(&rows(&a), &rows(&b), 1e-6);
    assert!(close(got, want, 1e-10), "{got} vs {want}");
}

#[test]
fn no_reference_matches_oracle() {
    let deg = toy_degradation(6).unwrap();
    let fused = cube(6, 6, 32, 32);
    let lr = cube(7, 6, 8, 8);
    let msi = cube(8, 4, 32, 32);
    let rep = no_reference(&fused, &lr, &msi, &deg).unwrap();
    let k = gaussian_kernel(7, 1.7).unwrap();
    let kernel: Vec<Vec<f64>> = k.rows().into_iter().map(|r| r.to_vec()).collect();
    let (dl, ds, q) = oracle::qnr(&to_oracle(&fused), &to_oracle(&lr), &to_oracle(&msi), &kernel, 4, Q_WINDOW);
    assert!(close(rep.d_lambda, dl, 1e-10), "{} vs {dl}", rep.d_lambda);
    assert!(close(rep.d_s, ds, 1e-10), "{} vs {ds}", rep.d_s);
    assert!(close(rep.qnr, q, 1e-10));
}

#[test]
fn trivial_identities_are_exact() {
    let a = cube(9, 5, 32, 32);
    let rep = full_reference(&a, &a, 4).unwrap();
    assert_eq!(rep.rmse, 0.0);
    assert_eq!(rep.uiqi, 1.0);
    assert_eq!(rep.ergas, 0.0);
    let deg = toy_degradation(5).unwrap();
    let nr = no_reference(&cube(1, 5, 32, 32), &cube(2, 5, 8, 8), &cube(3, 4, 32, 32), &deg).unwrap();
    assert_eq!(nr.qnr, (1.0 - nr.d_lambda) * (1.0 - nr.d_s));
}
