use std::f64::consts::PI;

use eigenmatch::catalog::system;
use eigenmatch::domain::SampleBox;
use eigenmatch::dynsys::{flow, uniform_points, IntegratorOptions};
use eigenmatch::laplace::{laplace_average, linearization_eigenvalues, LaplaceConfig, Observable};

#[test]
fn laplace_average_is_an_eigenfunction_near_the_origin() {
    let sys = system("vdp", &[("mu".to_string(), 0.5)].into()).unwrap();
    let lam = linearization_eigenvalues(&sys, &[0.0, 0.0]).unwrap().into_iter().find(|l| l.im > 0.0).unwrap();
    let horizon = 20.0 * PI / lam.im;
    let cfg = LaplaceConfig::new(Observable::Coordinate { index: 0 }, lam, horizon);
    let long = LaplaceConfig::new(Observable::Coordinate { index: 0 }, lam, 2.0 * horizon);
    let t = 0.1;
    for x in uniform_points(&SampleBox::cube(2, -0.3, 0.3), 20, 4) {
        let f = laplace_average(&cfg, &sys, &x).unwrap();
        let moved = laplace_average(&cfg, &sys, &flow(&sys, &x, t, IntegratorOptions::default()).unwrap()).unwrap();
        let want = (lam * t).exp() * f;
        assert!((moved - want).norm() <= 0.01 * (1.0 + f.norm()), "{x:?}: {moved} vs {want}");
        let f2 = laplace_average(&long, &sys, &x).unwrap();
        assert!((f2 - f).norm() < 0.01 * f.norm(), "{x:?}: not converged in T");
    }
}
