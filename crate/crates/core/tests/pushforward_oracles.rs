use proptest::prelude::*;
use proptest::test_runner::Config;
use scp_core::map_model::QoiMap;
use scp_core::measures::sample;
use scp_core::pushforward::{
    histogram_density, make_partition, prior_pushforward_mc, push_samples, surface_density_at, OutputPartition,
    SurfaceWeight,
};
use scp_core::{BoxDomain, DensitySpec, Measure, ScpError};

fn square() -> BoxDomain {
    BoxDomain::new(vec![-5.0, -5.0], vec![5.0, 5.0]).unwrap()
}

fn tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + k as f64 * h);
    }
    s * h / 3.0
}

/// Area of `{x^2 + 3y^2 <= q}` inside the square, integrating the vertical chord length.
fn sublevel_area(q: f64) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    let chord = |x: f64| 2.0 * ((q - x * x).max(0.0) / 3.0).sqrt().min(5.0);
    let xmax = q.sqrt().min(5.0);
    // Split at the kink where the chord reaches the box edge.
    let kink = (q - 75.0).max(0.0).sqrt().min(xmax);
    2.0 * (simpson(chord, 0.0, kink, 2000) + simpson(chord, kink, xmax, 20_000))
}

#[test]
fn partition_examples() {
    let q: Vec<f64> = (0..=1000).map(|i| i as f64 / 10.0).collect();
    let p = make_partition(&q, 100).unwrap();
    assert_eq!(p.n_bins(), 100);
    assert!((0..100).all(|i| (p.width(i) - 1.0).abs() < 1e-12));
    assert!(matches!(make_partition(&q, 1), Err(ScpError::InvalidArgument(_))));
}

#[test]
fn uniform_draws_give_flat_histogram() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let q: Vec<f64> = (0..1_000_000).map(|_| 3.0 + 7.0 * rng.random::<f64>()).collect();
    let p = OutputPartition::equal_width(3.0, 10.0, 70).unwrap();
    let h = histogram_density(&q, &p).unwrap();
    let expect = 1.0 / 7.0;
    let pb: f64 = 1.0 / 70.0;
    let sigma = (pb * (1.0 - pb) / 1e6).sqrt() / p.width(0);
    assert!(h.values.iter().all(|v| (v - expect).abs() <= 4.0 * sigma), "{:?}", h.values);
}

/// Bin masses of `Q = x^2 + 3y^2` under an untruncated isotropic Gaussian,
/// by polar quadrature in `(x, sqrt(3) y)` coordinates where `Q = r^2`.
fn gaussian_bin_masses(center: [f64; 2], sd: f64, p: &OutputPartition) -> Vec<f64> {
    let dens = |x: f64, y: f64| {
        let r2 = (x - center[0]).powi(2) + (y - center[1]).powi(2);
        (-r2 / (2.0 * sd * sd)).exp() / (2.0 * std::f64::consts::PI * sd * sd)
    };
    let n_theta = 4000;
    (0..p.n_bins())
        .map(|i| {
            let (a, b) = (p.edges()[i].max(0.0).sqrt(), p.edges()[i + 1].max(0.0).sqrt());
            let radial = |r: f64| {
                let ring: f64 = (0..n_theta)
                    .map(|k| {
                        let t = std::f64::consts::TAU * k as f64 / n_theta as f64;
                        dens(r * t.cos(), r * t.sin() / 3f64.sqrt())
                    })
                    .sum::<f64>()
                    * std::f64::consts::TAU
                    / n_theta as f64;
                ring * r / 3f64.sqrt()
            };
            simpson(radial, a, b, 16)
        })
        .collect()
}

#[test]
fn mixture_pushforward_matches_polar_quadrature() {
    let spec = DensitySpec::isotropic_mixture(&[(0.5, vec![-1.0, -1.0]), (0.5, vec![2.0, 2.0])], 0.1);
    let q = push_samples(&QoiMap::ellipse(), &sample(&spec, &square(), 100_000, 3).unwrap()).unwrap();
    let p = make_partition(&q, 100).unwrap();
    let h = histogram_density(&q, &p).unwrap();
    let a = gaussian_bin_masses([-1.0, -1.0], 0.1, &p);
    let b = gaussian_bin_masses([2.0, 2.0], 0.1, &p);
    let oracle: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
    assert!((oracle.iter().sum::<f64>() - 1.0).abs() < 1e-4);
    let d = tv(&h.masses(), &oracle);
    assert!(d <= 0.02, "TV {d}");
}

#[test]
fn uniform_prior_pushforward_matches_level_set_areas() {
    let d = square();
    let prior = Measure::new(&DensitySpec::uniform(), &d).unwrap();
    let p = OutputPartition::equal_width(0.0, 100.0, 100).unwrap();
    let h = prior_pushforward_mc(&prior, &QoiMap::ellipse(), &p, 1_000_000, 9).unwrap();
    let oracle: Vec<f64> = (0..100).map(|i| (sublevel_area(p.edges()[i + 1]) - sublevel_area(p.edges()[i])) / 100.0).collect();
    assert!((oracle.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    assert!(h.values.iter().all(|v| *v > 0.0));
    let t = tv(&h.masses(), &oracle);
    assert!(t <= 0.01, "TV {t}");
}

#[test]
fn gaussian_prior_pushforward_is_positive_on_its_range() {
    let d = square();
    let prior = Measure::new(&DensitySpec::gaussian(vec![1.25, 1.25], 1.0), &d).unwrap();
    let map = QoiMap::ellipse();
    let q = push_samples(&map, &prior.sample(100_000, 4).unwrap()).unwrap();
    let p = make_partition(&q, 100).unwrap();
    let h = histogram_density(&q, &p).unwrap();
    for i in 0..p.n_bins() {
        if p.edges()[i + 1] > 0.1 && p.edges()[i] < 60.0 {
            assert!(h.values[i] > 0.0, "bin {i} [{}, {}]", p.edges()[i], p.edges()[i + 1]);
        }
    }
}

#[test]
fn lebesgue_surface_density_matches_monte_carlo() {
    let d = square();
    let map = QoiMap::ellipse();
    let uniform = Measure::new(&DensitySpec::uniform(), &d).unwrap();
    let q = push_samples(&map, &uniform.sample(10_000_000, 17).unwrap()).unwrap();
    let inside = q.iter().filter(|v| (3.95..4.05).contains(*v)).count() as f64;
    let height = inside / q.len() as f64 / 0.1 * d.volume();
    let surface = surface_density_at(SurfaceWeight::Lebesgue, &map, &d, 4.0).unwrap();
    assert!((surface - height).abs() / height <= 0.03, "{surface} vs {height}");
    assert!((surface - std::f64::consts::PI / 3f64.sqrt()).abs() < 1e-3);
}

#[test]
fn doubling_resolution_keeps_cell_averages() {
    let d = square();
    let prior = Measure::new(&DensitySpec::gaussian(vec![1.25, 1.25], 1.0), &d).unwrap();
    let map = QoiMap::ellipse();
    let coarse = OutputPartition::equal_width(0.0, 80.0, 100).unwrap();
    let fine = OutputPartition::equal_width(0.0, 80.0, 200).unwrap();
    let a = prior_pushforward_mc(&prior, &map, &coarse, 100_000, 1).unwrap();
    let b = prior_pushforward_mc(&prior, &map, &fine, 200_000, 2).unwrap();
    let fine_mass = b.masses();
    let merged: Vec<f64> = fine_mass.chunks(2).map(|c| c[0] + c[1]).collect();
    let t = tv(&a.masses(), &merged);
    assert!(t <= 0.02, "TV {t}");
}

proptest! {
    #![proptest_config(Config { cases: 64, failure_persistence: None, ..Config::default() })]

    #[test]
    fn histograms_integrate_to_one(q in prop::collection::vec(-50.0f64..50.0, 2..400), n_bins in 2usize..60) {
        if let Ok(p) = make_partition(&q, n_bins) {
            let h = histogram_density(&q, &p).unwrap();
            prop_assert!((h.total_mass - 1.0).abs() <= 1e-9);
            let direct: f64 = h.values.iter().enumerate().map(|(i, v)| v * p.width(i)).sum();
            prop_assert!((direct - 1.0).abs() <= 1e-9);
            prop_assert!(h.values.iter().all(|v| *v >= 0.0));
        }
    }
}
