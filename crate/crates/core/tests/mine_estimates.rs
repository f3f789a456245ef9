use fairgen::mine::{mine_estimate, MineConfig};
use fairgen::rng;
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

const N: usize = 10_000;

fn binary_pairs(identical: bool, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let mut r = rng::from_seed(seed);
    let w = Array2::from_shape_fn((N, 1), |_| f64::from(u8::from(r.gen_bool(0.5))));
    let s = if identical {
        w.clone()
    } else {
        Array2::from_shape_fn((N, 1), |_| f64::from(u8::from(r.gen_bool(0.5))))
    };
    (w, s)
}

fn gaussian_pairs(rho: f64, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let mut r = rng::from_seed(seed);
    let mut w = Array2::zeros((N, 1));
    let mut s = Array2::zeros((N, 1));
    for i in 0..N {
        let a: f64 = r.sample(StandardNormal);
        let b: f64 = r.sample(StandardNormal);
        w[[i, 0]] = a;
        s[[i, 0]] = rho * a + (1.0 - rho * rho).sqrt() * b;
    }
    (w, s)
}

#[test]
fn independent_binaries_near_zero() {
    let (w, s) = binary_pairs(false, 1);
    let e = mine_estimate(w.view(), s.view(), &MineConfig::default(), 7).unwrap();
    println!("independent: {e:?}");
    assert!(e.value_nats.abs() < 0.02, "{e:?}");
}

#[test]
fn identical_binaries_near_ln2() {
    let (w, s) = binary_pairs(true, 2);
    let e = mine_estimate(w.view(), s.view(), &MineConfig::default(), 7).unwrap();
    println!("identical: {e:?}");
    assert!((e.value_nats - std::f64::consts::LN_2).abs() < 0.05, "{e:?}");
}

#[test]
fn gaussian_closed_form() {
    for rho in [0.5f64, 0.8] {
        let truth = -0.5 * (1.0 - rho * rho).ln();
        let (w, s) = gaussian_pairs(rho, 3);
        let e = mine_estimate(w.view(), s.view(), &MineConfig::default(), 7).unwrap();
        println!("rho {rho}: {e:?} truth {truth}");
        assert!((e.value_nats - truth).abs() < 0.05, "rho {rho}: {e:?} vs {truth}");
    }
}
