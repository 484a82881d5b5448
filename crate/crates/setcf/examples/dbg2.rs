use setcf::containment::{Functional, McSettings};
use setcf::model::*;
use setcf::oracle::*;
use setcf::num::keyed_rng;
use rand::Rng;
fn main() {
    let mut rng = keyed_rng(2, &[]);
    let u = |r: &mut rand_chacha::ChaCha8Rng, a: f64, b: f64| a + (b - a) * r.random::<f64>();
    let s = OracleSettings { eta_draws: 100_000, v_resolution: 400, seed: 2 };
    for i in 0..400 {
        let ordered = i % 2 == 1;
        let (spec, mut th) = (if ordered { ModelSpec::ordered() } else { ModelSpec::binary_roy() }, ThetaPoint::new(vec![], vec![], PiTable::new()));
        let (lo, hi) = if ordered { let l = u(&mut rng, -2.0, 1.0); (l, l + u(&mut rng, 0.1, 3.0)) } else { (0.0, 0.0) };
        th.mu = vec![u(&mut rng, -2.0, 2.0), u(&mut rng, -2.0, 2.0)];
        th.rho = vec![u(&mut rng, -0.9, 0.9)];
        th.pi = [(vec![0], u(&mut rng, 0.05, 0.95)), (vec![1], u(&mut rng, 0.05, 0.95))].into_iter().collect();
        if ordered { th.cutoffs = Some((lo, hi)); }
        let cell = Cell::new(vec![if rng.random::<bool>() {1.0} else {0.0}], vec![], vec![if rng.random::<bool>() {1.0} else {0.0}]);
        let f = Functional::new(&spec, &cell, &th, &McSettings::default()).unwrap();
        let o = oracle_containment(&spec, &cell, &th, &s).unwrap();
        for (m, fr) in o.iter().enumerate() {
            let a = f.containment_mask(m as u32);
            if (a - fr.value).abs() > 0.01 { println!("{i} {:?} {:?} m={m} a={a} o={}", th, cell, fr.value); }
        }
        if i > 40 { break; }
    }
}
