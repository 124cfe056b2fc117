use dvelab::diffcore::{grad_check, GradCheckOptions, Shape};
use dvelab::models::{ActorCritic, HeadKind, NetConfig};
use dvelab::seed::rng_from_seed;
use rand::Rng;

fn heads() -> [HeadKind; 3] {
    [HeadKind::Baseline, HeadKind::Dynamic { n_basis: 3 }, HeadKind::Control { hidden: 5 }]
}

#[test]
fn full_network_gradients_match_finite_differences() {
    let (d, a, b, hsz) = (5, 3, 2, 8);
    for head in heads() {
        for seed in 0..10u64 {
            let cfg = NetConfig::new(d, a, head).with_sizes(hsz, hsz);
            let mut rng = rng_from_seed(seed);
            let net = ActorCritic::new(cfg, &mut rng).unwrap();
            let obs: Vec<f64> = (0..b * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let hid: Vec<f64> = (0..b * hsz).map(|_| rng.random_range(-0.5..0.5)).collect();
            let cel: Vec<f64> = (0..b * hsz).map(|_| rng.random_range(-0.5..0.5)).collect();
            let weights: Vec<f64> = (0..b * a).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut store = net.params().clone();
            let report = grad_check(&mut store, GradCheckOptions::default(), |t, p| {
                let o = t.constant(obs.clone(), Shape::new(b, d))?;
                let h = t.constant(hid.clone(), Shape::new(b, hsz))?;
                let c = t.constant(cel.clone(), Shape::new(b, hsz))?;
                let w = t.constant(weights.clone(), Shape::new(b, a))?;
                let out = net.forward(t, p, o, h, c).expect("forward");
                let pol = t.mul(out.log_probs, w)?;
                let pol = t.sum(pol)?;
                let v = t.square(out.critic.value)?;
                let v = t.mean(v)?;
                let cell = t.tanh(out.cell)?;
                let cell = t.mean(cell)?;
                let total = t.add(pol, v)?;
                t.add(total, cell)
            })
            .unwrap();
            assert!(report.passed, "{} seed {seed}: {:?}", head.name(), report.failing().collect::<Vec<_>>());
        }
    }
}
