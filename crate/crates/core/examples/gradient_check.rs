//! Backprop versus central differences on a conv → batch-norm → leaky → linear
//! → cross-entropy chain.
//!
//! cargo run --release --example gradient_check

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use secnn::{Graph, Mode, RunningStats, Tensor};

const STEP: f32 = 1e-3;

fn loss(inputs: &[Tensor]) -> (Graph, Vec<secnn::Var>, secnn::Var) {
    let mut g = Graph::new();
    let v: Vec<_> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let running = RunningStats::identity(2);
    let y = g.conv2d(v[0], v[1], v[2], 1, 1).unwrap();
    let (y, _) = g.batchnorm2d(y, v[3], v[4], &running, Mode::Train, 1e-5).unwrap();
    let y = g.leaky_relu(y, 0.2);
    let y = g.flatten(y);
    let y = g.linear(y, v[5], v[6]).unwrap();
    let l = g.cross_entropy(y, &[0, 2, 1]).unwrap();
    (g, v, l)
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut rand = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0));
    let inputs = vec![
        rand(&[3, 1, 4, 4]),
        rand(&[2, 1, 3, 3]),
        rand(&[2]),
        rand(&[2]),
        rand(&[2]),
        rand(&[3, 32]),
        rand(&[3]),
    ];
    let names = ["x", "conv.w", "conv.b", "bn.gamma", "bn.beta", "fc.w", "fc.b"];

    let (mut g, vars, l) = loss(&inputs);
    let grads = g.backward(l).unwrap();
    for (i, name) in names.iter().enumerate() {
        let analytic = grads.get(vars[i]).unwrap();
        let mut diff = 0.0f64;
        let mut norm = 0.0f64;
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= STEP;
            let (gp, _, lp) = loss(&plus);
            let (gm, _, lm) = loss(&minus);
            let numeric = (gp.value(lp).data()[0] as f64 - gm.value(lm).data()[0] as f64) / (2.0 * STEP as f64);
            let a = analytic.data()[j] as f64;
            diff += (a - numeric).powi(2);
            norm += a * a;
        }
        println!("{name:9} relative error {:.2e}", diff.sqrt() / norm.sqrt().max(0.1));
    }
}
