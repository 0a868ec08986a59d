use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use renalseg::train::{combined_loss, combined_loss_grad, LossConfig};
use renalseg::unet3d::{Network, NetworkConfig, Tensor};

#[test]
fn network_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = NetworkConfig { base_channels: 2, levels: 2, ..Default::default() };
    let mut net = Network::<f64>::build(&cfg, 1).unwrap();
    let dims = [8, 12, 12];
    let n: usize = dims.iter().product();
    let input: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let target: Vec<u8> = (0..n).map(|i| ((i / 5) % 4) as u8).collect();
    let x = Tensor::new([1, 1, dims[0], dims[1], dims[2]], input).unwrap();
    let loss = LossConfig { ce_class_weights: [0.5, 1.0, 1.5, 2.0], ..Default::default() };
    let loss_of = |net: &Network<f64>| {
        let o = net.forward(&x).unwrap();
        combined_loss(&o.scores, &o.probs, &target, &loss).unwrap().total
    };

    let (o, caches) = net.forward_train(&x).unwrap();
    let (_, g) = combined_loss_grad(&o.scores, &o.probs, &target, &loss).unwrap();
    let mut grads = net.zero_grads();
    net.backward(&caches[0], g.sample(0), &mut grads);

    let h = 1e-6;
    let mut checked = 0;
    for pi in 0..net.params.len() {
        let len = net.params[pi].data.len();
        for idx in [0, len / 2, len - 1] {
            let orig = net.params[pi].data[idx];
            net.params[pi].data[idx] = orig + h;
            let up = loss_of(&net);
            net.params[pi].data[idx] = orig - h;
            let down = loss_of(&net);
            net.params[pi].data[idx] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[pi][idx];
            let scale = numeric.abs().max(analytic.abs());
            if scale < 1e-7 {
                // conv biases ahead of instance norm have zero gradient
                assert!(numeric.abs() < 1e-7, "{} numeric {numeric}", net.params[pi].name);
                continue;
            }
            checked += 1;
            assert!(
                (numeric - analytic).abs() / scale < 1e-4,
                "{}[{idx}]: analytic {analytic} numeric {numeric}",
                net.params[pi].name
            );
        }
    }
    assert!(checked > 50, "{checked}");
}
