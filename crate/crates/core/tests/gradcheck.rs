//! Backpropagation against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topple_core::learn::{backward, batch_loss, forward, ModelParams, INPUT_SIDE, LAYOUT};
use topple_core::stability::StabilityLabel;

const STEP: f64 = 1e-3;
const COORDS_PER_LAYER: usize = 10;

/// A flat background with a few bright rectangles, like a rendered tower.
/// Flat areas give exact pooling ties that stay exact under perturbation.
fn block_input(rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut img = vec![0.25f32; INPUT_SIDE * INPUT_SIDE];
    for _ in 0..4 {
        let (w, h) = (rng.random_range(3..8), rng.random_range(3..8));
        let (x0, y0) = (rng.random_range(4..60 - w), rng.random_range(4..60 - h));
        let v = rng.random_range(0.5f32..1.0);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                img[y * INPUT_SIDE + x] = v;
            }
        }
    }
    img
}

fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-10 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// He-initialised weights with biases that keep every ReLU clearly active.
fn check_point(rng: &mut ChaCha8Rng) -> ModelParams {
    let mut params = ModelParams::init(7);
    for b in [&mut params.conv1_b, &mut params.conv2_b, &mut params.fc1_b] {
        for v in b.iter_mut() {
            *v = rng.random_range(4.0..5.0);
        }
    }
    for v in params.fc2_b.iter_mut() {
        *v = rng.random_range(-0.5..0.5);
    }
    params
}

#[test]
fn every_layer_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let params = check_point(&mut rng);
    let xs = [block_input(&mut rng), block_input(&mut rng)];
    let batch = [
        (&xs[0][..], StabilityLabel::Stable),
        (&xs[1][..], StabilityLabel::Unstable),
    ];
    let (grads, _) = backward(&params, &batch).unwrap();
    let base: Vec<_> = xs.iter().map(|x| forward(&params, x).unwrap()).collect();

    let mut worst = 0.0f64;
    let mut crossings = 0;
    for (layer, (name, _)) in LAYOUT.iter().enumerate() {
        let len = params.blocks()[layer].len();
        for _ in 0..COORDS_PER_LAYER {
            let k = rng.random_range(0..len);
            let perturbed = |h: f64| {
                let mut p = params.clone();
                p.blocks_mut()[layer][k] += h;
                p
            };
            // A ReLU or pooling decision flipping inside [w - h, w + h] makes
            // central differences inexact; count how often that happens.
            let smooth = xs.iter().zip(&base).all(|(x, act)| {
                [STEP, -STEP]
                    .iter()
                    .all(|&h| act.same_pattern(&forward(&perturbed(h), x).unwrap()))
            });
            if !smooth {
                crossings += 1;
            }
            let numeric = (batch_loss(&perturbed(STEP), &batch).unwrap()
                - batch_loss(&perturbed(-STEP), &batch).unwrap())
                / (2.0 * STEP);
            let analytic = grads.blocks()[layer][k];
            let err = relative_error(analytic, numeric);
            worst = worst.max(err);
            assert!(
                err < 1e-4,
                "{name}[{k}]: analytic {analytic:e} numeric {numeric:e} rel {err:e}"
            );
        }
    }
    println!("coordinates whose step crossed a kink: {crossings}");
    println!("worst relative error {worst:e}");
}

#[test]
fn tiny_steps_agree_on_noisy_inputs() {
    // Unstructured inputs have many near-ties, so use a much smaller step.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let params = ModelParams::init(3);
    let xs: Vec<Vec<f32>> = (0..2)
        .map(|_| {
            (0..INPUT_SIDE * INPUT_SIDE)
                .map(|_| rng.random::<f32>())
                .collect()
        })
        .collect();
    let batch = [
        (&xs[0][..], StabilityLabel::Unstable),
        (&xs[1][..], StabilityLabel::Stable),
    ];
    let (grads, _) = backward(&params, &batch).unwrap();
    for (layer, block) in params.blocks().iter().enumerate() {
        let len = block.len();
        for _ in 0..5 {
            let k = rng.random_range(0..len);
            let h = 1e-6;
            let mut plus = params.clone();
            plus.blocks_mut()[layer][k] += h;
            let mut minus = params.clone();
            minus.blocks_mut()[layer][k] -= h;
            let numeric = (batch_loss(&plus, &batch).unwrap()
                - batch_loss(&minus, &batch).unwrap())
                / (2.0 * h);
            let analytic = grads.blocks()[layer][k];
            assert!(
                relative_error(analytic, numeric) < 1e-4,
                "{}[{k}]",
                LAYOUT[layer].0
            );
        }
    }
}

#[test]
fn output_layer_gradient_is_softmax_minus_onehot() {
    // With only the output biases non-zero, d/d(fc2_b) = p - onehot exactly.
    let mut params = ModelParams::zeros();
    params.fc2_b = vec![0.3, -0.2];
    let x = vec![0.5f32; INPUT_SIDE * INPUT_SIDE];
    let (g, _) = backward(&params, &[(&x[..], StabilityLabel::Stable)]).unwrap();
    let e = (0.5f64).exp();
    let p0 = e / (e + 1.0);
    assert!((g.fc2_b[0] - (p0 - 1.0)).abs() < 1e-15);
    assert!((g.fc2_b[1] - (1.0 - p0)).abs() < 1e-15);
    // Hidden activations are all zero, so the weight gradient vanishes.
    assert!(g.fc2_w.iter().all(|&v| v == 0.0));
}
