use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sstu::tensor::{
    concat_channels, conv3x3, maxpool2, split_channels, BnMode, GradTape, ImageTensor, Param, Tensor, Var,
};

const NAMES: [&str; 4] = ["p0", "p1", "p2", "p3"];
const STEP: f64 = 1e-4;
const FLOOR: f64 = 1e-6;

type Graph = for<'a> fn(&mut GradTape<'a, f64>, Var, &[Param<'a, f64>]) -> sstu::Result<Var>;

struct Case {
    inputs: Vec<ImageTensor<f64>>,
    params: Vec<Tensor<f64>>,
    /// Parameters excluded from the check (batch-norm running statistics).
    trainable: usize,
    graph: Graph,
}

fn forward(inputs: &[ImageTensor<f64>], params: &[Tensor<f64>], graph: Graph, upstream: &[ImageTensor<f64>]) -> f64 {
    let ps: Vec<Param<f64>> = params.iter().zip(NAMES).map(|(t, n)| Param::new(n, t)).collect();
    let mut tape = GradTape::new();
    let x = tape.input(inputs.to_vec()).unwrap();
    let y = graph(&mut tape, x, &ps).unwrap();
    tape.value(y)
        .iter()
        .zip(upstream)
        .map(|(o, r)| o.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// Largest relative error between analytic and central-difference
/// gradients, over every input and trainable parameter entry.
fn max_rel_error(case: &Case, rng: &mut ChaCha8Rng) -> f64 {
    let ps: Vec<Param<f64>> = case.params.iter().zip(NAMES).map(|(t, n)| Param::new(n, t)).collect();
    let mut tape = GradTape::new();
    let x = tape.input(case.inputs.clone()).unwrap();
    let y = (case.graph)(&mut tape, x, &ps).unwrap();
    let upstream: Vec<ImageTensor<f64>> = tape
        .value(y)
        .iter()
        .map(|o| {
            let (c, h, w) = o.shape();
            random_image(rng, c, h, w)
        })
        .collect();
    let grads = tape.backward(y, upstream.clone()).unwrap();
    let mut worst = 0.0f64;

    let d_in = grads.input(x).unwrap();
    for b in 0..case.inputs.len() {
        for i in 0..case.inputs[b].data().len() {
            let mut plus = case.inputs.clone();
            plus[b].data_mut()[i] += STEP;
            let mut minus = case.inputs.clone();
            minus[b].data_mut()[i] -= STEP;
            let num = (forward(&plus, &case.params, case.graph, &upstream)
                - forward(&minus, &case.params, case.graph, &upstream))
                / (2.0 * STEP);
            worst = worst.max(rel(d_in[b].data()[i], num));
        }
    }
    for p in 0..case.trainable {
        let analytic = grads.param(NAMES[p]).unwrap();
        for i in 0..case.params[p].len() {
            let mut plus = case.params.clone();
            plus[p].data_mut()[i] += STEP;
            let mut minus = case.params.clone();
            minus[p].data_mut()[i] -= STEP;
            let num = (forward(&case.inputs, &plus, case.graph, &upstream)
                - forward(&case.inputs, &minus, case.graph, &upstream))
                / (2.0 * STEP);
            worst = worst.max(rel(analytic.data()[i], num));
        }
    }
    worst
}

fn random_image(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> ImageTensor<f64> {
    ImageTensor::from_fn(c, h, w, |_, _, _| rng.random_range(-1.0..1.0))
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values at least `0.01` away from the ReLU kink.
fn away_from_zero(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> ImageTensor<f64> {
    ImageTensor::from_fn(c, h, w, |_, _, _| {
        let m = rng.random_range(0.01..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Pairwise distinct values on a grid coarser than the probe step, so no
/// pooling window has a near tie.
fn distinct(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> ImageTensor<f64> {
    let n = c * h * w;
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 / n as f64 - 0.5).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    ImageTensor::new(c, h, w, vals).unwrap()
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize, usize) {
    let cin = rng.random_range(1..=4);
    let cout = rng.random_range(1..=4);
    let h = 2 * rng.random_range(1..=4);
    let w = 2 * rng.random_range(1..=4);
    (cin, cout, h, w)
}

fn conv3_graph<'a>(t: &mut GradTape<'a, f64>, x: Var, p: &[Param<'a, f64>]) -> sstu::Result<Var> {
    t.conv3x3(x, p[0], p[1])
}

fn conv1_graph<'a>(t: &mut GradTape<'a, f64>, x: Var, p: &[Param<'a, f64>]) -> sstu::Result<Var> {
    t.conv1x1(x, p[0], p[1])
}

fn tconv_graph<'a>(t: &mut GradTape<'a, f64>, x: Var, p: &[Param<'a, f64>]) -> sstu::Result<Var> {
    t.upsample_tconv2(x, p[0], p[1])
}

fn bn_train_graph<'a>(t: &mut GradTape<'a, f64>, x: Var, p: &[Param<'a, f64>]) -> sstu::Result<Var> {
    t.batch_norm(x, p[0], p[1], p[2], p[3], BnMode::Train)
}

fn bn_infer_graph<'a>(t: &mut GradTape<'a, f64>, x: Var, p: &[Param<'a, f64>]) -> sstu::Result<Var> {
    t.batch_norm(x, p[0], p[1], p[2], p[3], BnMode::Infer)
}

fn relu_graph<'a>(t: &mut GradTape<'a, f64>, x: Var, _: &[Param<'a, f64>]) -> sstu::Result<Var> {
    t.relu(x)
}

fn sigmoid_graph<'a>(t: &mut GradTape<'a, f64>, x: Var, _: &[Param<'a, f64>]) -> sstu::Result<Var> {
    t.sigmoid(x)
}

fn pool_graph<'a>(t: &mut GradTape<'a, f64>, x: Var, _: &[Param<'a, f64>]) -> sstu::Result<Var> {
    t.maxpool2(x)
}

fn concat_graph<'a>(t: &mut GradTape<'a, f64>, x: Var, p: &[Param<'a, f64>]) -> sstu::Result<Var> {
    let y = t.conv1x1(x, p[0], p[1])?;
    t.concat(x, y)
}

fn bn_params(rng: &mut ChaCha8Rng, c: usize) -> Vec<Tensor<f64>> {
    let gamma = Tensor::new(vec![c], (0..c).map(|_| rng.random_range(0.5..1.5)).collect()).unwrap();
    let beta = random_tensor(rng, vec![c]);
    let mean = random_tensor(rng, vec![c]);
    let var = Tensor::new(vec![c], (0..c).map(|_| rng.random_range(0.5..2.0)).collect()).unwrap();
    vec![gamma, beta, mean, var]
}

fn cases(seed: u64) -> Vec<(&'static str, Case, ChaCha8Rng)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |name, case, rng: &mut ChaCha8Rng| out.push((name, case, ChaCha8Rng::seed_from_u64(rng.random())));

    let (cin, cout, h, w) = dims(&mut rng);
    let case = Case {
        inputs: vec![random_image(&mut rng, cin, h, w)],
        params: vec![
            random_tensor(&mut rng, vec![cout, cin, 3, 3]),
            random_tensor(&mut rng, vec![cout]),
        ],
        trainable: 2,
        graph: conv3_graph,
    };
    push("conv3x3", case, &mut rng);

    let (cin, cout, h, w) = dims(&mut rng);
    let case = Case {
        inputs: vec![random_image(&mut rng, cin, h, w)],
        params: vec![
            random_tensor(&mut rng, vec![cout, cin, 1, 1]),
            random_tensor(&mut rng, vec![cout]),
        ],
        trainable: 2,
        graph: conv1_graph,
    };
    push("conv1x1", case, &mut rng);

    let (cin, cout, h, w) = dims(&mut rng);
    let case = Case {
        inputs: vec![random_image(&mut rng, cin, h / 2, w / 2)],
        params: vec![
            random_tensor(&mut rng, vec![cin, cout, 2, 2]),
            random_tensor(&mut rng, vec![cout]),
        ],
        trainable: 2,
        graph: tconv_graph,
    };
    push("upsample_tconv2", case, &mut rng);

    let (c, _, h, w) = dims(&mut rng);
    let case = Case {
        inputs: (0..2).map(|_| random_image(&mut rng, c, h, w)).collect(),
        params: bn_params(&mut rng, c),
        trainable: 2,
        graph: bn_train_graph,
    };
    push("batch_norm train", case, &mut rng);

    let (c, _, h, w) = dims(&mut rng);
    let case = Case {
        inputs: vec![random_image(&mut rng, c, h, w)],
        params: bn_params(&mut rng, c),
        trainable: 2,
        graph: bn_infer_graph,
    };
    push("batch_norm infer", case, &mut rng);

    let (c, _, h, w) = dims(&mut rng);
    let case = Case {
        inputs: vec![away_from_zero(&mut rng, c, h, w)],
        params: vec![],
        trainable: 0,
        graph: relu_graph,
    };
    push("relu", case, &mut rng);

    let (c, _, h, w) = dims(&mut rng);
    let case = Case {
        inputs: vec![random_image(&mut rng, c, h, w).map(|v| 3.0 * v)],
        params: vec![],
        trainable: 0,
        graph: sigmoid_graph,
    };
    push("sigmoid", case, &mut rng);

    let (c, _, h, w) = dims(&mut rng);
    let case = Case {
        inputs: vec![distinct(&mut rng, c, h, w)],
        params: vec![],
        trainable: 0,
        graph: pool_graph,
    };
    push("maxpool2", case, &mut rng);

    let (cin, cout, h, w) = dims(&mut rng);
    let case = Case {
        inputs: vec![random_image(&mut rng, cin, h, w)],
        params: vec![
            random_tensor(&mut rng, vec![cout, cin, 1, 1]),
            random_tensor(&mut rng, vec![cout]),
        ],
        trainable: 2,
        graph: concat_graph,
    };
    push("concat", case, &mut rng);
    out
}

#[test]
fn every_primitive_matches_finite_differences_over_100_seeds() {
    let mut worst: Vec<(&str, f64)> = Vec::new();
    for seed in 0..100 {
        for (name, case, mut rng) in cases(seed) {
            let e = max_rel_error(&case, &mut rng);
            assert!(e < 1e-4, "{name} seed {seed}: relative error {e:.3e}");
            match worst.iter_mut().find(|(n, _)| *n == name) {
                Some(w) => w.1 = w.1.max(e),
                None => worst.push((name, e)),
            }
        }
    }
    for (name, e) in worst {
        println!("{name}: worst relative error {e:.3e}");
    }
}

#[test]
fn conv3x3_4x4_single_channel_parameter_gradients_at_step_1e3() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let input = random_image(&mut rng, 1, 4, 4).cast::<f32>();
    let w = Tensor::new(
        vec![1, 1, 3, 3],
        (0..9).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
    )
    .unwrap();
    let b = Tensor::new(vec![1], vec![0.3f32]).unwrap();
    let upstream: Vec<f32> = (0..16).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let r = ImageTensor::new(1, 4, 4, upstream.clone()).unwrap();

    let mut tape = GradTape::new();
    let x = tape.input(vec![input.clone()]).unwrap();
    let y = tape.conv3x3(x, Param::new("w", &w), Param::new("b", &b)).unwrap();
    let g = tape.backward(y, vec![r]).unwrap();

    // Loss evaluated in f64 from a direct padded-window summation.
    let loss = |w: &[f64], b: f64| -> f64 {
        let mut s = 0.0;
        for yy in 0..4i32 {
            for xx in 0..4i32 {
                let mut acc = b;
                for ky in 0..3i32 {
                    for kx in 0..3i32 {
                        let (sy, sx) = (yy + ky - 1, xx + kx - 1);
                        if (0..4).contains(&sy) && (0..4).contains(&sx) {
                            acc += w[(ky * 3 + kx) as usize] * input.get(0, sy as usize, sx as usize) as f64;
                        }
                    }
                }
                s += acc * upstream[(yy * 4 + xx) as usize] as f64;
            }
        }
        s
    };
    let w64: Vec<f64> = w.data().iter().map(|&v| v as f64).collect();
    let h = 1e-3;
    for i in 0..9 {
        let (mut p, mut m) = (w64.clone(), w64.clone());
        p[i] += h;
        m[i] -= h;
        let num = (loss(&p, 0.3) - loss(&m, 0.3)) / (2.0 * h);
        let a = g.param("w").unwrap().data()[i] as f64;
        assert!(rel(a, num) < 1e-4, "w[{i}]: {a} vs {num}");
    }
    let num_b = (loss(&w64, 0.3 + h) - loss(&w64, 0.3 - h)) / (2.0 * h);
    assert!(rel(g.param("b").unwrap().data()[0] as f64, num_b) < 1e-4);
}

fn arb_image(c: usize, h: usize, w: usize) -> impl Strategy<Value = ImageTensor<f32>> {
    prop::collection::vec(-2.0f32..2.0, c * h * w).prop_map(move |d| ImageTensor::new(c, h, w, d).unwrap())
}

proptest! {
    #[test]
    fn conv3x3_is_linear(
        (x, y, k) in (1usize..4, 2usize..4, 1usize..7, 1usize..7).prop_flat_map(|(cin, cout, h, w)| (
            arb_image(cin, h, w),
            arb_image(cin, h, w),
            prop::collection::vec(-1.0f32..1.0, cout * cin * 9).prop_map(move |d| Tensor::new(vec![cout, cin, 3, 3], d).unwrap()),
        )),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let (x, y, k) = (x.cast::<f64>(), y.cast::<f64>(), k.cast::<f64>());
        let zero = Tensor::zeros(vec![k.shape()[0]]);
        let mix = ImageTensor::new(x.channels(), x.height(), x.width(),
            x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
        let lhs = conv3x3(&mix, &k, &zero).unwrap();
        let cx = conv3x3(&x, &k, &zero).unwrap();
        let cy = conv3x3(&y, &k, &zero).unwrap();
        for (i, v) in lhs.data().iter().enumerate() {
            let rhs = a * cx.data()[i] + b * cy.data()[i];
            prop_assert!((v - rhs).abs() <= 1e-6, "{v} vs {rhs}");
        }
    }

    #[test]
    fn maxpool_bounds(x in (1usize..4, 1usize..5, 1usize..5).prop_flat_map(|(c, h, w)| arb_image(c, 2 * h, 2 * w))) {
        let (p, _) = maxpool2(&x).unwrap();
        let global = x.data().iter().cloned().fold(f32::MIN, f32::max);
        for c in 0..x.channels() {
            for y in 0..p.height() {
                for xx in 0..p.width() {
                    let v = p.get(c, y, xx);
                    prop_assert!(v <= global);
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        prop_assert!(v >= x.get(c, 2 * y + dy, 2 * xx + dx));
                    }
                }
            }
        }
    }

    #[test]
    fn concat_then_split_is_exact(
        (a, b) in (1usize..4, 0usize..4, 1usize..6, 1usize..6).prop_flat_map(|(ca, cb, h, w)| (arb_image(ca, h, w), arb_image(cb, h, w)))
    ) {
        let joined = concat_channels(&a, &b).unwrap();
        let (a2, b2) = split_channels(&joined, a.channels()).unwrap();
        prop_assert!(a2.data().iter().zip(a.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        prop_assert!(b2.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        prop_assert_eq!(b2.shape(), b.shape());
    }

    #[test]
    fn forward_is_deterministic(x in arb_image(3, 6, 6), seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Tensor::new(vec![4, 3, 3, 3], (0..108).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap();
        let b = Tensor::new(vec![4], vec![0.1, -0.2, 0.3, 0.0]).unwrap();
        let run = || {
            let mut tape = GradTape::new();
            let v = tape.input(vec![x.clone(), x.flip_horizontal()]).unwrap();
            let c = tape.conv3x3(v, Param::new("w", &w), Param::new("b", &b)).unwrap();
            let r = tape.relu(c).unwrap();
            let p = tape.maxpool2(r).unwrap();
            let s = tape.sigmoid(p).unwrap();
            tape.value(s).iter().map(|t| t.checksum()).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }
}
