use devae::flow::{randomize, CouplingFlowStack, FlowConfig};
use devae::tensor::{Graph, ParamStore};
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn stack<T: devae::tensor::Real>(dim: usize, layers: usize, seed: u64, scale: f64) -> (ParamStore<T>, CouplingFlowStack) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let flow = CouplingFlowStack::new(&mut store, &mut rng, FlowConfig::new(dim, layers, 8)).unwrap();
    randomize(&mut store, &flow, &mut rng, scale);
    (store, flow)
}

fn normal_rows(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut rng))
}

/// Laplace expansion; fine for d <= 6.
fn det(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    if n == 1 {
        return m[0][0];
    }
    (0..n)
        .map(|j| {
            let minor: Vec<Vec<f64>> = m[1..].iter().map(|r| r.iter().enumerate().filter(|(c, _)| *c != j).map(|(_, v)| *v).collect()).collect();
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * m[0][j] * det(&minor)
        })
        .sum()
}

fn fd_jacobian(store: &ParamStore<f64>, flow: &CouplingFlowStack, z: &Array2<f64>) -> Vec<Vec<f64>> {
    let d = z.ncols();
    let h = 1e-6;
    let mut jac = vec![vec![0.0; d]; d];
    for j in 0..d {
        let (mut zp, mut zm) = (z.clone(), z.clone());
        zp[[0, j]] += h;
        zm[[0, j]] -= h;
        let fp = flow.forward(store, &zp).unwrap().0;
        let fm = flow.forward(store, &zm).unwrap().0;
        for (i, row) in jac.iter_mut().enumerate() {
            row[j] = (fp[[0, i]] - fm[[0, i]]) / (2.0 * h);
        }
    }
    jac
}

#[test]
fn logdet_matches_numerical_jacobian_for_d4() {
    for seed in 0..20 {
        let (store, flow) = stack::<f64>(4, 3, seed, 0.5);
        let z = normal_rows(1, 4, seed + 100);
        let (_, ld) = flow.forward(&store, &z).unwrap();
        let dj = det(&fd_jacobian(&store, &flow, &z));
        assert!(dj > 0.0, "coupling Jacobian must have positive determinant");
        let rel = (dj.ln() - ld[0]).abs() / ld[0].abs().max(1.0);
        assert!(rel <= 1e-4, "seed {seed}: logdet {} vs numerical {}", ld[0], dj.ln());
    }
}

#[test]
fn pushed_density_integrates_to_one_in_two_dims() {
    for seed in [1, 2, 3] {
        let (store, flow) = stack::<f64>(2, 3, seed, 0.5);
        let n = 641;
        let step = 16.0 / (n - 1) as f64;
        let pts = Array2::from_shape_fn((n * n, 2), |(r, c)| -8.0 + step * if c == 0 { (r / n) as f64 } else { (r % n) as f64 });
        let dens = flow.flow_log_density(&store, &pts).unwrap();
        let mut total = 0.0;
        for r in 0..n * n {
            let (i, j) = (r / n, r % n);
            let w = |k: usize| if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
            total += w(i) * w(j) * dens[r].exp();
        }
        total *= step * step;
        assert!((total - 1.0).abs() < 0.01, "seed {seed}: integral {total}");
    }
}

#[test]
fn one_thousand_points_round_trip_at_64_bit() {
    let (store, flow) = stack::<f64>(16, 3, 9, 0.5);
    let z = normal_rows(1000, 16, 10);
    let back = flow.inverse(&store, &flow.forward(&store, &z).unwrap().0).unwrap();
    let err = (&back - &z).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(err <= 1e-10, "{err}");
}

/// Analytic gradient of the mean flow log-density w.r.t. conditioner weights
/// at 32-bit vs central differences at 64-bit.
#[test]
fn conditioner_gradient_matches_finite_differences() {
    let (store64, flow) = stack::<f64>(4, 2, 5, 0.4);
    let mut store32 = ParamStore::<f32>::new();
    for e in store64.entries() {
        store32.add(e.name.clone(), e.group, e.value.mapv(|v| v as f32));
    }
    let mut store64 = store32.entries().iter().fold(ParamStore::<f64>::new(), |mut s, e| {
        s.add(e.name.clone(), e.group, e.value.mapv(|v| v as f64));
        s
    });
    let z = normal_rows(3, 4, 6);
    let objective = |s: &ParamStore<f64>| flow.flow_log_density(s, &z).unwrap().mean().unwrap();

    let mut g = Graph::new(&store32);
    let zv = g.constant(z.mapv(|v| v as f32));
    let (dens, _, _) = flow.log_density_graph(&mut g, zv).unwrap();
    let loss = g.mean(dens);
    let grads = g.backward(loss);

    let h = 1e-6;
    let (mut num, mut den) = (0.0, 0.0);
    for id in flow.params() {
        let n = store64.get(id).len();
        for k in 0..n {
            let orig = store64.get(id).as_slice().unwrap()[k];
            store64.get_mut(id).as_slice_mut().unwrap()[k] = orig + h;
            let fp = objective(&store64);
            store64.get_mut(id).as_slice_mut().unwrap()[k] = orig - h;
            let fm = objective(&store64);
            store64.get_mut(id).as_slice_mut().unwrap()[k] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let ad = grads.get(id).map_or(0.0, |a| a.as_slice().unwrap()[k] as f64);
            num += (ad - fd).powi(2);
            den += fd * fd;
        }
    }
    assert!(den > 0.0);
    assert!((num / den).sqrt() <= 1e-3, "relative error {}", (num / den).sqrt());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn round_trip_and_pass_through(dim in 2usize..9, layers in 1usize..4, seed in 0u64..10_000, scale in 0.0f64..0.6) {
        let (store, flow) = stack::<f64>(dim, layers, seed, scale);
        let z = normal_rows(32, dim, seed ^ 0xabc);
        let (zf, _) = flow.forward(&store, &z).unwrap();
        let k = dim.div_ceil(2);
        for r in 0..32 {
            for c in 0..k {
                prop_assert_eq!(zf[[r, c]], z[[r, c]]);
            }
        }
        let back = flow.inverse(&store, &zf).unwrap();
        let again = flow.forward(&store, &flow.inverse(&store, &z).unwrap()).unwrap().0;
        for ((a, b), c) in back.iter().zip(z.iter()).zip(again.iter()) {
            prop_assert!((a - b).abs() <= 1e-10);
            prop_assert!((c - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn stack_logdet_is_sum_of_layer_logdets(dim in 2usize..7, layers in 1usize..5, seed in 0u64..10_000) {
        let (store, flow) = stack::<f64>(dim, layers, seed, 0.5);
        let z = normal_rows(8, dim, seed + 1);
        let (_, total) = flow.forward(&store, &z).unwrap();
        let mut g = Graph::new(&store);
        let mut v = g.constant(z.clone());
        let mut sum = Array2::<f64>::zeros((8, 1));
        for layer in &flow.layers {
            let (next, ld) = layer.forward(&mut g, v).unwrap();
            sum += g.value(ld);
            v = next;
        }
        for r in 0..8 {
            prop_assert!((sum[[r, 0]] - total[r]).abs() <= 1e-10 * total[r].abs().max(1.0));
        }
    }
}
