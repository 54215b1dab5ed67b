use devae::corpus::LabeledSentence;
use devae::feature_layer::{upper_objective, UpperLossWeights};
use devae::flow::randomize;
use devae::model::{DeVae, ModelConfig};
use devae::oracles::tiny_model_config;
use devae::tensor::{Graph, ParamStore, Real};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Copy)]
enum Which {
    Lower,
    Upper,
}

fn batch() -> Vec<LabeledSentence> {
    vec![
        LabeledSentence { tokens: vec![5, 9, 4, 10], label: 0, raw_text: String::new() },
        LabeledSentence { tokens: vec![7, 6], label: 1, raw_text: String::new() },
    ]
}

fn loss<T: Real>(m: &DeVae<T>, noise: &Array2<T>, which: Which) -> (f64, Vec<Array2<f64>>) {
    let b = batch();
    let seqs: Vec<&[u32]> = b.iter().map(|s| s.tokens.as_slice()).collect();
    let labels: Vec<usize> = b.iter().map(|s| s.label).collect();
    let mut g = Graph::new(&m.store);
    let l = match which {
        Which::Lower => m.vae.lower_elbo(&mut g, &seqs, noise.clone(), 0.4).unwrap().0,
        Which::Upper => {
            let p = m.vae.pass(&mut g, &seqs, noise.clone()).unwrap();
            let w = UpperLossWeights { beta: 10.0, gamma_kl: 10.0 };
            upper_objective(&mut g, &m.flow, &m.scaler, p.z, p.mu, p.log_sigma, &labels, w).unwrap().0
        }
    };
    let grads = g.backward(l);
    let flat = m
        .store
        .ids()
        .map(|id| grads.get(id).map_or_else(|| Array2::zeros(m.store.get(id).dim()), |a| a.mapv(|v| v.f64())))
        .collect();
    (g.scalar(l).f64(), flat)
}

fn cast_store<S: Real, T: Real>(src: &ParamStore<S>, dst: &mut ParamStore<T>) {
    for id in src.ids() {
        *dst.get_mut(id) = src.get(id).mapv(|v| T::c(v.f64()));
    }
}

/// ||autodiff - central differences|| / ||central differences||, with the
/// reference always evaluated at 64-bit on the same parameter values.
fn relative_error<T: Real>(cfg: ModelConfig, which: Which) -> f64 {
    let mut seed_model = DeVae::<f64>::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    randomize(&mut seed_model.store, &seed_model.flow, &mut rng, 0.3);
    let mut model = DeVae::<T>::new(cfg.clone()).unwrap();
    cast_store(&seed_model.store, &mut model.store);
    let mut reference = DeVae::<f64>::new(cfg).unwrap();
    cast_store(&model.store, &mut reference.store);

    let d = model.latent_dim();
    let noise_t = Array2::from_shape_fn((2, d), |_| {
        let v: f64 = StandardNormal.sample(&mut rng);
        T::c(v)
    });
    let noise64 = noise_t.mapv(|v| v.f64());
    let (_, analytic) = loss(&model, &noise_t, which);

    let h = 1e-6;
    let ids: Vec<_> = reference.store.ids().collect();
    let (mut num, mut den) = (0.0, 0.0);
    for (k, id) in ids.into_iter().enumerate() {
        for i in 0..reference.store.get(id).len() {
            let orig = reference.store.get(id).as_slice().unwrap()[i];
            reference.store.get_mut(id).as_slice_mut().unwrap()[i] = orig + h;
            let up = loss(&reference, &noise64, which).0;
            reference.store.get_mut(id).as_slice_mut().unwrap()[i] = orig - h;
            let down = loss(&reference, &noise64, which).0;
            reference.store.get_mut(id).as_slice_mut().unwrap()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            num += (analytic[k].as_slice().unwrap()[i] - fd).powi(2);
            den += fd * fd;
        }
    }
    assert!(den > 0.0);
    (num / den).sqrt()
}

#[test]
fn lower_elbo_gradient_64_bit() {
    let e = relative_error::<f64>(tiny_model_config(), Which::Lower);
    assert!(e <= 1e-6, "{e}");
}

#[test]
fn lower_elbo_gradient_32_bit() {
    let e = relative_error::<f32>(tiny_model_config(), Which::Lower);
    assert!(e <= 1e-3, "{e}");
}

#[test]
fn upper_objective_gradient_64_bit() {
    let e = relative_error::<f64>(tiny_model_config(), Which::Upper);
    assert!(e <= 1e-6, "{e}");
}

#[test]
fn upper_objective_gradient_32_bit() {
    let e = relative_error::<f32>(tiny_model_config(), Which::Upper);
    assert!(e <= 1e-3, "{e}");
}

#[test]
fn gradients_hold_with_alternating_split_and_no_per_step_latent() {
    let mut cfg = tiny_model_config();
    cfg.flow_alternating = true;
    cfg.conditioning.per_step_input = false;
    let e = relative_error::<f64>(cfg, Which::Upper);
    assert!(e <= 1e-6, "{e}");
}
