use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use proptest::prelude::*;

fn tiny(mode: ConditioningMode) -> ModelConfig {
    ModelConfig {
        mode,
        num_classes: 3,
        num_base: 2,
        encoder: EncoderConfig {
            image_size: 8,
            channels: vec![2, 3],
            embed_dim: 3,
        },
        decoder: DecoderConfig {
            resolution: 4,
            fc_channels: 2,
            up_channels: vec![2],
            refine_channels: vec![],
        },
        conditioning: ConditioningConfig {
            codebooks: 2,
            codes: 3,
            prior_channels: vec![2],
            ..ConditioningConfig::default()
        },
        seed: 5,
    }
}

fn model(mode: ConditioningMode) -> ReconstructionModel {
    let mut m = ReconstructionModel::new(&tiny(mode)).unwrap();
    if mode == ConditioningMode::AvgPrior {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for c in 0..3 {
            let p = (0..64).map(|_| rng.random_range(0.0..1.0)).collect();
            m.set_prior(c, &ProbGrid::new(4, p).unwrap()).unwrap();
        }
    }
    m
}

fn images(n: usize, seed: u64) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // values representable in f32 so single images round-trip exactly
    let data = (0..n * 64).map(|_| rng.random_range(0.0f32..1.0) as f64).collect();
    FeatureMap::new(n, 1, [1, 8, 8], data).unwrap()
}

fn targets(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * 64).map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 }).collect()
}

#[test]
fn embedding_shapes_and_determinism() {
    let m = model(ConditioningMode::Gce);
    let x = images(3, 1);
    let img: Vec<f32> = x.sample(1).iter().map(|&v| v as f32).collect();
    let e = m.encode_image(&img).unwrap();
    assert_eq!(e.len(), 3);
    assert_eq!(e, m.encode_image(&img).unwrap());
    let batch = m.encode_images(&x).unwrap();
    for (a, b) in batch.sample(1).iter().zip(&e) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(m.encode_image(&[0.0; 10]).is_err());
}

#[test]
fn default_embedding_width() {
    let m = ReconstructionModel::new(&ModelConfig {
        encoder: EncoderConfig { image_size: 32, channels: vec![2], embed_dim: 128 },
        decoder: DecoderConfig { resolution: 32, fc_channels: 1, up_channels: vec![1], refine_channels: vec![] },
        ..ModelConfig::default()
    })
    .unwrap();
    let img = vec![0.5f32; 32 * 32];
    assert_eq!(m.encode_image(&img).unwrap().len(), 128);
    assert_eq!(m.forward(&img, 0).unwrap().resolution(), 32);
}

#[test]
fn full_decoder_has_seven_conv_layers() {
    assert_eq!(DecoderConfig::default().conv_layers(), 7);
    assert_eq!(DecoderConfig::default().start_size().unwrap(), 2);
}

#[test]
fn gce_lookup_and_bad_class() {
    let m = model(ConditioningMode::Gce);
    assert_eq!(m.gce_embedding(1).unwrap(), m.gce_embedding(1).unwrap());
    assert!(matches!(m.gce_embedding(3), Err(Error::Index(_))));
    assert!(matches!(model(ConditioningMode::Cgce).gce_embedding(0), Err(Error::Argument(_))));
}

#[test]
fn compose_example() {
    // M = 2 codebooks of m = 2 codes with D = 1
    let e = compose_embedding(&[1.0, 2.0, 3.0, 4.0], 1, &[0.55, 0.45, 1.0, 0.0]).unwrap();
    assert!((e[0] - 4.45).abs() < 1e-12);
    assert!(compose_embedding(&[1.0, 2.0], 1, &[1.0]).is_err());
}

#[test]
fn one_hot_attention_selects_codes() {
    let mut m = model(ConditioningMode::Cgce);
    let Conditioning::Cgce { codebooks, logits } = &mut m.conditioning else { unreachable!() };
    // code 1 of each codebook dominates
    logits.row_mut(0).copy_from_slice(&[0.0, 9.0, 0.0, 0.0, 9.0, 0.0]);
    let expect: Vec<f64> = (0..3).map(|i| codebooks.value[3 + i] + codebooks.value[12 + i]).collect();
    let a = m.attention(0).unwrap();
    assert_eq!(a, vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
    let e = m.cgce_embedding(0).unwrap();
    for (x, y) in e.iter().zip(&expect) {
        assert!((x - y).abs() < 1e-12);
    }
    let Conditioning::Cgce { codebooks, .. } = &mut m.conditioning else { unreachable!() };
    codebooks.value.fill(0.0);
    assert!(m.cgce_embedding(2).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn attention_rows_are_simplex_points() {
    let m = model(ConditioningMode::Cgce);
    for c in 0..3 {
        for row in m.attention(c).unwrap().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }
}

proptest! {
    #[test]
    fn composition_is_linear(
        a in prop::collection::vec(0.0f64..1.0, 6),
        b in prop::collection::vec(0.0f64..1.0, 6),
        lam in 0.0f64..1.0,
    ) {
        let m = model(ConditioningMode::Cgce);
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| lam * x + (1.0 - lam) * y).collect();
        let ea = m.cgce_embedding_from(&a).unwrap();
        let eb = m.cgce_embedding_from(&b).unwrap();
        let em = m.cgce_embedding_from(&mix).unwrap();
        for i in 0..3 {
            prop_assert!((em[i] - (lam * ea[i] + (1.0 - lam) * eb[i])).abs() < 1e-12);
        }
    }
}

#[test]
fn outputs_strictly_inside_unit_interval() {
    for mode in ConditioningMode::ALL {
        let m = model(mode);
        let x = images(2, 3);
        for p in m.forward_batch(&x, &[0, 2]).unwrap() {
            assert!(p.probs().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}

#[test]
fn zero_mode_ignores_class() {
    let m = model(ConditioningMode::Zero);
    let x = images(1, 4);
    let img: Vec<f32> = x.data.iter().map(|&v| v as f32).collect();
    let a = m.forward(&img, 0).unwrap();
    assert_eq!(a, m.forward(&img, 2).unwrap());
    let e_i = m.encode_image(&img).unwrap();
    assert_eq!(a, m.decode_shape(&e_i, &[0.0; 3], 1).unwrap());
    assert!(m.conditioning_params().is_empty());
}

#[test]
fn mcce_uses_zero_embedding_and_class_rows() {
    let m = model(ConditioningMode::Mcce);
    assert_eq!(m.class_embedding(1).unwrap(), vec![0.0; 3]);
    assert_eq!(m.decoder.fc_norm.rows(), 3);
    let x = images(1, 4);
    let img: Vec<f32> = x.data.iter().map(|&v| v as f32).collect();
    assert_ne!(m.forward(&img, 0).unwrap(), m.forward(&img, 1).unwrap());
}

#[test]
fn batched_forward_matches_single() {
    for mode in ConditioningMode::ALL {
        let m = model(mode);
        let x = images(3, 6);
        let classes = [2, 0, 1];
        let batch = m.forward_batch(&x, &classes).unwrap();
        for (b, &c) in classes.iter().enumerate() {
            let img: Vec<f32> = x.sample(b).iter().map(|&v| v as f32).collect();
            let single = m.forward(&img, c).unwrap();
            assert!(single.l1_distance(&batch[b]).unwrap() < 1e-10, "{mode}");
        }
    }
}

#[test]
fn checkpoint_round_trip() {
    for mode in ConditioningMode::ALL {
        let mut m = model(mode);
        m.train_batch(&images(3, 1), &targets(3, 2), &[0, 1, 0]).unwrap();
        let bytes = write_checkpoint(&m).unwrap();
        let back = read_checkpoint(&bytes).unwrap();
        assert_eq!(write_checkpoint(&back).unwrap(), bytes, "{mode}");
        assert_eq!(back.frozen_hash(None), m.frozen_hash(None));
        let x = images(2, 9);
        assert_eq!(back.forward_batch(&x, &[1, 2]).unwrap(), m.forward_batch(&x, &[1, 2]).unwrap());
        assert!(read_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    }
    assert!(matches!(read_checkpoint(b"FS3DCKPX"), Err(Error::Format { offset: 0, .. })));
}

#[test]
fn frozen_hash_skips_only_the_class_row() {
    let mut m = model(ConditioningMode::Gce);
    let h = m.frozen_hash(Some(2));
    let Conditioning::Gce { table } = &mut m.conditioning else { unreachable!() };
    table.row_mut(2)[0] += 1.0;
    assert_eq!(m.frozen_hash(Some(2)), h);
    assert_ne!(m.frozen_hash(None), h);
    let Conditioning::Gce { table } = &mut m.conditioning else { unreachable!() };
    table.row_mut(1)[0] += 1.0;
    assert_ne!(m.frozen_hash(Some(2)), h);
}

/// Training loss as a pure function of the model (fresh batch statistics).
fn loss_of(m: &ReconstructionModel, x: &FeatureMap, y: &[f64], classes: &[usize]) -> f64 {
    m.forward_train(x, y, classes).unwrap().0
}

#[test]
fn gradients_match_finite_differences() {
    let x = images(3, 11);
    let y = targets(3, 12);
    let classes = [0, 1, 0];
    for mode in ConditioningMode::ALL {
        let mut m = model(mode);
        m.train_batch(&x, &y, &classes).unwrap();
        let analytic: Vec<(String, Vec<f64>)> = m.params().iter().map(|p| (p.name.clone(), p.grad.clone())).collect();
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut checked = 0;
        for (name, grad) in &analytic {
            let len = grad.len();
            for _ in 0..3 {
                let i = rng.random_range(0..len);
                let mut a = model(mode);
                let mut b = model(mode);
                a.params_mut().into_iter().find(|p| &p.name == name).unwrap().value[i] += h;
                b.params_mut().into_iter().find(|p| &p.name == name).unwrap().value[i] -= h;
                let fd = (loss_of(&a, &x, &y, &classes) - loss_of(&b, &x, &y, &classes)) / (2.0 * h);
                let g = grad[i];
                let err = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-3);
                assert!(err < 1e-4, "{mode} {name}[{i}]: fd {fd} vs {g}");
                checked += 1;
            }
        }
        assert!(checked > 10);
    }
}
