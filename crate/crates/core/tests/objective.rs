use shapeforge_core::augment::{augmented_pool, compose_batch, AugmentConfig, AugmentSource};
use shapeforge_core::sampling::SeedSpec;
use shapeforge_core::synth::{generate_split, SplitMode};
use shapeforge_core::trainer::{mean_ce_and_grad, mixed_loss, ModelParams};

#[test]
fn mixed_gradient_is_the_eta_combination_of_the_halves() {
    let natural = generate_split("mix", SplitMode::Aligned, 40, 2);
    let source = AugmentSource::new(&natural).unwrap();
    let pool = augmented_pool(&source, 0, 40, &AugmentConfig::default()).unwrap();
    let batch = compose_batch(&natural, &pool, 20, 0, &SeedSpec::new(2, "batch:0", 0)).unwrap();
    let params = ModelParams::init(2);

    let nat: Vec<(&[f32], usize)> = batch.natural.iter().map(|(i, l)| (i.data(), *l)).collect();
    let aug: Vec<(&[f32], usize)> = batch.augmented.iter().map(|a| (a.image.data(), a.label)).collect();
    let (nat_loss, g_nat, _) = mean_ce_and_grad(params.values(), &nat).unwrap();
    let (aug_loss, g_aug, _) = mean_ce_and_grad(params.values(), &aug).unwrap();

    for eta in [0.0f32, 0.3, 0.65, 1.0] {
        let (loss, grad) = mixed_loss(&params, &batch, eta).unwrap();
        assert!((loss.loss - (eta * nat_loss + (1.0 - eta) * aug_loss)).abs() < 1e-6);
        for i in 0..grad.len() {
            let expected = eta * g_nat[i] + (1.0 - eta) * g_aug[i];
            assert!((grad[i] - expected).abs() <= 1e-6, "eta {eta} param {i}: {} vs {expected}", grad[i]);
        }
    }
}
