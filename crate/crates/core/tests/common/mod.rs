#![allow(dead_code)]

use radmap::field::{FieldConfig, RadarField};
use radmap::geometry::{Aabb, Vec3};
use radmap::sampling::TrainingSample;
use radmap::train::{batch_gradients, batch_loss, TrainerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct GradCheck {
    pub checked: usize,
    pub failures: usize,
    pub worst_rel: f64,
}

/// Reduced model: F=4, H=2, two hidden layers of 16 on both networks.
pub fn tiny_field(seed: u64) -> RadarField {
    let mut c = FieldConfig::default();
    c.grid.feature_dim = 4;
    c.grid.levels = 2;
    c.grid.init_scale = 0.2;
    c.network.sdf_hidden = vec![16, 16];
    c.network.intensity_hidden = vec![16, 16];
    let aabb = Aabb::new(Vec3::new(-2.0, -2.0, -2.0), Vec3::new(2.0, 2.0, 2.0)).unwrap();
    let mut f = RadarField::new(c, aabb, seed).unwrap();
    // Keep |d| well under 0.8 m, where the probability clamp of the SDF loss
    // would flatten the loss at the default sigmoid scale.
    for w in &mut f.sdf_net.layers.last_mut().unwrap().weight {
        *w *= 0.1;
    }
    f
}

pub fn random_batch(seed: u64, n: usize) -> Vec<TrainingSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    (0..n)
        .map(|i| {
            let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            TrainingSample {
                position: Vec3::new(rng.random_range(-1.8..1.8), rng.random_range(-1.8..1.8), rng.random_range(-1.8..1.8)),
                view_dir: v.normalize(),
                sdf_label: rng.random_range(-0.3..0.3),
                intensity_label: rng.random_range(0.0..1.0),
                is_free_space: i % 4 == 3,
            }
        })
        .collect()
}

fn agree(analytic: f64, fd: f64, rel: f64, abs: f64) -> bool {
    let diff = (analytic - fd).abs();
    diff <= abs || diff <= rel * analytic.abs().max(fd.abs())
}

/// Central differences on every parameter of the grid and both networks.
pub fn gradient_check(seed: u64, rel: f64, abs: f64) -> GradCheck {
    let mut field = tiny_field(seed);
    let batch = random_batch(seed, 8);
    for s in &batch {
        field.grid.allocate_for(&s.position);
    }
    let cfg = TrainerConfig::default();
    let trunc = 0.3;
    batch_gradients(&mut field, &batch, &cfg, trunc, false).unwrap();
    let h = 1e-6;
    let mut out = GradCheck {
        checked: 0,
        failures: 0,
        worst_rel: 0.0,
    };
    let mut record = |a: f64, fd: f64| {
        out.checked += 1;
        if !agree(a, fd, rel, abs) {
            out.failures += 1;
        }
        let r = (a - fd).abs() / a.abs().max(fd.abs()).max(abs);
        out.worst_rel = out.worst_rel.max(r);
    };

    let mut probe = field.clone();
    let n_sdf = field.sdf_net.num_parameters();
    let sdf_grads: Vec<f64> = field.sdf_net.gradient_values().copied().collect();
    for k in 0..n_sdf {
        let orig = *probe.sdf_net.parameters().nth(k).unwrap();
        *probe.sdf_net.parameters_mut().nth(k).unwrap() = orig + h;
        let lp = batch_loss(&probe, &batch, &cfg, trunc).unwrap();
        *probe.sdf_net.parameters_mut().nth(k).unwrap() = orig - h;
        let lm = batch_loss(&probe, &batch, &cfg, trunc).unwrap();
        *probe.sdf_net.parameters_mut().nth(k).unwrap() = orig;
        record(sdf_grads[k], (lp - lm) / (2.0 * h));
    }
    let int_grads: Vec<f64> = field.intensity_net.gradient_values().copied().collect();
    for k in 0..field.intensity_net.num_parameters() {
        let orig = *probe.intensity_net.parameters().nth(k).unwrap();
        *probe.intensity_net.parameters_mut().nth(k).unwrap() = orig + h;
        let lp = batch_loss(&probe, &batch, &cfg, trunc).unwrap();
        *probe.intensity_net.parameters_mut().nth(k).unwrap() = orig - h;
        let lm = batch_loss(&probe, &batch, &cfg, trunc).unwrap();
        *probe.intensity_net.parameters_mut().nth(k).unwrap() = orig;
        record(int_grads[k], (lp - lm) / (2.0 * h));
    }
    for t in 0..field.grid.tables().len() {
        for k in 0..field.grid.tables()[t].features.len() {
            let orig = probe.grid.tables()[t].features[k];
            probe.grid.tables_mut()[t].features[k] = orig + h;
            let lp = batch_loss(&probe, &batch, &cfg, trunc).unwrap();
            probe.grid.tables_mut()[t].features[k] = orig - h;
            let lm = batch_loss(&probe, &batch, &cfg, trunc).unwrap();
            probe.grid.tables_mut()[t].features[k] = orig;
            record(field.grid.tables()[t].grads[k], (lp - lm) / (2.0 * h));
        }
    }
    out
}
