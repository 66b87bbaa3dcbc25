//! Temporary diagnostic for the desk-scale coverage gap.

use std::sync::Arc;

use rayon::prelude::*;
use sscb_core::bootstrap::{run_bootstrap, BootstrapConfig, BootstrapMode};
use sscb_core::field::Field;
use sscb_core::operators::{ForwardOperator, GaussianNoiseModel, MassMappingOperator};
use sscb_core::reconstruct::{KaiserSquires, KaiserSquiresConfig, Reconstructor};
use sscb_core::rng::StreamKey;
use sscb_core::scores::{score_measurement, sure_measurement, ScoreKind, SureConfig};
use sscb_core::simdata::{simulate_convergence, GrfConfig};

fn main() {
    let n = 64;
    let sigma = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let probes: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(16);
    let n_obs = 200;
    let op = Arc::new(MassMappingOperator::new(n).unwrap());
    let op_dyn: Arc<dyn ForwardOperator> = op.clone();
    let rec = KaiserSquires::new(op_dyn, KaiserSquiresConfig::default_smoothing()).unwrap();
    let noise = GaussianNoiseModel::new(sigma).unwrap();
    let sure_cfg = SureConfig { n_probes: probes, ..SureConfig::default() };

    let rows: Vec<(f64, f64, f64)> = (0..n_obs)
        .into_par_iter()
        .map(|j| {
            let key = StreamKey::new(999).child(j as u64);
            let truth = simulate_convergence(&GrfConfig {
                n,
                beta: 2.0,
                k0: 1.0,
                seed: key.child(0).value(),
            })
            .unwrap();
            let mut noise_rng = key.child(1).rng();
            let y = noise.perturb(&op.apply(&truth).unwrap(), &mut noise_rng);
            let xhat = rec.reconstruct(&y).unwrap();
            let s_true = score_measurement(&truth, &xhat, op.as_ref()).unwrap();
            let sure =
                sure_measurement(&y, &rec, op.as_ref(), &noise, &sure_cfg, key.child(2)).unwrap();
            let bcfg = BootstrapConfig {
                n_samples: 100,
                mode: BootstrapMode::Equivariant,
                seed: key.child(3).value(),
            };
            let sampler = sscb_core::transforms::TransformSamplerConfig::reference(n);
            let summary = run_bootstrap(
                &Field::Complex(y.as_complex().unwrap().clone()),
                &rec,
                op.as_ref(),
                &noise,
                &sampler,
                ScoreKind::MeasurementSpace,
                &bcfg,
            )
            .unwrap();
            let q50 = sscb_core::bootstrap::quantile_from_scores(&summary.scores, 0.5).unwrap();
            (s_true, sure, q50)
        })
        .collect();

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let std = |v: &[f64]| {
        let m = mean(v);
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
    };
    let s: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let sure: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let eta: Vec<f64> = rows.iter().map(|r| r.1 - r.0).collect();
    let q: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let ratio_true: Vec<f64> = rows.iter().map(|r| r.0 / r.2).collect();
    let ratio_sure: Vec<f64> = rows.iter().map(|r| r.1 / r.2).collect();
    println!("sigma={sigma} probes={probes}");
    println!("true score: mean {:.5} std {:.5}", mean(&s), std(&s));
    println!("sure:       mean {:.5} std {:.5}", mean(&sure), std(&sure));
    println!("sure-true:  mean {:.5} std {:.5}", mean(&eta), std(&eta));
    println!("q(0.5):     mean {:.5} std {:.5}", mean(&q), std(&q));
    println!("s/q:        mean {:.5} std {:.5}", mean(&ratio_true), std(&ratio_true));
    println!("sure/q:     mean {:.5} std {:.5}", mean(&ratio_sure), std(&ratio_sure));
    let mut sorted_t = ratio_true.clone();
    sorted_t.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut sorted_s = ratio_sure.clone();
    sorted_s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for pct in [5usize, 25, 50, 75, 95] {
        let i = pct * n_obs / 100;
        println!("  p{pct}: s/q {:.4}  sure/q {:.4}", sorted_t[i], sorted_s[i]);
    }
}
