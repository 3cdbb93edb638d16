// Scratch probe: selection rates when stage one keeps the local stationary
// point instead of the global scalar minimizer. Not part of the API.
use nalgebra::DVector;
use plsa_core::{cox, diffusion, penalty};
use rayon::prelude::*;

/// Larger root of 2(t - z) + w q t^{q-1} on t > 0 if it exists, else 0.
/// No objective comparison against t = 0 (descent-from-theta_tilde rule).
fn prox_local(z: f64, w: f64, q: f64) -> f64 {
    if w == 0.0 {
        return z;
    }
    if z == 0.0 {
        return 0.0;
    }
    if q == 1.0 {
        let s = z.abs() - w / 2.0;
        return if s > 0.0 { z.signum() * s } else { 0.0 };
    }
    let zz = z.abs();
    let t_inf = (w * q * (1.0 - q) / 2.0).powf(1.0 / (2.0 - q));
    let phi = |t: f64| 2.0 * (t - zz) + w * q * t.powf(q - 1.0);
    if t_inf >= zz || phi(t_inf) > 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (t_inf, zz);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    z.signum() * 0.5 * (lo + hi)
}

fn select_local(tilde: &DVector<f64>, cfg: &penalty::TuningConfig, truth: &DVector<f64>) -> bool {
    let alpha = cfg.alpha();
    (0..tilde.len()).all(|j| {
        let w = alpha * tilde[j].abs().max(1e-10).powf(-cfg.gamma);
        let t = prox_local(tilde[j], w, cfg.q);
        (t != 0.0) == (truth[j] != 0.0)
    })
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "cox".into());
    let reps: u64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(200);

    if which == "cox" {
        for t in [50.0f64, 100.0, 200.0, 400.0] {
            let model = cox::CoxModel::reference_model(t);
            let rate = 1.0 / t.sqrt();
            let tunings = [
                penalty::TuningConfig::new(1.0, 1.2, 0.3, rate).unwrap(),
                penalty::TuningConfig::new(1.0, 1.2, 1.0, rate).unwrap(),
                penalty::TuningConfig::new(0.0, 1.0, 0.3, rate).unwrap(),
            ];
            let lo = DVector::from_element(20, -10.0);
            let hi = DVector::from_element(20, 10.0);
            let truth = model.theta_true_flat();
            let hits: Vec<[bool; 3]> = (0..reps)
                .into_par_iter()
                .filter_map(|rep| {
                    let sample = cox::simulate(&model, 7, rep).unwrap();
                    let tilde = cox::qmle(&model, &sample, &DVector::zeros(20), &lo, &hi).ok()?.theta;
                    let mut out = [false; 3];
                    for (i, cfg) in tunings.iter().enumerate() {
                        out[i] = select_local(&tilde, cfg, &truth);
                    }
                    Some(out)
                })
                .collect();
            let pct =
                |i: usize| 100.0 * hits.iter().filter(|h| h[i]).count() as f64 / hits.len() as f64;
            println!("T={t}: local p-LSA {:.1} uLASSO {:.1} bridge {:.1}", pct(0), pct(1), pct(2));
        }
    } else {
        for n in [2500usize, 5000, 10000, 20000] {
            let model = diffusion::DiffusionModel::reference_model(n);
            let rate = 1.0 / (n as f64).sqrt();
            let tunings = [
                penalty::TuningConfig::new(3.2, 1.2, 0.3, rate).unwrap(),
                penalty::TuningConfig::new(3.2, 1.2, 1.0, rate).unwrap(),
                penalty::TuningConfig::new(0.0, 1.0, 0.3, rate).unwrap(),
            ];
            let lo = DVector::from_element(10, -10.0);
            let hi = DVector::from_element(10, 10.0);
            let truth = model.theta_true.clone();
            let hits: Vec<[bool; 3]> = (0..reps)
                .into_par_iter()
                .filter_map(|rep| {
                    let sample = diffusion::simulate(&model, 7, rep).unwrap();
                    let tilde = diffusion::qmle_h(&model, &sample, &lo, &hi).ok()?.theta;
                    let mut out = [false; 3];
                    for (i, cfg) in tunings.iter().enumerate() {
                        out[i] = select_local(&tilde, cfg, &truth);
                    }
                    Some(out)
                })
                .collect();
            let pct =
                |i: usize| 100.0 * hits.iter().filter(|h| h[i]).count() as f64 / hits.len() as f64;
            println!("n={n}: local p-LSA {:.1} uLASSO {:.1} bridge {:.1}", pct(0), pct(1), pct(2));
        }
    }
}
