// Scratch probe of comparator selection rates; not part of the API.
use nalgebra::{DMatrix, DVector};
use plsa_core::{cox, diffusion, lsa, penalty};
use rayon::prelude::*;

fn selection(theta_hat: &DVector<f64>, truth: &DVector<f64>) -> bool {
    (0..truth.len()).all(|j| (theta_hat[j] != 0.0) == (truth[j] != 0.0))
}

fn plsa_select(theta_tilde: &DVector<f64>, cfg: &penalty::TuningConfig) -> DVector<f64> {
    let p = theta_tilde.len();
    let w = penalty::compute_weights(theta_tilde, cfg).unwrap();
    let prob = lsa::LsaProblem::new(
        theta_tilde.clone(),
        DMatrix::identity(p, p),
        w,
        cfg.q,
        DVector::from_element(p, -10.0),
        DVector::from_element(p, 10.0),
    )
    .unwrap();
    lsa::solve_separable(&prob).unwrap().theta_hat
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "diff".into());
    let reps: u64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(200);

    if which == "diff" {
        for n in [2500usize, 5000, 10000, 20000] {
            let model = diffusion::DiffusionModel::reference_model(n);
            let rate = 1.0 / (n as f64).sqrt();
            let tunings = [
                ("p-LSA", penalty::TuningConfig::new(3.2, 1.2, 0.3, rate).unwrap()),
                ("uLASSO", penalty::TuningConfig::new(3.2, 1.2, 1.0, rate).unwrap()),
                ("bridge", penalty::TuningConfig::new(0.0, 1.0, 0.3, rate).unwrap()),
            ];
            let lo = DVector::from_element(10, -10.0);
            let hi = DVector::from_element(10, 10.0);
            let truth = model.theta_true.clone();
            let hits: Vec<[bool; 3]> = (0..reps)
                .into_par_iter()
                .map(|rep| {
                    let sample = diffusion::simulate(&model, 7, rep).unwrap();
                    let tilde = diffusion::qmle_h(&model, &sample, &lo, &hi).unwrap().theta;
                    let mut out = [false; 3];
                    for (i, (_, cfg)) in tunings.iter().enumerate() {
                        out[i] = selection(&plsa_select(&tilde, cfg), &truth);
                    }
                    out
                })
                .collect();
            let pct = |i: usize| {
                100.0 * hits.iter().filter(|h| h[i]).count() as f64 / reps as f64
            };
            println!("n={n}: p-LSA {:.1} uLASSO {:.1} bridge {:.1}", pct(0), pct(1), pct(2));
        }
    } else {
        for t in [50.0f64, 100.0, 200.0, 400.0] {
            let model = cox::CoxModel::reference_model(t);
            let rate = 1.0 / t.sqrt();
            let tunings = [
                ("p-LSA", penalty::TuningConfig::new(1.0, 1.2, 0.3, rate).unwrap()),
                ("uLASSO", penalty::TuningConfig::new(1.0, 1.2, 1.0, rate).unwrap()),
                ("bridge", penalty::TuningConfig::new(0.0, 1.0, 0.3, rate).unwrap()),
            ];
            let lo = DVector::from_element(20, -10.0);
            let hi = DVector::from_element(20, 10.0);
            let truth = model.theta_true_flat();
            let hits: Vec<Option<[bool; 3]>> = (0..reps)
                .into_par_iter()
                .map(|rep| {
                    let sample = cox::simulate(&model, 7, rep).unwrap();
                    let tilde = match cox::qmle(&model, &sample, &DVector::zeros(20), &lo, &hi) {
                        Ok(f) => f.theta,
                        Err(_) => return None,
                    };
                    let mut out = [false; 3];
                    for (i, (_, cfg)) in tunings.iter().enumerate() {
                        out[i] = selection(&plsa_select(&tilde, cfg), &truth);
                    }
                    Some(out)
                })
                .collect();
            let ok: Vec<&[bool; 3]> = hits.iter().flatten().collect();
            let pct = |i: usize| 100.0 * ok.iter().filter(|h| h[i]).count() as f64 / ok.len() as f64;
            println!(
                "T={t}: p-LSA {:.1} uLASSO {:.1} bridge {:.1} (failed {})",
                pct(0),
                pct(1),
                pct(2),
                reps as usize - ok.len()
            );
        }
    }
}
