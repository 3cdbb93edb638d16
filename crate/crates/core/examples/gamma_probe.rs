// Scratch probe of the weighting-matrix limit statistic; not part of the API.
use nalgebra::{DMatrix, DVector};
use plsa_core::cox;
use rayon::prelude::*;

fn main() {
    let horizon: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000.0);
    let reps: u64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(20);
    let batches: u64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(8);
    let model = cox::CoxModel::reference_model(horizon);
    let lo = DVector::from_element(20, -10.0);
    let hi = DVector::from_element(20, 10.0);
    let gamma = cox::gamma_analytic(&model.theta_true_flat(), &model.stationary_variances());
    let theta_star = model.theta_true_flat();

    for batch in 0..batches {
        let mats: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let rep = batch * reps + r;
                let sample = cox::simulate(&model, 99, rep).unwrap();
                let fit = cox::qmle(&model, &sample, &DVector::zeros(20), &lo, &hi).unwrap();
                let at_tilde = cox::g_hat_hessian(&model, &sample, &fit.theta).unwrap();
                let at_star = cox::g_hat_hessian(&model, &sample, &theta_star).unwrap();
                (at_tilde, at_star)
            })
            .collect();
        let mut avg_tilde = DMatrix::zeros(20, 20);
        let mut avg_star = DMatrix::zeros(20, 20);
        for (t, s) in &mats {
            avg_tilde += t;
            avg_star += s;
        }
        avg_tilde /= reps as f64;
        avg_star /= reps as f64;
        let rel_t = (&avg_tilde - &gamma).norm() / gamma.norm();
        let rel_s = (&avg_star - &gamma).norm() / gamma.norm();
        println!("T={horizon} batch {batch}: rel(theta_tilde)={rel_t:.4} rel(theta_star)={rel_s:.4}");
    }
}
