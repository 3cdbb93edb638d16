// Scratch pilot for calibrating the replication harness; not part of the API.
use nalgebra::DVector;
use plsa_core::{cox, diffusion};
use rayon::prelude::*;
use std::time::Instant;

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "cox".into());
    let reps: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(40);

    if which == "cox" {
        let t0 = Instant::now();
        let model = cox::CoxModel::reference_model(200.0);
        let lo = DVector::from_element(20, -10.0);
        let hi = DVector::from_element(20, 10.0);
        let results: Vec<(DVector<f64>, usize)> = (0..reps as u64)
            .into_par_iter()
            .map(|rep| {
                let sample = cox::simulate(&model, 7, rep).unwrap();
                let nev = sample.event_count();
                let fit = cox::qmle(&model, &sample, &DVector::zeros(20), &lo, &hi).unwrap();
                (fit.theta, nev)
            })
            .collect();
        let counts: Vec<f64> = results.iter().map(|(_, n)| *n as f64).collect();
        let (cm, cs) = mean_sd(&counts);
        println!("T=200 reps={reps} events mean {cm:.1} sd {cs:.1} elapsed {:?}", t0.elapsed());
        for j in [0usize, 4, 6, 8, 10, 15] {
            let vals: Vec<f64> = results.iter().map(|(th, _)| th[j]).collect();
            let (m, s) = mean_sd(&vals);
            println!("theta[{:2}] mean {:8.4} sd {:6.4}", j + 1, m, s);
        }
    } else if which == "gamma" {
        let t0 = Instant::now();
        let model = cox::CoxModel::reference_model(2000.0);
        let lo = DVector::from_element(20, -10.0);
        let hi = DVector::from_element(20, 10.0);
        let mats: Vec<nalgebra::DMatrix<f64>> = (0..reps as u64)
            .into_par_iter()
            .map(|rep| {
                let sample = cox::simulate(&model, 11, rep).unwrap();
                let fit = cox::qmle(&model, &sample, &DVector::zeros(20), &lo, &hi).unwrap();
                cox::g_hat_hessian(&model, &sample, &fit.theta).unwrap()
            })
            .collect();
        let mut avg = nalgebra::DMatrix::zeros(20, 20);
        for m in &mats {
            avg += m;
        }
        avg /= mats.len() as f64;
        let gamma = cox::gamma_analytic(
            &model.theta_true_flat(),
            &model.stationary_variances(),
        );
        let rel = (&avg - &gamma).norm() / gamma.norm();
        println!(
            "T=2000 reps={reps} rel Frobenius {rel:.4} (gamma norm {:.3}) elapsed {:?}",
            gamma.norm(),
            t0.elapsed()
        );
    } else {
        let t0 = Instant::now();
        let model = diffusion::DiffusionModel::reference_model(10000);
        let lo = DVector::from_element(10, -10.0);
        let hi = DVector::from_element(10, 10.0);
        let thetas: Vec<DVector<f64>> = (0..reps as u64)
            .into_par_iter()
            .map(|rep| {
                let sample = diffusion::simulate(&model, 7, rep).unwrap();
                diffusion::qmle_h(&model, &sample, &lo, &hi).unwrap().theta
            })
            .collect();
        println!("n=10000 reps={reps} elapsed {:?}", t0.elapsed());
        for j in [0usize, 4, 5, 9] {
            let vals: Vec<f64> = thetas.iter().map(|th| th[j]).collect();
            let (m, s) = mean_sd(&vals);
            println!("theta[{:2}] mean {:8.4} sd {:6.4}", j + 1, m, s);
        }
    }
}
