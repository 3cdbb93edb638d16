use nalgebra::DVector;
use plsa_core::cox;

fn main() {
    let model = cox::CoxModel::reference_model(200.0);
    let lo = DVector::from_element(20, -10.0);
    let hi = DVector::from_element(20, 10.0);
    for rep in 0..40u64 {
        match cox::simulate(&model, 7, rep) {
            Ok(sample) => {
                match cox::qmle(&model, &sample, &DVector::zeros(20), &lo, &hi) {
                    Ok(fit) => println!("rep {rep}: ok events={} iters={} gnorm={:.2e} clamped={}", sample.event_count(), fit.iterations, fit.grad_norm, fit.clamped),
                    Err(e) => println!("rep {rep}: QMLE FAIL events={}: {e}", sample.event_count()),
                }
            }
            Err(e) => println!("rep {rep}: SIM FAIL: {e}"),
        }
    }
}
