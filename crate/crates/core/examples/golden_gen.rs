use nalgebra::DMatrix;
use plsa_core::cox::CoxModel;
use plsa_core::montecarlo::*;

fn main() {
    let cfg = McConfig {
        model: ModelSpec::Cox(CoxModel {
            n_marks: 1,
            n_covariates: 3,
            ou_speeds: vec![0.2, 0.3, 0.25],
            ou_vol: 0.4,
            horizon: 10.0,
            grid_step: 0.05,
            theta_true: DMatrix::from_row_slice(1, 3, &[0.8, 0.0, -0.6]),
        }),
        tunings: vec![TuningSpec::new("p-LSA", 1.0, 1.2, 0.3)],
        reps: 5,
        base_seed: 42,
        sizes: vec![10.0],
        g_choice: GChoice::Identity,
        box_lower: -10.0,
        box_upper: 10.0,
    };
    let run = run_mc(&cfg).unwrap();
    std::fs::write("crates/core/tests/data/golden_tables.md", render_tables(&run.summary)).unwrap();
    std::fs::write("crates/core/tests/data/golden_summary.csv", render_summary_csv(&run.summary)).unwrap();
    println!("records rows: {}", run.records.len());
}
