// Scratch harness pilot; not part of the API.
use plsa_core::montecarlo::{render_tables, run_mc, McConfig};
use std::time::Instant;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "table2".into());
    let reps: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let cfg = match which.as_str() {
        "table1" => McConfig::table1(reps, 7),
        "table2" => McConfig::table2(reps, 7),
        "table3" => McConfig::table3(reps, 7),
        _ => McConfig::table4(reps, 7),
    };
    let t0 = Instant::now();
    let run = run_mc(&cfg).unwrap();
    println!("elapsed {:?}", t0.elapsed());
    for w in &run.warnings {
        println!("warning: {w}");
    }
    println!("{}", render_tables(&run.summary));
    for e in &run.summary.entries {
        println!(
            "entry {} size {}: selection {:.1} used {} failed {} po_nc {} bound_viol {}",
            e.tuning, e.size, e.selection_pct, e.reps_used, e.reps_failed, e.po_nonconverged, e.bound_violations
        );
    }
}
