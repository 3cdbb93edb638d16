use plsa_core::seed::*;
use rand::RngCore;
fn main() {
    for (rep, purpose) in [(0u64, STREAM_COVARIATES), (3, STREAM_EVENTS), (7, STREAM_RESPONSE)] {
        let mut r = replication_rng(42, rep, purpose);
        println!("base=42 rep={rep} purpose={purpose}: {:#018x} {:#018x}", r.next_u64(), r.next_u64());
    }
}
