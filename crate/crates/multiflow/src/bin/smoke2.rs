use multiflow::case_model::{build_admittance, parse_case, regularize_lossless};
use multiflow::curve_design::{design_map, directions_from_map, Strategy};
use multiflow::enumerator::initial_solution;
use multiflow::hebc_tracer::{trace_curve_pc, HebcConfig};
use multiflow::quadratic_form::assemble_equations;

fn main() {
    let path = std::env::args().nth(1).expect("case path");
    let text = std::fs::read_to_string(&path).unwrap();
    let net = parse_case(&text).unwrap();
    let net = regularize_lossless(&net, 1e-4);
    let y = build_admittance(&net).unwrap();
    let sys = assemble_equations(&net, &y).unwrap();
    let map = design_map(&sys, &Strategy::Heuristic { seed: 0 }).unwrap();
    let dirs = directions_from_map(&map);
    let u0 = initial_solution(&sys).unwrap();
    for dir in dirs.iter().take(3) {
        let t = std::time::Instant::now();
        let r = trace_curve_pc(&sys, dir, &u0, &HebcConfig::default()).unwrap();
        let hs: Vec<f64> = r.step_log.iter().map(|s| s.h).collect();
        let mut sorted = hs.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        println!(
            "curve {}: {:?} pc {} arc {:.1} | h p10 {:.5} p50 {:.5} p90 {:.4} | sols {} | {:.2?}",
            dir.l, r.status, r.n_pc_steps,
            r.step_log.last().map(|s| s.arc).unwrap_or(0.0),
            sorted[hs.len()/10], sorted[hs.len()/2], sorted[9*hs.len()/10],
            r.solutions.len(), t.elapsed()
        );
    }
}
