use multiflow::case_model::{parse_case, regularize_lossless};
use multiflow::curve_design::Strategy;
use multiflow::enumerator::{find_all_solutions, EnumerateConfig, TracerKind};

fn main() {
    let path = std::env::args().nth(1).expect("case path");
    let seed: u64 = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(0);
    let tracer = match std::env::args().nth(3).as_deref() {
        Some("pc") => TracerKind::Pc,
        _ => TracerKind::Hebc,
    };
    let text = std::fs::read_to_string(&path).unwrap();
    let net = parse_case(&text).unwrap();
    let net = regularize_lossless(&net, 1e-4);
    let cfg = EnumerateConfig {
        strategy: Strategy::Heuristic { seed },
        tracer,
        jobs: 8,
        ..EnumerateConfig::default()
    };
    let t0 = std::time::Instant::now();
    match find_all_solutions(&net, &cfg) {
        Ok((set, report)) => println!(
            "{path}: {} solutions, {:?}, holo {} pc {} steps, {:?}, {:.2?}",
            set.len(), report.tracer, report.n_holo_steps, report.n_pc_steps,
            report.completeness, t0.elapsed()
        ),
        Err(e) => println!("{path}: ERROR {e}"),
    }
}
