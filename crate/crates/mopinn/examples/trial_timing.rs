use mopinn::config::preset_by_name;
use mopinn::experiment::run_trial;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let iters: u64 = args[0].parse().unwrap();
    for name in &args[1..] {
        let mut c = preset_by_name(name).unwrap();
        c.iterations = iters;
        let r = run_trial(&c).unwrap();
        println!(
            "{name}: {:.3} ms/iter, total {:.3e}",
            r.wall_time.as_secs_f64() * 1e3 / iters as f64,
            r.final_total()
        );
    }
}
