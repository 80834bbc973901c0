use sderk::ensemble::run_ensemble;
use sderk::quantum::{absorber_system, occupation_observable, vacuum_state};
use sderk::stepper::StepController;
use sderk::tableau::ButcherTableau;

fn main() {
    let n_levels = 11;
    let t_end = 3.0;
    let chunks = 64;
    let h = t_end / chunks as f64;
    let sys = absorber_system(n_levels).unwrap();
    for (name, tab) in [
        ("dp54", ButcherTableau::dormand_prince_54()),
        ("rkf87", ButcherTableau::fehlberg_87()),
        ("xrkf98", ButcherTableau::extrapolated_98()),
    ] {
        let ctrl = StepController::adaptive(1e-8, 1e-10, h);
        let t0 = std::time::Instant::now();
        let n_traj = 50;
        let r = run_ensemble(
            &sys,
            &tab,
            &ctrl,
            &[occupation_observable()],
            &vacuum_state(n_levels),
            0.0,
            t_end,
            n_traj,
            7,
        )
        .unwrap();
        let dt = t0.elapsed();
        println!(
            "{name}: {:?} for {n_traj} traj -> {:.1} ms/traj; accepted {} rejected {} fevals {} n(T)={:.4}",
            dt,
            dt.as_secs_f64() * 1000.0 / n_traj as f64,
            r.total_accepted,
            r.total_rejected,
            r.total_f_evals,
            r.means[0].last().unwrap()
        );
    }
}
