use quartzion::check::{run_checks, CheckSettings};

use crate::run::{load, Failure};
use crate::CheckArgs;

/// An invalid model is reported as a failed precondition check, not as a
/// configuration error.
pub fn run(args: &CheckArgs) -> Result<(), Failure> {
    let (cfg, _) = load(&args.config)?;
    let settings = CheckSettings {
        tolerance: args.tolerance.or(cfg.check.tolerance),
        random_sets: cfg.check.random_sets,
        n_traces: cfg.check.n_traces,
        seed: args.seed.unwrap_or(cfg.io.seed),
    };
    let outcomes = match cfg.scenario() {
        Ok(sc) => run_checks(&sc, &settings),
        Err(e) => {
            println!("FAIL preconditions: {e}");
            return Err(Failure::Check("preconditions not met".into()));
        }
    };
    for o in &outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} of {} checks passed", outcomes.len() - failed, outcomes.len());
    if failed > 0 {
        return Err(Failure::Check(format!("{failed} of {} checks failed", outcomes.len())));
    }
    Ok(())
}
