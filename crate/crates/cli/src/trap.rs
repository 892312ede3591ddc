use quartzion::constants::TWO_PI;
use quartzion::{axial_frequency, coupling_constant, radial_frequencies};

use crate::run::{load, usage, Failure};
use crate::ConfigArg;

pub fn run(args: &ConfigArg) -> Result<(), Failure> {
    let (cfg, _) = load(args)?;
    let trap = cfg
        .trap
        .ok_or_else(|| Failure::Usage("the configuration has no [trap] block".into()))?;
    let wc = trap.cyclotron_frequency();
    let wz = axial_frequency(&trap).map_err(usage)?;
    let (plus, minus) = radial_frequencies(&trap).map_err(usage)?;
    println!("cyclotron           ν_c = {:.6} Hz", wc / TWO_PI);
    println!("axial               ν_z = {:.6} Hz", wz / TWO_PI);
    println!("modified cyclotron  ν_+ = {:.6} Hz", plus / TWO_PI);
    println!("magnetron           ν_- = {:.6} Hz", minus / TWO_PI);
    println!("ν_+ + ν_- − ν_c         = {:.3e} Hz", (plus + minus - wc) / TWO_PI);
    if let Some(q) = cfg.quartz {
        let g = coupling_constant(&trap, &q, plus, minus).map_err(usage)?;
        println!(
            "coupling |g|/2π     exact = {:.6} Hz, approximate = {:.6} Hz",
            g.exact.norm() / TWO_PI,
            g.approximate.norm() / TWO_PI
        );
    }
    Ok(())
}
