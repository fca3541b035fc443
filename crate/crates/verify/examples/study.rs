//! Runs the directional study with the default shape and prints every arm.
use protomm_verify::a6::{run_study, StudyConfig};

fn main() -> protomm::Result<()> {
    env_logger::init();
    let out = run_study(&StudyConfig::default())?;
    for (arm, scores) in &out.arms {
        println!("{}: {:?}", arm.name(), scores);
    }
    println!(
        "mixing {:+.4} baseline {:+.4} transfer {:+.4} ({:.0}s)",
        out.mixing_margin, out.baseline_margin, out.transfer_margin, out.seconds
    );
    Ok(())
}
