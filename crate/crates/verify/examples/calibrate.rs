//! Prints the noise calibration trace for the default study shape.
use protomm_verify::a6::{calibrate_noise, StudyConfig};

fn main() -> protomm::Result<()> {
    let (noise, trace) = calibrate_noise(&StudyConfig::default())?;
    for (n, f1) in trace {
        println!("noise {n:.2}: spectral probe macro-F1 {f1:.3}");
    }
    println!("calibrated noise_sigma = {noise}");
    Ok(())
}
