//! Semblance spectrum of a noise-free single-reflector gather.

use velopick::grid::{TimeAxis, VelocityAxis};
use velopick::io::write_pgm_auto;
use velopick::spectrum::{semblance, AcquisitionGeometry, DEFAULT_WINDOW_HALF};
use velopick::synth::{clean_gather, LayerModel};

fn main() -> velopick::Result<()> {
    let model = LayerModel::from_layers(&[(0.6, 2400.0)])?;
    let geometry = AcquisitionGeometry::regular(24, 100.0, 2400.0, 0.004, 500)?;
    let gather = clean_gather(&model, &geometry)?;

    let taxis = TimeAxis::new(0.0, 0.008, 125)?;
    let vaxis = VelocityAxis::new(1500.0, 50.0, 40)?;
    let spectrum = semblance(&gather, &taxis, &vaxis, DEFAULT_WINDOW_HALF)?;

    let (r, c) = spectrum.argmax();
    println!(
        "peak NE {:.3} at t0 {:.3} s, v {:.0} m/s (reflector at 0.600 s, 2400 m/s)",
        spectrum.values.get(r, c),
        taxis.time(r),
        vaxis.velocity(c)
    );
    let out = std::env::temp_dir().join("velopick_spectrum.pgm");
    write_pgm_auto(&out, &spectrum.values)?;
    println!("wrote {}", out.display());
    Ok(())
}
