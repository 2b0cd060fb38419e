//! Single-level 3D Haar transform: perfect reconstruction, energy
//! preservation, and where a smooth volume's energy ends up.

use wfm::phantom::{generate_case, Rng};
use wfm::volume::Volume;
use wfm::wavelet::{dwt3, idwt3, SUBBAND_NAMES};

fn main() -> wfm::Result<()> {
    let mut rng = Rng::new(42);
    let noise = Volume::from_data([32, 32, 32], (0..32 * 32 * 32).map(|_| rng.normal() as f32).collect())?;
    let smooth = generate_case(7)?.volumes[0].clone();

    for (label, v) in [("white noise", &noise), ("phantom t1", &smooth)] {
        let w = dwt3(v)?;
        let back = idwt3(&w)?;
        let err = v.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        let e_img: f64 = v.data().iter().map(|&x| x as f64 * x as f64).sum();
        println!("{label}: grid {:?} -> {:?}", v.dims(), w.half_dims());
        println!("  max |idwt(dwt(v)) - v| = {err:.2e}");
        println!("  energy ratio          = {:.8}", w.norm_sq() / e_img);
        for (b, name) in SUBBAND_NAMES.iter().enumerate() {
            let e: f64 = w.channel(b).iter().map(|&c| c as f64 * c as f64).sum();
            println!("    {name}: {:>6.2}%", 100.0 * e / e_img);
        }
    }
    Ok(())
}
