//! Masked PSNR and SSIM of increasingly noisy copies of a phantom.

use wfm::metrics::evaluate;
use wfm::phantom::{generate_case, Rng};
use wfm::Volume;

fn main() -> wfm::Result<()> {
    let case = generate_case(5)?;
    let gt = &case.volumes[1];
    let mut rng = Rng::new(1);
    println!("{:>6}  {:>9}  {:>7}", "noise", "PSNR dB", "SSIM");
    for amp in [0.0, 0.01, 0.03, 0.1, 0.3, 1.0] {
        let data = gt.data().iter().map(|&x| x + amp * rng.normal() as f32).collect();
        let noisy = Volume::new(gt.dims(), gt.spacing(), data)?;
        let r = evaluate(&noisy, gt, &case.mask)?;
        println!("{amp:>6}  {:>9.3}  {:>7.4}", r.psnr_db, r.ssim);
    }
    println!("(range R = {:.3} over {} mask voxels)", evaluate(gt, gt, &case.mask)?.data_range, case.mask.count());
    Ok(())
}
