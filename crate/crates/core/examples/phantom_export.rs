//! Generate a phantom case and export the middle axial slice of every
//! modality, the mask and the lesion as PGM images.
//!
//!     cargo run --release --example phantom_export -- [seed] [out_dir]

use wfm::phantom::generate_case;
use wfm::volume::{export_slice, Axis, ModalityId};

fn main() -> wfm::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse().expect("seed")).unwrap_or(0);
    let out = args.next().map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("wfm_phantom"));
    std::fs::create_dir_all(&out)?;

    let case = generate_case(seed)?;
    let mid = case.dims()[0] / 2;
    println!("seed {seed}: dims {:?}, mask {:.1}% of voxels", case.dims(), 100.0 * case.mask.fraction());
    for m in ModalityId::all() {
        let path = out.join(format!("{}.pgm", m.name()));
        export_slice(case.volume(m), Axis::Axial, mid, &path)?;
        let s = &case.stats[m.index()];
        println!("  {:<5} native mean {:+.3} std {:.3} -> {}", m.name(), s.mean, s.std, path.display());
    }
    export_slice(&case.mask.to_volume(), Axis::Axial, mid, out.join("mask.pgm"))?;
    export_slice(&case.lesion, Axis::Axial, mid, out.join("lesion.pgm"))?;
    Ok(())
}
