//! Write a volume as NIfTI-1 and as the raw WFMV format, read both back and
//! inspect the header.

use wfm::nifti::{decode_nifti, encode_nifti, read_volume, write_nifti, write_raw};
use wfm::phantom::generate_case;

fn main() -> wfm::Result<()> {
    let dir = std::env::temp_dir().join("wfm_nifti_example");
    std::fs::create_dir_all(&dir)?;
    let v = generate_case(3)?.volumes[2].clone().with_spacing([1.0, 1.0, 1.5]);

    let nii = dir.join("t2.nii");
    write_nifti(&v, &nii)?;
    let raw = dir.join("t2.wfmv");
    write_raw(&v, &raw)?;

    let bytes = encode_nifti(&v)?;
    let (hdr, _) = decode_nifti(&bytes)?;
    println!("sizeof_hdr bytes: {:02X?}", &bytes[..4]);
    println!("header: {hdr:?}");
    for p in [&nii, &raw] {
        let back = read_volume(p)?;
        println!(
            "{}: {} bytes, dims {:?}, spacing {:?}, bit-exact {}",
            p.display(),
            std::fs::metadata(p)?.len(),
            back.dims(),
            back.spacing(),
            back == v
        );
    }
    Ok(())
}
