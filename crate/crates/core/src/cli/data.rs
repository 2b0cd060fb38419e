//! On-disk case layout: `DIR/manifest.tsv` plus one directory per case with
//! a NIfTI file per modality and a mask.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nifti::{read_volume, write_nifti};
use crate::phantom::{generate_case_with_dims, make_split, PhantomCase};
use crate::volume::{normalize, Dims, Mask, ModalityId, Volume};

pub const MANIFEST: &str = "manifest.tsv";
pub const MANIFEST_HEADER: &str = "seed\tsplit\tcase";
pub const MASK_FILE: &str = "mask.nii";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Val,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub seed: u64,
    pub split: SplitName,
    /// Case directory, relative to the manifest.
    pub case: String,
}

pub fn modality_file(m: ModalityId) -> String {
    format!("{}.nii", m.name())
}

pub fn case_dir_name(seed: u64) -> String {
    format!("case_{seed:06}")
}

/// A case as used for training/evaluation: normalized volumes plus mask.
#[derive(Clone, Debug)]
pub struct LoadedCase {
    pub name: String,
    pub volumes: [Volume; 4],
    pub mask: Mask,
}

impl LoadedCase {
    pub fn volume(&self, m: ModalityId) -> &Volume {
        &self.volumes[m.index()]
    }

    pub fn sources(&self, y: ModalityId) -> [&Volume; 3] {
        y.sources().map(|m| self.volume(m))
    }
}

impl From<&PhantomCase> for LoadedCase {
    fn from(c: &PhantomCase) -> Self {
        Self {
            name: case_dir_name(c.seed),
            volumes: c.volumes.clone(),
            mask: c.mask.clone(),
        }
    }
}

/// Write `n_train + n_val` phantom cases and the manifest. Seeds follow
/// [`make_split`].
pub fn write_phantoms(dir: &Path, n_train: usize, n_val: usize, base_seed: u64, dims: Dims) -> Result<Vec<ManifestEntry>> {
    let split = make_split(n_train, n_val, base_seed)?;
    std::fs::create_dir_all(dir)?;
    let tagged = split
        .train
        .iter()
        .map(|&s| (s, SplitName::Train))
        .chain(split.val.iter().map(|&s| (s, SplitName::Val)));
    let mut entries = Vec::new();
    for (seed, split) in tagged {
        let case = generate_case_with_dims(seed, dims)?;
        let name = case_dir_name(seed);
        let cdir = dir.join(&name);
        std::fs::create_dir_all(&cdir)?;
        for m in ModalityId::all() {
            write_nifti(case.volume(m), cdir.join(modality_file(m)))?;
        }
        write_nifti(&case.mask.to_volume(), cdir.join(MASK_FILE))?;
        entries.push(ManifestEntry { seed, split, case: name });
    }
    std::fs::write(dir.join(MANIFEST), format_manifest(&entries))?;
    Ok(entries)
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut s = format!("{MANIFEST_HEADER}\n");
    for e in entries {
        let _ = writeln!(s, "{}\t{}\t{}", e.seed, e.split.as_str(), e.case);
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(Error::Data(format!("manifest must start with {MANIFEST_HEADER:?}")));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            let bad = || Error::Data(format!("bad manifest line {l:?}"));
            if f.len() != 3 {
                return Err(bad());
            }
            let split = match f[1] {
                "train" => SplitName::Train,
                "val" => SplitName::Val,
                _ => return Err(bad()),
            };
            Ok(ManifestEntry {
                seed: f[0].parse().map_err(|_| bad())?,
                split,
                case: f[2].to_string(),
            })
        })
        .collect()
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    parse_manifest(&text)
}

fn data_err(path: &Path) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Io(io) => Error::Data(format!("{}: {io}", path.display())),
        other => other,
    }
}

/// Load one case directory, re-normalizing every modality within the mask.
pub fn load_case(dir: &Path, name: &str) -> Result<LoadedCase> {
    let cdir: PathBuf = dir.join(name);
    let mpath = cdir.join(MASK_FILE);
    let mask = Mask::from_threshold(&read_volume(&mpath).map_err(data_err(&mpath))?, 0.5);
    let mut vols = Vec::with_capacity(4);
    for m in ModalityId::all() {
        let p = cdir.join(modality_file(m));
        let v = read_volume(&p).map_err(data_err(&p))?;
        if v.dims() != mask.dims() {
            return Err(Error::Data(format!("{}: dims {:?} differ from mask {:?}", p.display(), v.dims(), mask.dims())));
        }
        vols.push(normalize(&v, &mask)?.0);
    }
    let volumes: [Volume; 4] = vols.try_into().expect("four modalities");
    Ok(LoadedCase {
        name: name.to_string(),
        volumes,
        mask,
    })
}

pub fn load_split(dir: &Path, split: SplitName) -> Result<Vec<LoadedCase>> {
    let cases: Vec<LoadedCase> = read_manifest(dir)?
        .iter()
        .filter(|e| e.split == split)
        .map(|e| load_case(dir, &e.case))
        .collect::<Result<_>>()?;
    if cases.is_empty() {
        return Err(Error::Data(format!("no {} cases in {}", split.as_str(), dir.display())));
    }
    Ok(cases)
}
