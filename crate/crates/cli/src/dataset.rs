//! Image/label pairs on disk: `NNNN.ppm` with a same-stem `NNNN.pgm`.

use std::fs;
use std::path::{Path, PathBuf};

use cifrenet_core::train::{gen_toy_sample, Sample, ToyCfg};

use crate::error::{Error, Result};
use crate::pnm;

/// Writes `cfg.n_samples` toy pairs into `dir`, returning the image paths.
pub fn write_toy(dir: &Path, cfg: &ToyCfg) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    (0..cfg.n_samples)
        .map(|i| {
            let s = gen_toy_sample(cfg, i)?;
            let image = dir.join(format!("{i:04}.ppm"));
            pnm::write_ppm(&image, &s.image)?;
            pnm::write_pgm(&image.with_extension("pgm"), cfg.height, cfg.width, &s.label)?;
            Ok(image)
        })
        .collect()
}

/// Every `*.ppm` in `dir` in name order, each with its label map.
pub fn load_dir(dir: &Path) -> Result<Vec<Sample>> {
    let mut images: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(Error::io(dir))?
        .map(|e| e.map(|e| e.path()).map_err(Error::io(dir)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "ppm"))
        .collect();
    images.sort();
    if images.is_empty() {
        return Err(Error::Invalid(format!("{}: no .ppm images found", dir.display())));
    }
    images
        .iter()
        .map(|p| {
            let image = pnm::read_ppm(p)?;
            let (h, w, label) = pnm::read_pgm(&p.with_extension("pgm"))?;
            if image.shape()[1..] != [h, w] {
                return Err(Error::Invalid(format!(
                    "{}: image is {}x{}, label is {h}x{w}",
                    p.display(),
                    image.shape()[1],
                    image.shape()[2]
                )));
            }
            Ok(Sample::new(image, label)?)
        })
        .collect()
}
