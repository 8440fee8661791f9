use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::ColorType;

use crate::data::{resize_bilinear, Dataset, Sample, Source};
use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::scalar::Scalar;

const EXTENSIONS: [&str; 2] = ["png", "pgm"];

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    out.sort();
    Ok(out)
}

fn read_gray<T: Scalar>(path: &Path, size: usize) -> Result<Tensor<T>> {
    let img = image::open(path).map_err(|e| Error::UnreadableFile { path: path.to_path_buf(), reason: e.to_string() })?;
    if img.color() != ColorType::L8 {
        return Err(Error::NonGrayscale { path: path.to_path_buf() });
    }
    let gray = img.into_luma8();
    let (w, h) = gray.dimensions();
    let data = gray.as_raw().iter().map(|&b| T::lit(f64::from(b) / 255.0)).collect();
    let t = Tensor::new(vec![h as usize, w as usize, 1], data)?;
    Ok(resize_bilinear(&t, size))
}

/// Loads `root/<class>/<image>` trees of 8-bit grayscale PNG or PGM files.
/// Classes are labelled in sorted directory-name order.
pub fn load_dir<T: Scalar>(root: &Path, image_size: usize) -> Result<Dataset<T>> {
    if !root.is_dir() {
        return Err(Error::MissingDataset { path: root.to_path_buf() });
    }
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::MissingDataset { path: root.to_path_buf() });
    }
    let mut samples = Vec::new();
    let mut class_names = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        let files: Vec<PathBuf> = sorted_entries(dir)?
            .into_iter()
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            })
            .collect();
        if files.is_empty() {
            return Err(Error::EmptyClass { path: dir.clone() });
        }
        for f in files {
            let image = read_gray(&f, image_size)?;
            samples.push(Sample { image, label, source: Source::File(f) });
        }
        class_names.push(dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
    }
    Ok(Dataset { samples, class_names })
}

/// Writes a dataset as `root/<class name>/<index>.pgm` (binary 8-bit PGM).
pub fn export_dir<T: Scalar>(ds: &Dataset<T>, root: &Path) -> Result<()> {
    for name in &ds.class_names {
        fs::create_dir_all(root.join(name))?;
    }
    for (i, s) in ds.samples.iter().enumerate() {
        let (h, w) = (s.image.shape()[0], s.image.shape()[1]);
        let mut buf = format!("P5\n{w} {h}\n255\n").into_bytes();
        buf.extend(s.image.data().iter().map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8));
        let path = root.join(&ds.class_names[s.label]).join(format!("{i:05}.pgm"));
        fs::File::create(path)?.write_all(&buf)?;
    }
    Ok(())
}
