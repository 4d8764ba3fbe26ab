//! Representation dumps on disk: NPY v1.0 arrays indexed by a JSON manifest.
//!
//! A run directory looks like
//!
//! ```text
//! run/
//!   manifest.json
//!   odd01.npy  even02.npy  ...  head09.npy
//! ```
//!
//! Every write goes to a temporary file in the destination directory and is
//! renamed into place, so readers never observe a partially written file.

mod manifest;
pub mod npy;

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use manifest::{ManifestEntry, RunManifest};
pub use npy::{read_array, write_array, write_vector, Dtype, NpyArray};

use crate::error::{Error, Result};
use crate::repcore::{validate_alignment, LabelMatrix, RepMatrix};

/// Writes through `f` into a temporary sibling of `path`, then renames it.
pub fn atomic_write<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        f(&mut w).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn atomic_write_str(path: &Path, text: &str) -> Result<()> {
    atomic_write(path, |w| w.write_all(text.as_bytes()).map_err(|e| Error::io(path, e)))
}

/// Loads every entry of a manifest, in `(parity, layer_index)` order.
pub fn load_run(manifest_path: &Path) -> Result<Vec<RepMatrix>> {
    load_run_with_manifest(manifest_path).map(|(_, reps)| reps)
}

pub fn load_run_with_manifest(manifest_path: &Path) -> Result<(RunManifest, Vec<RepMatrix>)> {
    let manifest = RunManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut reps = manifest
        .entries
        .par_iter()
        .map(|e| load_entry(base, e))
        .collect::<Result<Vec<_>>>()?;
    validate_alignment(&reps)?;
    reps.sort_by_key(|r| (r.tag().parity, r.tag().layer_index));
    Ok((manifest, reps))
}

fn load_entry(base: &Path, entry: &ManifestEntry) -> Result<RepMatrix> {
    let path = base.join(&entry.path);
    let array = read_array(&path)?;
    let tag = entry.tag();
    if array.dtype != entry.dtype {
        return Err(Error::Manifest(format!(
            "{}: manifest declares {} but the file holds {}",
            path.display(),
            entry.dtype,
            array.dtype
        )));
    }
    if array.rows() != entry.m {
        return Err(Error::Alignment {
            expected: entry.m,
            found: array.rows(),
            tag: Box::new(tag),
        });
    }
    if array.cols() != entry.p {
        return Err(Error::Manifest(format!(
            "{}: manifest declares {} features, file has {}",
            path.display(),
            entry.p,
            array.cols()
        )));
    }
    RepMatrix::new(array.into_matrix(), tag)
}

/// File name used for a tagged representation inside a run directory.
pub fn entry_file_name(rep: &RepMatrix) -> PathBuf {
    let t = rep.tag();
    PathBuf::from(format!("{}{:02}.npy", t.parity, t.layer_index))
}

/// Writes each representation as an NPY file in `dir`, then the manifest.
///
/// The manifest is written last, so an interrupted call never leaves a
/// readable manifest pointing at missing files.
pub fn write_run(
    dir: &Path,
    manifest_name: &str,
    dataset_id: &str,
    reps: &[RepMatrix],
    dtype: Dtype,
) -> Result<RunManifest> {
    validate_alignment(reps)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(reps.len());
    for rep in reps {
        let file = entry_file_name(rep);
        write_array(rep.data().view(), &dir.join(&file), dtype)?;
        let t = rep.tag();
        entries.push(ManifestEntry {
            model_id: t.model_id.clone(),
            method: t.method,
            seed: t.seed,
            layer_index: t.layer_index,
            parity: t.parity,
            block_group: t.block_group,
            path: file,
            m: rep.samples(),
            p: rep.features(),
            dtype,
        });
    }
    let manifest = RunManifest {
        dataset_id: dataset_id.to_string(),
        sample_count: reps[0].samples(),
        entries,
    };
    manifest.validate()?;
    atomic_write_str(&dir.join(manifest_name), &manifest.to_json())?;
    Ok(manifest)
}

/// Reads a label file: a 1-D array of class indices, or a 2-D one-hot matrix.
pub fn read_labels(path: &Path) -> Result<LabelMatrix> {
    let array = read_array(path)?;
    match array.shape.len() {
        1 => {
            let classes = array
                .values
                .iter()
                .map(|&v| {
                    if v >= 0.0 && v.fract() == 0.0 {
                        Ok(v as usize)
                    } else {
                        Err(Error::Format(format!(
                            "{}: class index {v} is not a non-negative integer",
                            path.display()
                        )))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            LabelMatrix::from_indices_inferred(&classes)
        }
        _ => LabelMatrix::from_one_hot(array.into_matrix()),
    }
}

pub fn write_labels(labels: &LabelMatrix, path: &Path) -> Result<()> {
    let values: Vec<f64> = labels.classes().iter().map(|&k| k as f64).collect();
    write_vector(&values, path, Dtype::F8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repcore::{LayerTag, Method, Parity};
    use ndarray::Array2;

    fn rep(m: usize, layer: usize, parity: Parity, fill: f64) -> RepMatrix {
        let data = Array2::from_shape_fn((m, 3), |(i, j)| fill + (i * 3 + j) as f64);
        RepMatrix::new(data, LayerTag::new("model", Method::Contrastive, 1, layer, parity)).unwrap()
    }

    #[test]
    fn write_then_load_orders_by_parity_then_layer() {
        let dir = tempfile::tempdir().unwrap();
        let reps = vec![
            rep(5, 4, Parity::Even, 0.0),
            rep(5, 1, Parity::Odd, 1.0),
            rep(5, 2, Parity::Even, 2.0),
            rep(5, 3, Parity::Odd, 3.0),
        ];
        write_run(dir.path(), "manifest.json", "toy", &reps, Dtype::F8).unwrap();
        let loaded = load_run(&dir.path().join("manifest.json")).unwrap();
        let order: Vec<_> = loaded.iter().map(|r| r.tag().short_label()).collect();
        assert_eq!(order, ["odd1", "odd3", "even2", "even4"]);
        assert_eq!(loaded[2], reps[2]);
    }

    #[test]
    fn short_file_is_alignment_error() {
        let dir = tempfile::tempdir().unwrap();
        let reps = vec![rep(5, 1, Parity::Odd, 0.0), rep(5, 2, Parity::Even, 0.0)];
        write_run(dir.path(), "manifest.json", "toy", &reps, Dtype::F8).unwrap();
        let short = rep(4, 2, Parity::Even, 0.0);
        write_array(short.data().view(), &dir.path().join("even02.npy"), Dtype::F8).unwrap();
        match load_run(&dir.path().join("manifest.json")) {
            Err(Error::Alignment { found: 4, tag, .. }) => assert_eq!(tag.layer_index, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let reps = vec![rep(5, 1, Parity::Odd, 0.0)];
        write_run(dir.path(), "manifest.json", "toy", &reps, Dtype::F8).unwrap();
        std::fs::remove_file(dir.path().join("odd01.npy")).unwrap();
        assert!(matches!(load_run(&dir.path().join("manifest.json")), Err(Error::Io { .. })));
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let labels = LabelMatrix::from_indices(&[0, 2, 1, 1], 3).unwrap();
        let path = dir.path().join("labels.npy");
        write_labels(&labels, &path).unwrap();
        assert_eq!(read_labels(&path).unwrap(), labels);
        write_array(labels.data().view(), &path, Dtype::F4).unwrap();
        assert_eq!(read_labels(&path).unwrap(), labels);
        write_vector(&[0.0, 1.5], &path, Dtype::F8).unwrap();
        assert!(read_labels(&path).is_err());
    }
}
