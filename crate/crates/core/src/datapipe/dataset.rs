use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{augment, decode_ppm, encode_ppm, rescale, resize_bilinear, AugmentParams, FloatImage, Image, PpmError};
use crate::par;
use crate::rng;
use crate::tensor::Tensor;
use crate::train::SplitAssignment;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: PpmError,
    },
    #[error("{0}: no class directory holds a decodable image")]
    NoClasses(PathBuf),
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ImageSource {
    File(PathBuf),
    Memory(Image),
}

impl ImageSource {
    pub fn decode(&self) -> Result<Image, DataError> {
        match self {
            ImageSource::Memory(img) => Ok(img.clone()),
            ImageSource::File(path) => {
                let bytes = fs::read(path).map_err(|source| DataError::Io {
                    path: path.clone(),
                    source,
                })?;
                decode_ppm(&bytes).map_err(|source| DataError::Decode {
                    path: path.clone(),
                    source,
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub source: ImageSource,
    pub label: usize,
}

/// Labeled images plus the class table. Class names are sorted bytewise
/// and a label indexes into them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub class_names: Vec<String>,
    pub split: Option<SplitAssignment>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    /// Examples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for e in &self.examples {
            counts[e.label] += 1;
        }
        counts
    }

    /// Decodes, resizes to `[height, width]` and rescales every image.
    pub fn prepare(&self, size: [usize; 2]) -> Result<PreparedSet, DataError> {
        let [h, w] = size;
        let images = par::map_range(self.examples.len(), |i| {
            let img = self.examples[i].source.decode()?;
            Ok(resize_bilinear(&rescale(&img), w, h))
        })
        .into_iter()
        .collect::<Result<Vec<_>, DataError>>()?;
        Ok(PreparedSet {
            images,
            labels: self.labels(),
            class_names: self.class_names.clone(),
            size,
        })
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut entries = fs::read_dir(dir)
        .map_err(io(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io(dir)))
        .collect::<Result<Vec<_>, _>>()?;
    entries.sort();
    Ok(entries)
}

/// Reads `root/<class>/<image>.ppm`. Classes are the sorted subdirectory
/// names; files are taken in sorted path order. Undecodable files and
/// classes with no usable image are skipped with a warning.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let root = root.as_ref();
    let mut class_names = Vec::new();
    let mut examples = Vec::new();
    for dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        let name = dir
            .file_name()
            .expect("directory entry has a name")
            .to_string_lossy()
            .into_owned();
        let mut usable = Vec::new();
        for file in sorted_entries(&dir)?.into_iter().filter(|p| p.is_file()) {
            let is_ppm = file.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
            if !is_ppm {
                continue;
            }
            match ImageSource::File(file.clone()).decode() {
                Ok(_) => usable.push(file),
                Err(e) => log::warn!("skipping {e}"),
            }
        }
        if usable.is_empty() {
            log::warn!("skipping class directory {} with no decodable images", dir.display());
            continue;
        }
        let label = class_names.len();
        class_names.push(name);
        examples.extend(usable.into_iter().map(|p| Example {
            source: ImageSource::File(p),
            label,
        }));
    }
    if class_names.is_empty() {
        return Err(DataError::NoClasses(root.to_path_buf()));
    }
    Ok(Dataset {
        examples,
        class_names,
        split: None,
    })
}

/// Writes a dataset as `root/<class>/<class>_<nnnnn>.ppm`, numbering files
/// per class in example order.
pub fn write_dataset(dataset: &Dataset, root: impl AsRef<Path>) -> Result<(), DataError> {
    let root = root.as_ref();
    let mut next = vec![0usize; dataset.class_names.len()];
    for name in &dataset.class_names {
        let dir = root.join(name);
        fs::create_dir_all(&dir).map_err(io(&dir))?;
    }
    for e in &dataset.examples {
        let name = &dataset.class_names[e.label];
        let path = root.join(name).join(format!("{name}_{:05}.ppm", next[e.label]));
        next[e.label] += 1;
        fs::write(&path, encode_ppm(&e.source.decode()?)).map_err(io(&path))?;
    }
    Ok(())
}

/// Images already at model resolution, ready for batching.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSet {
    pub images: Vec<FloatImage>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub size: [usize; 2],
}

impl PreparedSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Stacks the given examples into an `[N, H, W, 3]` batch.
    pub fn batch(&self, indices: &[usize]) -> Tensor<f32> {
        self.stack(indices, |i| self.images[i].clone())
    }

    /// Like [`PreparedSet::batch`], augmenting each image with its own
    /// stream derived from `(seed, epoch, example index)`.
    pub fn augmented_batch(&self, indices: &[usize], params: &AugmentParams, seed: u64, epoch: u64) -> Tensor<f32> {
        self.stack(indices, |i| {
            let mut r = rng::stream(seed, &[epoch, i as u64]);
            augment(&self.images[i], params, &mut r)
        })
    }

    fn stack(&self, indices: &[usize], load: impl Fn(usize) -> FloatImage + Send + Sync) -> Tensor<f32> {
        let [h, w] = self.size;
        let per = h * w * 3;
        let mut data = vec![0.0f32; indices.len() * per];
        par::for_each_chunk(&mut data, per, |slot, chunk| {
            chunk.copy_from_slice(&load(indices[slot]).data);
        });
        Tensor::new(vec![indices.len(), h, w, 3], data).expect("batch shape")
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(v: u8) -> Image {
        Image {
            width: 2,
            height: 2,
            pixels: vec![v; 12],
        }
    }

    #[test]
    fn load_assigns_sorted_class_indices() {
        let root = tempfile::tempdir().unwrap();
        let names = [
            "Spotted_Wilt_Virus",
            "Early_blight",
            "Potassium_Deficiency",
            "Healthy",
            "Nitrogen_Deficiency",
            "Late_blight",
            "Magnesium_Deficiency",
            "Leaf_Miner",
        ];
        for (i, n) in names.iter().enumerate() {
            let d = root.path().join(n);
            fs::create_dir(&d).unwrap();
            for j in 0..=i % 3 {
                fs::write(d.join(format!("{j}.ppm")), encode_ppm(&solid(i as u8))).unwrap();
            }
        }
        let ds = load_dataset(root.path()).unwrap();
        assert_eq!(
            ds.class_names,
            [
                "Early_blight",
                "Healthy",
                "Late_blight",
                "Leaf_Miner",
                "Magnesium_Deficiency",
                "Nitrogen_Deficiency",
                "Potassium_Deficiency",
                "Spotted_Wilt_Virus"
            ]
        );
        // Label distribution equals per-directory file counts.
        let expected: Vec<usize> = ds
            .class_names
            .iter()
            .map(|n| fs::read_dir(root.path().join(n)).unwrap().count())
            .collect();
        assert_eq!(ds.class_counts(), expected);
        assert_eq!(load_dataset(root.path()).unwrap(), ds);
    }

    #[test]
    fn minimal_corpus_and_skips() {
        let root = tempfile::tempdir().unwrap();
        for (n, v) in [("a", 1u8), ("b", 2)] {
            fs::create_dir(root.path().join(n)).unwrap();
            fs::write(root.path().join(n).join("x.ppm"), encode_ppm(&solid(v))).unwrap();
        }
        fs::create_dir(root.path().join("empty")).unwrap();
        fs::write(root.path().join("b").join("broken.ppm"), b"P5 nope").unwrap();
        fs::write(root.path().join("b").join("notes.txt"), b"ignored").unwrap();
        let ds = load_dataset(root.path()).unwrap();
        assert_eq!(ds.class_names, ["a", "b"]);
        assert_eq!(ds.labels(), vec![0, 1]);
    }

    #[test]
    fn no_usable_classes_is_fatal() {
        let root = tempfile::tempdir().unwrap();
        fs::create_dir(root.path().join("empty")).unwrap();
        assert!(matches!(load_dataset(root.path()), Err(DataError::NoClasses(_))));
    }

    #[test]
    fn write_then_load_preserves_pixels() {
        let ds = Dataset {
            examples: vec![
                Example {
                    source: ImageSource::Memory(solid(9)),
                    label: 1,
                },
                Example {
                    source: ImageSource::Memory(solid(200)),
                    label: 0,
                },
            ],
            class_names: vec!["x".into(), "y".into()],
            split: None,
        };
        let root = tempfile::tempdir().unwrap();
        write_dataset(&ds, root.path()).unwrap();
        let back = load_dataset(root.path()).unwrap();
        assert_eq!(back.labels(), vec![0, 1]);
        assert_eq!(back.examples[1].source.decode().unwrap(), solid(9));
    }
}
