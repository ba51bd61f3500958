//! Checkpoints: a JSON manifest describing named arrays plus a sidecar
//! file of little-endian `f64` values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::layer::{Activation, Dense};
use super::loss::LossKind;
use super::matrix::Matrix;
use super::{BottomModel, TopModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the sidecar, in elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub data_file: String,
    pub meta: serde_json::Value,
    pub arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Archive {
    pub meta: serde_json::Value,
    arrays: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Archive {
    pub fn new() -> Self {
        Archive::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.arrays.push((name.into(), shape, data));
    }

    pub fn get(&self, name: &str) -> Result<(&[usize], &[f64])> {
        self.arrays
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, d)| (s.as_slice(), d.as_slice()))
            .ok_or_else(|| Error::Data(format!("checkpoint has no array {name:?}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.iter().map(|(n, _, _)| n.as_str())
    }

    /// Writes `<stem>.json` and `<stem>.bin`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let bin_path = with_ext(stem, "bin");
        let mut bytes = Vec::new();
        let mut entries = Vec::with_capacity(self.arrays.len());
        let mut offset = 0;
        for (name, shape, data) in &self.arrays {
            entries.push(ArrayEntry {
                name: name.clone(),
                shape: shape.clone(),
                offset,
            });
            for v in data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            offset += data.len();
        }
        let manifest = Manifest {
            data_file: bin_path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            meta: self.meta.clone(),
            arrays: entries,
        };
        fs::write(&bin_path, bytes)?;
        fs::write(with_ext(stem, "json"), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(&fs::read(with_ext(stem, "json"))?)?;
        let dir = stem.parent().unwrap_or(Path::new("."));
        let bytes = fs::read(dir.join(&manifest.data_file))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Data("checkpoint data is not a whole number of f64 values".into()));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let mut arrays = Vec::with_capacity(manifest.arrays.len());
        for e in manifest.arrays {
            let len: usize = e.shape.iter().product();
            let data = values
                .get(e.offset..e.offset + len)
                .ok_or_else(|| Error::Data(format!("array {:?} runs past the data file", e.name)))?
                .to_vec();
            arrays.push((e.name, e.shape, data));
        }
        Ok(Archive {
            meta: manifest.meta,
            arrays,
        })
    }
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn push_layers(archive: &mut Archive, prefix: &str, layers: &[Dense]) -> Vec<Activation> {
    for (i, l) in layers.iter().enumerate() {
        archive.push(
            format!("{prefix}.{i}.weights"),
            vec![l.weights.rows, l.weights.cols],
            l.weights.data.clone(),
        );
        archive.push(format!("{prefix}.{i}.bias"), vec![l.bias.len()], l.bias.clone());
    }
    layers.iter().map(|l| l.activation).collect()
}

fn read_layers(archive: &Archive, prefix: &str, activations: &[Activation]) -> Result<Vec<Dense>> {
    let mut layers = Vec::with_capacity(activations.len());
    for (i, &act) in activations.iter().enumerate() {
        let (shape, w) = archive.get(&format!("{prefix}.{i}.weights"))?;
        if shape.len() != 2 {
            return Err(Error::Data(format!("{prefix}.{i}.weights is not a matrix")));
        }
        let (_, b) = archive.get(&format!("{prefix}.{i}.bias"))?;
        layers.push(Dense::new(Matrix::from_vec(shape[0], shape[1], w.to_vec())?, b.to_vec(), act)?);
    }
    Ok(layers)
}

#[derive(Serialize, Deserialize)]
struct BottomMeta {
    activations: Vec<Activation>,
}

#[derive(Serialize, Deserialize)]
struct TopMeta {
    activations: Vec<Activation>,
    loss: LossKind,
    clients: usize,
}

impl BottomModel {
    pub fn write_archive(&self, archive: &mut Archive, prefix: &str) -> serde_json::Value {
        let activations = push_layers(archive, prefix, &self.layers);
        serde_json::to_value(BottomMeta { activations }).expect("plain struct serializes")
    }

    pub fn read_archive(archive: &Archive, prefix: &str, meta: &serde_json::Value) -> Result<Self> {
        let meta: BottomMeta = serde_json::from_value(meta.clone())?;
        BottomModel::new(read_layers(archive, prefix, &meta.activations)?)
    }
}

impl TopModel {
    pub fn write_archive(&self, archive: &mut Archive, prefix: &str) -> serde_json::Value {
        for (m, w) in self.interactive.iter().enumerate() {
            archive.push(format!("{prefix}.w.{m}"), vec![w.len()], w.clone());
        }
        let activations = push_layers(archive, &format!("{prefix}.alpha0"), &self.alpha0);
        serde_json::to_value(TopMeta {
            activations,
            loss: self.loss,
            clients: self.interactive.len(),
        })
        .expect("plain struct serializes")
    }

    pub fn read_archive(archive: &Archive, prefix: &str, meta: &serde_json::Value) -> Result<Self> {
        let meta: TopMeta = serde_json::from_value(meta.clone())?;
        let interactive = (0..meta.clients)
            .map(|m| archive.get(&format!("{prefix}.w.{m}")).map(|(_, d)| d.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let alpha0 = read_layers(archive, &format!("{prefix}.alpha0"), &meta.activations)?;
        TopModel::new(interactive, alpha0, meta.loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn models_roundtrip_through_files() {
        let mut rng = stream(5, Stream::Init);
        let bottom = BottomModel::init(6, &[(4, Activation::Relu), (2, Activation::Sigmoid)], &mut rng).unwrap();
        let top = TopModel::init(&[2, 2], &[(3, Activation::Tanh)], 2, LossKind::CrossEntropy, (0.5, 1.5), &mut rng).unwrap();
        let mut archive = Archive::new();
        let bm = bottom.write_archive(&mut archive, "bottom");
        let tm = top.write_archive(&mut archive, "top");
        archive.push("sigma", vec![], vec![0.5]);
        archive.meta = serde_json::json!({ "bottom": bm, "top": tm });

        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ckpt");
        archive.save(&stem).unwrap();
        let back = Archive::load(&stem).unwrap();
        assert_eq!(back, archive);
        assert_eq!(BottomModel::read_archive(&back, "bottom", &back.meta["bottom"]).unwrap(), bottom);
        assert_eq!(TopModel::read_archive(&back, "top", &back.meta["top"]).unwrap(), top);
        assert_eq!(back.get("sigma").unwrap(), (&[][..], &[0.5][..]));
        let raw = std::fs::read(dir.path().join("ckpt.bin")).unwrap();
        assert_eq!(&raw[..8], &bottom.layers[0].weights.data[0].to_le_bytes());
    }

    #[test]
    fn missing_array_is_data_error() {
        assert!(matches!(Archive::new().get("x"), Err(Error::Data(_))));
    }
}
