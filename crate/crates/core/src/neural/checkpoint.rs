use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{cast, Module, NeuralError, Real, Result, Tensor};
use crate::kitti_io::{read_npy, write_npy};

const MANIFEST: &str = "manifest.txt";

/// Writes every parameter and buffer of `model` as one NPY file in `dir`,
/// plus `manifest.txt` with one `name file shape` line per entry.
pub fn save_checkpoint<T: Real, M: Module<T> + ?Sized>(model: &mut M, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| NeuralError::Checkpoint(format!("{}: {e}", dir.display())))?;
    let mut entries: Vec<(String, Tensor<T>)> = Vec::new();
    model.visit_params("", &mut |name, p| entries.push((name, p.value.clone())));
    model.visit_buffers("", &mut |name, b| entries.push((name, b.clone())));
    let mut manifest = String::new();
    for (name, t) in &entries {
        let file = format!("{name}.npy");
        write_npy(dir.join(&file), t.shape(), &T::to_npy(&t.data))?;
        let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!("{name} {file} {}\n", shape.join("x")));
    }
    fs::write(dir.join(MANIFEST), manifest).map_err(|e| NeuralError::Checkpoint(format!("{}: {e}", dir.display())))
}

/// Restores a checkpoint written by [`save_checkpoint`]. Every parameter and
/// buffer of `model` must be present with a matching shape.
pub fn load_checkpoint<T: Real, M: Module<T> + ?Sized>(model: &mut M, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(MANIFEST))
        .map_err(|e| NeuralError::Checkpoint(format!("{}: {e}", dir.join(MANIFEST).display())))?;
    let mut stored: HashMap<String, Tensor<T>> = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [name, file, shape] = fields[..] else {
            return Err(NeuralError::Checkpoint(format!("manifest line {}: expected `name file shape`", n + 1)));
        };
        let shape: Vec<usize> = shape
            .split('x')
            .map(|d| d.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| NeuralError::Checkpoint(format!("manifest line {}: bad shape `{shape}`", n + 1)))?;
        let arr = read_npy(dir.join(file))?;
        if arr.shape != shape {
            return Err(NeuralError::Checkpoint(format!(
                "{name}: manifest shape {shape:?} but file holds {:?}",
                arr.shape
            )));
        }
        let data = arr.data.to_f64().into_iter().map(cast).collect();
        stored.insert(name.to_string(), Tensor::from_vec(&shape, data));
    }
    let mut err = None;
    let mut restore = |name: String, target: &mut Tensor<T>| {
        if err.is_some() {
            return;
        }
        match stored.get(&name) {
            Some(t) if t.shape() == target.shape() => target.data.copy_from_slice(&t.data),
            Some(t) => {
                err = Some(NeuralError::Checkpoint(format!(
                    "{name}: model expects {:?}, checkpoint has {:?}",
                    target.shape(),
                    t.shape()
                )))
            }
            None => err = Some(NeuralError::Checkpoint(format!("{name} missing from checkpoint"))),
        }
    };
    model.visit_params("", &mut |name, p| restore(name, &mut p.value));
    model.visit_buffers("", &mut restore);
    err.map_or(Ok(()), Err)
}
