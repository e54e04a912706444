//! Model files are JSON objects:
//!
//! ```text
//! { "format": "adscreen-bigru", "version": 1,
//!   "input_dim": D, "hidden_dim": H, "num_classes": C, "seed": S,
//!   "standardizer": { "mean": [D], "std": [D] },        (optional)
//!   "params": { "forward.wz": [H*D], "forward.uz": [H*H], "forward.bz": [H],
//!               ... same for wr/ur/br and wh/uh/bh, then "backward.*",
//!               "head_w": [C*2H], "head_b": [C] } }
//! ```
//!
//! Matrices are row-major. Floats are written in shortest round-trip form, so
//! a save/load cycle reproduces every parameter bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BiGruClassifier, NeuralError, SequenceClassifier, Standardizer};

pub const MODEL_FORMAT: &str = "adscreen-bigru";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    input_dim: usize,
    hidden_dim: usize,
    num_classes: usize,
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    standardizer: Option<Standardizer>,
    params: BTreeMap<String, Vec<f64>>,
}

pub fn save_model(model: &SequenceClassifier, path: impl AsRef<Path>) -> Result<(), NeuralError> {
    let net = &model.net;
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        input_dim: net.input_dim(),
        hidden_dim: net.hidden_dim(),
        num_classes: net.num_classes(),
        seed: net.seed,
        standardizer: model.standardizer.clone(),
        params: net
            .tensors()
            .into_iter()
            .map(|(name, t)| (name, t.to_vec()))
            .collect(),
    };
    let text = serde_json::to_string(&file)
        .map_err(|e| NeuralError::FormatVersionMismatch(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

/// Loads a model and checks it has `num_classes` outputs.
pub fn load_model(
    path: impl AsRef<Path>,
    num_classes: usize,
) -> Result<SequenceClassifier, NeuralError> {
    let text = fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text)
        .map_err(|e| NeuralError::FormatVersionMismatch(format!("unreadable model file: {e}")))?;
    if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
        return Err(NeuralError::FormatVersionMismatch(format!(
            "expected {MODEL_FORMAT} v{MODEL_VERSION}, found {} v{}",
            file.format, file.version
        )));
    }
    if file.num_classes != num_classes {
        return Err(NeuralError::FormatVersionMismatch(format!(
            "model has {} classes, expected {num_classes}",
            file.num_classes
        )));
    }
    let mut net = BiGruClassifier::zeros(file.input_dim, file.hidden_dim, file.num_classes);
    net.seed = file.seed;
    for (name, slot) in net.tensors_mut() {
        let values = file.params.get(&name).ok_or_else(|| {
            NeuralError::FormatVersionMismatch(format!("missing parameter {name}"))
        })?;
        if values.len() != slot.len() {
            return Err(NeuralError::FormatVersionMismatch(format!(
                "parameter {name} has {} values, expected {}",
                values.len(),
                slot.len()
            )));
        }
        slot.copy_from_slice(values);
    }
    net.validate()
        .map_err(|e| NeuralError::FormatVersionMismatch(e.to_string()))?;
    if let Some(s) = &file.standardizer {
        if s.mean.len() != file.input_dim || s.std.len() != file.input_dim {
            return Err(NeuralError::FormatVersionMismatch(
                "standardizer dimension differs from input dim".into(),
            ));
        }
    }
    Ok(SequenceClassifier {
        net,
        standardizer: file.standardizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut model = SequenceClassifier::new(BiGruClassifier::random(5, 3, 4, 42));
        model.standardizer = Some(Standardizer {
            mean: vec![0.1, 0.2, 0.3, 1.0 / 3.0, -7.5],
            std: vec![1.0, 2.0, 0.5, 1e-3, 3.0],
        });
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path, 4).unwrap();
        assert_eq!(loaded, model);
        for ((_, a), (_, b)) in loaded.net.tensors().iter().zip(model.net.tensors()) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn truncated_and_mismatched_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&SequenceClassifier::new(BiGruClassifier::random(2, 2, 4, 1)), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();

        let truncated = dir.path().join("t.json");
        fs::write(&truncated, &text[..text.len() / 2]).unwrap();
        assert!(matches!(
            load_model(&truncated, 4),
            Err(NeuralError::FormatVersionMismatch(_)) | Err(NeuralError::Io(_))
        ));
        assert!(matches!(
            load_model(&path, 2),
            Err(NeuralError::FormatVersionMismatch(_))
        ));
        let bumped = dir.path().join("v.json");
        fs::write(&bumped, text.replace("\"version\":1", "\"version\":2")).unwrap();
        assert!(matches!(
            load_model(&bumped, 4),
            Err(NeuralError::FormatVersionMismatch(_))
        ));
        assert!(matches!(
            load_model(dir.path().join("none.json"), 4),
            Err(NeuralError::Io(_))
        ));
    }
}
