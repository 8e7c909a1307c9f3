//! On-disk form of a quantized model: the transformed model document,
//! a quant-info JSON file and little-endian integer blobs.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use super::QuantizedModel;
use crate::fxp::long_bits;
use crate::ir::save_model_string;

impl QuantizedModel {
    /// Per-node formats and blob file names, keyed by node id.
    pub fn info_json(&self) -> Value {
        let mut nodes = Map::new();
        for id in &self.order {
            let li = &self.info[id];
            let mut entry = Map::new();
            entry.insert("kind".into(), json!(self.graph.nodes[id].kind().name()));
            entry.insert("n_x".into(), json!(li.n_x));
            entry.insert("n_y".into(), json!(li.n_y));
            if let (Some(n_w), Some(n_b)) = (li.n_w, li.n_b) {
                entry.insert("n_w".into(), json!(n_w));
                entry.insert("n_b".into(), json!(n_b));
                entry.insert("kernel".into(), json!(format!("weights/{id}.kernel.bin")));
                entry.insert("bias".into(), json!(format!("weights/{id}.bias.bin")));
            }
            nodes.insert(id.clone(), Value::Object(entry));
        }
        json!({
            "width": self.width,
            "container_bytes": crate::fxp::container_bytes(self.width),
            "bias_container_bytes": long_bits(self.width) / 8,
            "nodes": nodes,
        })
    }

    /// Write `model.json`, `quant.json` and `weights/*.bin` under `dir`.
    pub fn write_archive(&self, dir: &Path) -> io::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir.join("weights"))?;
        let mut written = Vec::new();
        let mut put = |rel: String, bytes: Vec<u8>| -> io::Result<()> {
            let path = dir.join(rel);
            fs::write(&path, bytes)?;
            written.push(path);
            Ok(())
        };
        put("model.json".into(), save_model_string(&self.graph).into_bytes())?;
        let mut info = serde_json::to_string_pretty(&self.info_json()).expect("serializable");
        info.push('\n');
        put("quant.json".into(), info.into_bytes())?;
        let long = long_bits(self.width);
        for (id, p) in &self.params {
            put(format!("weights/{id}.kernel.bin"), p.weights.data().to_le_bytes())?;
            let bias: Vec<u8> = if long == 16 {
                p.bias.iter().flat_map(|&b| (b as i16).to_le_bytes()).collect()
            } else {
                p.bias.iter().flat_map(|&b| (b as i32).to_le_bytes()).collect()
            };
            put(format!("weights/{id}.bias.bin"), bias)?;
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use crate::ir::{build_mlp, MlpConfig, Shape};
    use crate::quantizer::{quantize_model, QuantizationScheme};

    #[test]
    fn archive_layout() {
        let g = build_mlp(&MlpConfig {
            input: Shape::new(1, 8),
            layers: 2,
            neurons: 4,
            classes: 2,
        })
        .unwrap();
        let qm = quantize_model(&g, &QuantizationScheme::per_network(16, 9), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        qm.write_archive(dir.path()).unwrap();
        let info: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("quant.json")).unwrap()).unwrap();
        assert_eq!(info["nodes"]["fc1"]["n_w"], 9);
        assert_eq!(info["nodes"]["classifier"]["n_b"], 18);
        let kernel = std::fs::read(dir.path().join("weights/fc1.kernel.bin")).unwrap();
        assert_eq!(kernel.len(), 8 * 4 * 2);
        let bias = std::fs::read(dir.path().join("weights/fc1.bias.bin")).unwrap();
        assert_eq!(bias.len(), 4 * 4);
    }
}
