use std::path::{Path, PathBuf};

use prost::Message;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::onnx::{
    AttributeProto, DimValue, GraphProto, ModelProto, NodeProto, OperatorSetIdProto, TensorProto,
    TypeValue, ValueInfoProto, FLOAT,
};
use super::{StyleModel, ARCHITECTURE, IN_EPS};
use crate::{Error, Result};

pub const ONNX_OPSET: i64 = 13;
pub const ONNX_IR_VERSION: i64 = 7;
pub const ONNX_INPUT: &str = "input";
pub const ONNX_OUTPUT: &str = "output";

/// Written next to the exported graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub path: PathBuf,
    pub opset: i64,
    pub ir_version: i64,
    pub input_name: String,
    pub output_name: String,
    /// Symbolic names for dynamic dimensions.
    pub input_shape: Vec<String>,
    pub output_shape: Vec<String>,
    pub param_count: usize,
    pub params_sha256: String,
    pub file_sha256: String,
}

/// What an ONNX file contains, as far as this crate cares.
#[derive(Clone, Debug, PartialEq)]
pub struct OnnxSummary {
    pub ir_version: i64,
    pub opset: Option<i64>,
    pub op_types: Vec<String>,
    pub inputs: Vec<(String, Vec<String>)>,
    pub outputs: Vec<(String, Vec<String>)>,
    pub initializer_count: usize,
    /// Float elements across all initializers.
    pub float_elements: usize,
}

struct Builder {
    nodes: Vec<NodeProto>,
    inits: Vec<TensorProto>,
    counter: usize,
}

impl Builder {
    fn fresh(&mut self, prefix: &str) -> String {
        self.counter += 1;
        format!("{prefix}_{}", self.counter)
    }

    fn node(&mut self, op: &str, inputs: Vec<String>, attrs: Vec<AttributeProto>) -> String {
        let out = self.fresh(&op.to_lowercase());
        self.nodes.push(NodeProto {
            input: inputs,
            output: vec![out.clone()],
            name: format!("{out}_node"),
            op_type: op.into(),
            attribute: attrs,
        });
        out
    }

    fn init_f32(&mut self, prefix: &str, dims: &[usize], data: &[f32]) -> String {
        let name = self.fresh(prefix);
        self.inits.push(TensorProto::f32(&name, dims, data));
        name
    }

    fn init_i64(&mut self, prefix: &str, data: &[i64]) -> String {
        let name = self.fresh(prefix);
        self.inits.push(TensorProto::i64(&name, data));
        name
    }
}

fn build_model(model: &StyleModel<f32>) -> ModelProto {
    let mut b = Builder {
        nodes: Vec::new(),
        inits: Vec::new(),
        counter: 0,
    };
    let scales = b.init_f32("up_scales", &[4], &[1.0, 1.0, 2.0, 2.0]);
    let mut h = ONNX_INPUT.to_string();
    for stage in model.stages() {
        let input = h.clone();
        for c in stage {
            let s = c.spec;
            if s.upsample {
                h = b.node(
                    "Resize",
                    vec![h, String::new(), scales.clone()],
                    vec![
                        AttributeProto::string("mode", "nearest"),
                        AttributeProto::string("coordinate_transformation_mode", "asymmetric"),
                        AttributeProto::string("nearest_mode", "floor"),
                    ],
                );
            }
            let p = (s.kernel / 2) as i64;
            let pads = b.init_i64("pads", &[0, 0, p, p, 0, 0, p, p]);
            h = b.node(
                "Pad",
                vec![h, pads],
                vec![AttributeProto::string("mode", "reflect")],
            );
            let w = b.init_f32("weight", c.weight.shape(), c.weight.data());
            let bias = b.init_f32("bias", c.bias.shape(), c.bias.data());
            let k = s.kernel as i64;
            let st = s.stride as i64;
            h = b.node(
                "Conv",
                vec![h, w, bias],
                vec![
                    AttributeProto::ints("kernel_shape", vec![k, k]),
                    AttributeProto::ints("strides", vec![st, st]),
                    AttributeProto::ints("pads", vec![0, 0, 0, 0]),
                    AttributeProto::ints("dilations", vec![1, 1]),
                    AttributeProto::int("group", 1),
                ],
            );
            if let Some((gamma, beta)) = &c.affine {
                let g = b.init_f32("gamma", gamma.shape(), gamma.data());
                let be = b.init_f32("beta", beta.shape(), beta.data());
                h = b.node(
                    "InstanceNormalization",
                    vec![h, g, be],
                    vec![AttributeProto::float("epsilon", IN_EPS as f32)],
                );
            }
            if s.relu {
                h = b.node("Relu", vec![h], vec![]);
            }
        }
        if stage.len() == 2 {
            h = b.node("Add", vec![input, h], vec![]);
        }
    }
    // Rename the final tensor to the public output name.
    if let Some(last) = b.nodes.last_mut() {
        last.output = vec![ONNX_OUTPUT.into()];
    }
    let dims = || {
        vec![
            DimValue::DimValue(1),
            DimValue::DimValue(3),
            DimValue::DimParam("height".into()),
            DimValue::DimParam("width".into()),
        ]
    };
    ModelProto {
        ir_version: ONNX_IR_VERSION,
        producer_name: "stylepass".into(),
        producer_version: env!("CARGO_PKG_VERSION").into(),
        graph: Some(GraphProto {
            node: b.nodes,
            name: "style_network".into(),
            initializer: b.inits,
            input: vec![ValueInfoProto::float_tensor(ONNX_INPUT, dims())],
            output: vec![ValueInfoProto::float_tensor(ONNX_OUTPUT, dims())],
        }),
        opset_import: vec![OperatorSetIdProto {
            domain: String::new(),
            version: ONNX_OPSET,
        }],
    }
}

/// Operator sequence the exported graph must contain.
pub fn expected_op_types() -> Vec<&'static str> {
    let mut ops = Vec::new();
    for stage in ARCHITECTURE {
        let convs = stage.convs();
        for c in &convs {
            if c.upsample {
                ops.push("Resize");
            }
            ops.extend(["Pad", "Conv"]);
            if c.norm {
                ops.push("InstanceNormalization");
            }
            if c.relu {
                ops.push("Relu");
            }
        }
        if convs.len() == 2 {
            ops.push("Add");
        }
    }
    ops
}

/// Serialises the network as an opset-13 ONNX graph with dynamic height and
/// width. Refuses non-finite weights.
pub fn export_graph(model: &StyleModel<f32>, path: &Path) -> Result<ExportManifest> {
    if !model.is_finite() {
        return Err(Error::Export(
            "network weights contain NaN or infinity".into(),
        ));
    }
    let bytes = build_model(model).encode_to_vec();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    std::fs::write(path, &bytes).map_err(Error::io(path))?;
    let summary = inspect_onnx(&bytes)?;
    let shape = summary.inputs[0].1.clone();
    Ok(ExportManifest {
        path: path.to_path_buf(),
        opset: ONNX_OPSET,
        ir_version: ONNX_IR_VERSION,
        input_name: ONNX_INPUT.into(),
        output_name: ONNX_OUTPUT.into(),
        input_shape: shape.clone(),
        output_shape: summary.outputs[0].1.clone(),
        param_count: model.param_count(),
        params_sha256: model.checksum(),
        file_sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

fn value_dims(v: &ValueInfoProto) -> Vec<String> {
    let Some(TypeValue::TensorType(t)) = v.r#type.as_ref().and_then(|t| t.value.as_ref()) else {
        return Vec::new();
    };
    t.shape
        .iter()
        .flat_map(|s| &s.dim)
        .map(|d| match &d.value {
            Some(DimValue::DimValue(n)) => n.to_string(),
            Some(DimValue::DimParam(p)) => p.clone(),
            None => "?".into(),
        })
        .collect()
}

/// Decodes an ONNX file and summarises its graph.
pub fn inspect_onnx(bytes: &[u8]) -> Result<OnnxSummary> {
    let corrupt = |reason: String| Error::Corrupt {
        what: "onnx graph",
        reason,
    };
    let model = ModelProto::decode(bytes).map_err(|e| corrupt(e.to_string()))?;
    let graph = model
        .graph
        .ok_or_else(|| corrupt("model has no graph".into()))?;
    let mut float_elements = 0usize;
    for t in &graph.initializer {
        let n = t
            .element_count()
            .ok_or_else(|| corrupt(format!("initializer {} has invalid dims", t.name)))?;
        if t.data_type == FLOAT {
            if t.raw_data.len() != n * 4 {
                return Err(corrupt(format!(
                    "initializer {} holds {} bytes for {n} floats",
                    t.name,
                    t.raw_data.len()
                )));
            }
            float_elements += n;
        }
    }
    if graph.input.is_empty() || graph.output.is_empty() {
        return Err(corrupt("graph declares no inputs or outputs".into()));
    }
    Ok(OnnxSummary {
        ir_version: model.ir_version,
        opset: model
            .opset_import
            .iter()
            .find(|o| o.domain.is_empty())
            .map(|o| o.version),
        op_types: graph.node.iter().map(|n| n.op_type.clone()).collect(),
        inputs: graph
            .input
            .iter()
            .map(|v| (v.name.clone(), value_dims(v)))
            .collect(),
        outputs: graph
            .output
            .iter()
            .map(|v| (v.name.clone(), value_dims(v)))
            .collect(),
        initializer_count: graph.initializer.len(),
        float_elements,
    })
}
