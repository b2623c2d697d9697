//! Versioned structured-text persistence for model weights.
//!
//! Layout (blank lines ignored):
//!
//! ```text
//! version 1
//! kind model
//! widths 2 16 2
//! activation relu            # or: activation quantized_relu 16
//! layer 0 weights 16 2
//! <16 rows of 2 floats>
//! layer 0 biases 16
//! <1 row of 16 floats>
//! ...
//! end
//! ```
//!
//! Floats are stored with 17 significant digits, so a save/load round trip
//! reproduces forward outputs bitwise.

use std::path::Path;

use crate::models::mlp::{Activation, Layer, MlpSpec};
use crate::models::ModelError;
use crate::textfmt::{
    format_f64, parse_f64_row, parse_usize, LineCursor, TextError,
};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Largest accepted layer width; keeps hostile headers from forcing huge
/// allocations before the row data is even read.
const MAX_WIDTH: usize = 1 << 20;
const MAX_LAYERS: usize = 64;

impl From<TextError> for ModelError {
    fn from(e: TextError) -> Self {
        ModelError::Parse { line: e.line, field: e.field, reason: e.reason }
    }
}

/// Serializes a spec into the text format.
pub fn write_model(spec: &MlpSpec) -> String {
    let mut out = String::new();
    out.push_str(&format!("version {MODEL_FORMAT_VERSION}\n"));
    out.push_str("kind model\n");
    out.push_str("widths");
    for w in spec.widths() {
        out.push_str(&format!(" {w}"));
    }
    out.push('\n');
    match spec.activation() {
        Activation::Relu => out.push_str("activation relu\n"),
        Activation::QuantizedRelu { levels } => {
            out.push_str(&format!("activation quantized_relu {levels}\n"))
        }
    }
    for (i, layer) in spec.layers().iter().enumerate() {
        let in_dim = spec.widths()[i];
        let out_dim = spec.widths()[i + 1];
        out.push_str(&format!("layer {i} weights {out_dim} {in_dim}\n"));
        for row in 0..out_dim {
            let cells: Vec<String> = layer.weights[row * in_dim..(row + 1) * in_dim]
                .iter()
                .map(|&v| format_f64(v))
                .collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        out.push_str(&format!("layer {i} biases {out_dim}\n"));
        let cells: Vec<String> = layer.biases.iter().map(|&v| format_f64(v)).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out.push_str("end\n");
    out
}

/// Parses the text format back into a spec, naming the offending field on
/// failure.
pub fn parse_model(text: &str) -> Result<MlpSpec, ModelError> {
    let mut cursor = LineCursor::new(text);

    let (line, content) = cursor.expect_line("version")?;
    let version = content
        .strip_prefix("version ")
        .ok_or_else(|| TextError::new(line, "version", "expected `version <n>`"))?;
    if version.trim() != MODEL_FORMAT_VERSION.to_string() {
        return Err(ModelError::UnsupportedVersion { found: version.trim().to_string() });
    }

    let (line, content) = cursor.expect_line("kind")?;
    if content != "kind model" {
        return Err(TextError::new(line, "kind", format!("expected `kind model`, got {content:?}")).into());
    }

    let (line, content) = cursor.expect_line("widths")?;
    let rest = content
        .strip_prefix("widths")
        .ok_or_else(|| TextError::new(line, "widths", "expected `widths ...`"))?;
    let widths: Vec<usize> = rest
        .split_whitespace()
        .map(|t| parse_usize(t, line, "widths"))
        .collect::<Result<_, _>>()?;
    if widths.len() < 2 || widths.len() > MAX_LAYERS {
        return Err(
            TextError::new(line, "widths", format!("need 2..={MAX_LAYERS} widths, got {}", widths.len())).into()
        );
    }
    if widths.iter().any(|&w| w == 0 || w > MAX_WIDTH) {
        return Err(TextError::new(line, "widths", "width out of range").into());
    }

    let (line, content) = cursor.expect_line("activation")?;
    let activation = match content
        .strip_prefix("activation ")
        .map(str::trim)
    {
        Some("relu") => Activation::Relu,
        Some(rest) if rest.starts_with("quantized_relu") => {
            let levels_tok = rest
                .strip_prefix("quantized_relu")
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .ok_or_else(|| TextError::new(line, "activation", "quantized_relu needs a level count"))?;
            let levels = parse_usize(levels_tok, line, "activation")?;
            if !(2..=1_000_000).contains(&levels) {
                return Err(TextError::new(line, "activation", "levels out of range").into());
            }
            Activation::QuantizedRelu { levels: levels as u32 }
        }
        _ => {
            return Err(TextError::new(line, "activation", format!("unknown activation: {content:?}")).into())
        }
    };

    let mut layers = Vec::with_capacity(widths.len() - 1);
    for i in 0..widths.len() - 1 {
        let in_dim = widths[i];
        let out_dim = widths[i + 1];

        let (line, content) = cursor.expect_line("layer weights")?;
        let expected = format!("layer {i} weights {out_dim} {in_dim}");
        if content != expected {
            return Err(
                TextError::new(line, "layer weights", format!("expected {expected:?}, got {content:?}")).into()
            );
        }
        let mut weights = Vec::with_capacity(out_dim.saturating_mul(in_dim).min(MAX_WIDTH * 64));
        for _ in 0..out_dim {
            let (line, content) = cursor.expect_line("weights row")?;
            weights.extend(parse_f64_row(line, content, in_dim, "weights row")?);
        }

        let (line, content) = cursor.expect_line("layer biases")?;
        let expected = format!("layer {i} biases {out_dim}");
        if content != expected {
            return Err(
                TextError::new(line, "layer biases", format!("expected {expected:?}, got {content:?}")).into()
            );
        }
        let (line, content) = cursor.expect_line("biases row")?;
        let biases = parse_f64_row(line, content, out_dim, "biases row")?;

        layers.push(Layer { weights, biases });
    }

    let (line, content) = cursor.expect_line("end")?;
    if content != "end" {
        return Err(TextError::new(line, "end", format!("expected `end`, got {content:?}")).into());
    }
    cursor.expect_end().map_err(ModelError::from)?;

    MlpSpec::from_layers(widths, activation, layers)
}

pub fn save_model(spec: &MlpSpec, path: &Path) -> Result<(), ModelError> {
    std::fs::write(path, write_model(spec))
        .map_err(|source| ModelError::Io { path: path.to_path_buf(), source })
}

pub fn load_model(path: &Path) -> Result<MlpSpec, ModelError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ModelError::Io { path: path.to_path_buf(), source })?;
    parse_model(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::UnitBoxPoint;
    use crate::models::train::random_init;

    #[test]
    fn round_trip_reproduces_forward_bitwise() {
        let spec = random_init(&[4, 8, 3], 77).unwrap();
        let restored = parse_model(&write_model(&spec)).unwrap();
        assert_eq!(spec, restored);

        // Probe a few points and compare output bits.
        for probe_seed in 0..5u64 {
            let values: Vec<f64> = (0..4)
                .map(|i| (probe_seed as f64 * 0.17 + i as f64 * 0.23) % 1.0)
                .collect();
            let x = UnitBoxPoint::new(values).unwrap();
            let a = spec.forward(&x).unwrap();
            let b = restored.forward(&x).unwrap();
            for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
                assert_eq!(p.to_bits(), q.to_bits());
            }
        }
    }

    #[test]
    fn quantized_activation_round_trips() {
        let spec = random_init(&[3, 5, 2], 1)
            .unwrap()
            .with_activation(crate::models::mlp::Activation::QuantizedRelu { levels: 16 })
            .unwrap();
        let restored = parse_model(&write_model(&spec)).unwrap();
        assert_eq!(spec, restored);
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let spec = random_init(&[3, 4, 2], 9).unwrap();
        let text = write_model(&spec);
        let truncated = &text[..text.len() / 2];
        match parse_model(truncated) {
            Err(ModelError::Parse { .. }) => {}
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let spec = random_init(&[3, 4, 2], 9).unwrap();
        let text = write_model(&spec).replace("version 1", "version 9");
        match parse_model(&text) {
            Err(ModelError::UnsupportedVersion { found }) => assert_eq!(found, "9"),
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn parse_error_names_the_field() {
        let spec = random_init(&[2, 3, 2], 9).unwrap();
        let text = write_model(&spec).replacen("activation relu", "activation soft", 1);
        match parse_model(&text) {
            Err(ModelError::Parse { field, .. }) => assert_eq!(field, "activation"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_oversized_widths() {
        let text = "version 1\nkind model\nwidths 2 99999999999\nactivation relu\nend\n";
        assert!(parse_model(text).is_err());
    }
}
