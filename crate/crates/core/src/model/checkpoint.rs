//! Plain-text checkpoint format.
//!
//! ```text
//! bituning-checkpoint 1
//! dims input=2 hidden=64 feature=32 classes=3 projection=128 classifier_bias=false
//! param encoder.0.weight 2 64
//! <row 0: 64 space-separated values>
//! <row 1: ...>
//! param encoder.0.bias 1 64
//! ...
//! end
//! ```
//!
//! `hidden` is a comma-separated list (empty for a single-layer encoder).
//! Values are written in shortest round-trip exponent form, so reading a
//! checkpoint back yields bit-identical parameters. Parameters appear in
//! [`ModelParams::param_names`] order. Key pools and the momentum twin are
//! not saved.

use std::io::{BufRead, Write};

use super::{ModelDims, ModelParams};
use crate::ndgrad::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "bituning-checkpoint 1";

pub fn write_checkpoint<W: Write>(params: &ModelParams, mut out: W) -> std::io::Result<()> {
    let d = &params.dims;
    let hidden: Vec<String> = d.hidden.iter().map(usize::to_string).collect();
    writeln!(out, "{CHECKPOINT_MAGIC}")?;
    writeln!(
        out,
        "dims input={} hidden={} feature={} classes={} projection={} classifier_bias={}",
        d.input,
        hidden.join(","),
        d.feature,
        d.classes,
        d.projection,
        d.classifier_bias
    )?;
    for (name, t) in params.param_names().iter().zip(params.tensors()) {
        writeln!(out, "param {name} {} {}", t.rows(), t.cols())?;
        for i in 0..t.rows() {
            let row: Vec<String> = t.row(i).iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", row.join(" "))?;
        }
    }
    writeln!(out, "end")
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<ModelParams> {
    let mut lines = input.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((n, Ok(l))) => Ok((n, l)),
            Some((n, Err(e))) => Err(Error::Checkpoint { line: n, reason: e.to_string() }),
            None => Err(Error::Checkpoint {
                line: 0,
                reason: format!("unexpected end of file, expected {what}"),
            }),
        }
    };
    let bad = |line: usize, reason: String| Error::Checkpoint { line, reason };

    let (n, magic) = next("header")?;
    if magic.trim() != CHECKPOINT_MAGIC {
        return Err(bad(n, format!("expected `{CHECKPOINT_MAGIC}`")));
    }
    let (n, dims_line) = next("dims")?;
    let dims = parse_dims(&dims_line).map_err(|r| bad(n, r))?;
    let mut params = ModelParams::zeros(dims).map_err(|e| bad(n, e.to_string()))?;
    let names = params.param_names();
    for (name, slot) in names.iter().zip(params.tensors_mut()) {
        let (n, header) = next("param header")?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "param" || parts[1] != name {
            return Err(bad(n, format!("expected `param {name} <rows> <cols>`")));
        }
        let rows: usize = parts[2].parse().map_err(|_| bad(n, "bad row count".into()))?;
        let cols: usize = parts[3].parse().map_err(|_| bad(n, "bad column count".into()))?;
        if rows != slot.rows() || cols != slot.cols() {
            return Err(bad(
                n,
                format!("{name} is {rows}x{cols}, dims imply {}x{}", slot.rows(), slot.cols()),
            ));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (n, row) = next("values")?;
            let before = data.len();
            for tok in row.split_whitespace() {
                data.push(tok.parse::<f64>().map_err(|_| bad(n, format!("`{tok}` is not a number")))?);
            }
            if data.len() - before != cols {
                return Err(bad(n, format!("expected {cols} values")));
            }
        }
        *slot = Tensor::new(slot.shape().to_vec(), data).map_err(|e| bad(n, e.to_string()))?;
    }
    let (n, end) = next("end")?;
    if end.trim() != "end" {
        return Err(bad(n, "expected `end`".into()));
    }
    Ok(params)
}

fn parse_dims(line: &str) -> std::result::Result<ModelDims, String> {
    let mut it = line.split_whitespace();
    if it.next() != Some("dims") {
        return Err("expected `dims ...`".into());
    }
    let mut fields = std::collections::BTreeMap::new();
    for kv in it {
        let (k, v) = kv.split_once('=').ok_or_else(|| format!("bad field `{kv}`"))?;
        fields.insert(k, v);
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| format!("missing `{k}`"));
    let num = |k: &str| -> std::result::Result<usize, String> {
        get(k)?.parse().map_err(|_| format!("`{k}` is not an integer"))
    };
    let hidden = get("hidden")?;
    let hidden = if hidden.is_empty() {
        Vec::new()
    } else {
        hidden
            .split(',')
            .map(|h| h.parse().map_err(|_| format!("bad hidden width `{h}`")))
            .collect::<std::result::Result<_, _>>()?
    };
    Ok(ModelDims {
        input: num("input")?,
        hidden,
        feature: num("feature")?,
        classes: num("classes")?,
        projection: num("projection")?,
        classifier_bias: get("classifier_bias")?
            .parse()
            .map_err(|_| "classifier_bias must be true or false".to_string())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(hidden: Vec<usize>, bias: bool) -> ModelParams {
        let dims = ModelDims {
            input: 3,
            hidden,
            feature: 4,
            classes: 3,
            projection: 2,
            classifier_bias: bias,
        };
        ModelParams::init(dims, &mut ChaCha8Rng::seed_from_u64(11)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for (hidden, bias) in [(vec![], false), (vec![5, 6], true)] {
            let p = sample(hidden, bias);
            let mut buf = Vec::new();
            write_checkpoint(&p, &mut buf).unwrap();
            let back = read_checkpoint(buf.as_slice()).unwrap();
            assert_eq!(back, p);
        }
    }

    #[test]
    fn corrupted_files_name_the_line() {
        let p = sample(vec![5], false);
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let broken = text.replacen("param encoder.0.bias", "param encoder.0.bogus", 1);
        match read_checkpoint(broken.as_bytes()) {
            Err(Error::Checkpoint { line, .. }) => assert!(line > 2),
            other => panic!("unexpected {other:?}"),
        }
        let truncated: String = text.lines().take(4).map(|l| format!("{l}\n")).collect();
        assert!(read_checkpoint(truncated.as_bytes()).is_err());
        assert!(read_checkpoint("nonsense\n".as_bytes()).is_err());
    }
}
