use std::io::{Read, Write};

use crate::compute::Value;
use crate::data::Vocabulary;
use crate::error::{Error, Result};

/// Writes `code,dim_0,...,dim_{d-1}` rows in vocabulary order.
pub fn write_embedding_csv<W: Write>(table: &Value, vocab: &Vocabulary, w: W) -> Result<()> {
    if table.rows() != vocab.len() {
        return Err(Error::Shape {
            context: "embedding table rows",
            expected: vec![vocab.len()],
            actual: vec![table.rows()],
        });
    }
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["code".to_string()];
    header.extend((0..table.cols()).map(|k| format!("dim_{k}")));
    wtr.write_record(&header)?;
    for (i, code) in vocab.codes().iter().enumerate() {
        let mut rec = vec![code.clone()];
        rec.extend(table.row(i).iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<embedding writer>", e))?;
    Ok(())
}

/// Reads a table written by [`write_embedding_csv`], reordered to `vocab`.
pub fn read_embedding_csv<R: Read>(r: R, vocab: &Vocabulary, path: &str) -> Result<Value> {
    let mut rdr = csv::Reader::from_reader(r);
    let d = rdr.headers()?.len().saturating_sub(1);
    if d == 0 {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            message: "embedding file has no dimension columns".into(),
        });
    }
    let mut data = vec![f64::NAN; vocab.len() * d];
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let parse_err = |message: String| Error::Parse {
            path: path.into(),
            line,
            message,
        };
        if rec.len() != d + 1 {
            return Err(parse_err(format!("expected {} fields, found {}", d + 1, rec.len())));
        }
        let code = &rec[0];
        let Some(row) = vocab.get(code) else {
            return Err(parse_err(format!("code {code:?} is not in the vocabulary")));
        };
        for k in 0..d {
            data[row as usize * d + k] = rec[k + 1]
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("dim_{k}: {e}")))?;
        }
    }
    if data.iter().any(|v| v.is_nan()) {
        return Err(Error::Data(format!(
            "{path}: not every vocabulary code has an embedding row"
        )));
    }
    Value::new(data, vec![vocab.len(), d])
}
