use std::collections::HashSet;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{DraeError, Result};
use crate::numerics::all_finite;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub id: String,
    pub embedding: Vec<f64>,
    #[serde(default, rename = "text", skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
}

/// Immutable store of embedded documents sharing one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    dim: usize,
    documents: Vec<Document>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        let dim = documents
            .first()
            .map(|d| d.embedding.len())
            .ok_or_else(|| DraeError::InvalidInput("corpus is empty".into()))?;
        if dim == 0 {
            return Err(DraeError::InvalidInput("embedding dimension must be positive".into()));
        }
        let mut seen = HashSet::new();
        for d in &documents {
            if d.embedding.len() != dim {
                return Err(DraeError::Shape(format!(
                    "document {:?} has dimension {}, corpus has {dim}",
                    d.id,
                    d.embedding.len()
                )));
            }
            if !all_finite(&d.embedding) {
                return Err(DraeError::InvalidInput(format!("document {:?} has non-finite entries", d.id)));
            }
            if !seen.insert(d.id.as_str()) {
                return Err(DraeError::InvalidInput(format!("duplicate document id {:?}", d.id)));
            }
        }
        Ok(Self { dim, documents })
    }

    /// Reads one JSON document per line; blank lines are skipped and errors
    /// carry the 1-based line number.
    pub fn from_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut documents = Vec::new();
        let mut seen = HashSet::new();
        let mut dim = None;
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| DraeError::Corpus { line: line_no, msg };
            let doc: Document = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
            if doc.embedding.is_empty() {
                return Err(err("empty embedding".into()));
            }
            if !all_finite(&doc.embedding) {
                return Err(err("embedding has non-finite entries".into()));
            }
            match dim {
                None => dim = Some(doc.embedding.len()),
                Some(d) if d != doc.embedding.len() => {
                    return Err(err(format!("embedding dimension {} differs from {d}", doc.embedding.len())));
                }
                _ => {}
            }
            if !seen.insert(doc.id.clone()) {
                return Err(err(format!("duplicate document id {:?}", doc.id)));
            }
            documents.push(doc);
        }
        Self::new(documents)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_jsonl() {
        let text = "{\"id\":\"a\",\"embedding\":[1,0]}\n\n{\"id\":\"b\",\"embedding\":[0.5,0.5],\"text\":\"cup\"}\n";
        let c = Corpus::from_jsonl(text.as_bytes()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.dim(), 2);
        assert_eq!(c.get("b").unwrap().payload.as_deref(), Some("cup"));
    }

    #[test]
    fn reports_bad_line() {
        let cases = [
            "{\"id\":\"a\",\"embedding\":[1,0]}\n{\"id\":\"b\",\"embedding\":[1]}\n",
            "{\"id\":\"a\",\"embedding\":[1,0]}\n{\"id\":\"a\",\"embedding\":[0,1]}\n",
            "{\"id\":\"a\",\"embedding\":[1,0]}\nnot json\n",
            "{\"id\":\"a\",\"embedding\":[1,0]}\n{\"id\":\"b\",\"embedding\":[1,0],\"x\":1}\n",
        ];
        for text in cases {
            match Corpus::from_jsonl(text.as_bytes()) {
                Err(DraeError::Corpus { line, .. }) => assert_eq!(line, 2, "{text}"),
                other => panic!("expected line error, got {other:?}"),
            }
        }
        assert!(Corpus::from_jsonl("".as_bytes()).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let doc = Document { id: "x".into(), embedding: vec![f64::NAN], payload: None };
        assert!(Corpus::new(vec![doc]).is_err());
    }
}
