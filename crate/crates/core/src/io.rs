//! File loaders for banks, activation records, embeddings and priors.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::extraction::{cosine_activations, EmbeddingKind, EmbeddingTable};
use crate::knowledge::{ClassConceptTable, PriorTable};
use crate::model::{ActivationRecord, ClassRoster, ConceptBank};
use crate::scalar::Scalar;

/// `.json` banks carry `{name, concepts: [{text, group?}]}`; anything else
/// is read as one concept per line, blank lines skipped.
pub fn load_bank(path: &Path) -> Result<ConceptBank> {
    let text = fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        return Ok(serde_json::from_str(&text)?);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ConceptBank::new(
        name,
        text.lines().map(str::trim).filter(|l| !l.is_empty()),
    )
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| {
            Error::Dataset(format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        out.push(item);
    }
    Ok(out)
}

/// Activation records, one JSON object per line.
pub fn load_records<F: Scalar>(path: &Path) -> Result<Vec<ActivationRecord<F>>> {
    read_jsonl(path)
}

pub fn write_records<F: Scalar>(path: &Path, records: &[ActivationRecord<F>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct EmbeddingRow<F> {
    id: String,
    embedding: Vec<F>,
}

/// Embeddings as `{"id": ..., "embedding": [...]}` lines.
pub fn load_embeddings<F: Scalar>(path: &Path, kind: EmbeddingKind) -> Result<EmbeddingTable<F>> {
    let rows: Vec<EmbeddingRow<F>> = read_jsonl(path)?;
    EmbeddingTable::new(kind, rows.into_iter().map(|r| (r.id, r.embedding)))
}

/// Replaces each record's activations with cosine similarities between its
/// image embedding and the bank's concept embeddings.
pub fn fill_cosine_activations<F: Scalar>(
    records: &mut [ActivationRecord<F>],
    images: &EmbeddingTable<F>,
    concepts: &EmbeddingTable<F>,
    bank: &ConceptBank,
) -> Result<()> {
    let aligned = concepts.aligned_to(bank)?;
    for r in records.iter_mut() {
        let image = images.get(&r.example_id).ok_or_else(|| {
            Error::Dataset(format!("no image embedding for `{}`", r.example_id))
        })?;
        r.activations = cosine_activations(image, &aligned)?;
    }
    Ok(())
}

pub fn load_priors(path: &Path, roster: &ClassRoster, bank: Option<&ConceptBank>) -> Result<PriorTable> {
    PriorTable::from_json_reader(BufReader::new(File::open(path)?), roster, bank)
}

pub fn load_class_table(path: &Path) -> Result<ClassConceptTable> {
    ClassConceptTable::from_csv_reader(BufReader::new(File::open(path)?))
}
