use std::io::Write;
use std::path::Path;

use super::Pca2;
use crate::error::Result;
use crate::model::DualEncoderModel;
use crate::stream::{EntityLexicon, Note};

/// One exported entity occurrence.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRow {
    pub note: String,
    pub entity: String,
    pub stage: usize,
    pub vector: Vec<f64>,
    pub pca: [f64; 2],
}

/// Entity encoder states of every entity occurrence in `notes`, with a
/// two-component PCA fitted on those same vectors.
pub fn embedding_rows(
    model: &DualEncoderModel,
    notes: &[&Note],
    lexicon: &EntityLexicon,
    stage: usize,
) -> Result<Vec<EmbeddingRow>> {
    let mut rows = Vec::new();
    for n in notes {
        let states = model.entity_states(n, false)?;
        for (id, v) in n.entity_ids.iter().zip(states) {
            rows.push(EmbeddingRow {
                note: n.source_id.clone(),
                entity: lexicon.surface(*id).to_string(),
                stage,
                vector: v,
                pca: [0.0, 0.0],
            });
        }
    }
    if !rows.is_empty() {
        let vectors: Vec<Vec<f64>> = rows.iter().map(|r| r.vector.clone()).collect();
        let pca = Pca2::fit(&vectors)?;
        for r in &mut rows {
            r.pca = pca.project(&r.vector);
        }
    }
    Ok(rows)
}

pub fn write_embeddings<W: Write>(rows: &[EmbeddingRow], dim: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["note", "entity", "stage"].map(String::from).to_vec();
    header.extend((0..dim).map(|i| format!("v{i}")));
    header.extend(["pc1".to_string(), "pc2".to_string()]);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.note.clone(), r.entity.clone(), r.stage.to_string()];
        rec.extend(r.vector.iter().map(f64::to_string));
        rec.extend(r.pca.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the entity embedding table for `notes` to `path`.
pub fn export_embeddings(
    model: &DualEncoderModel,
    notes: &[&Note],
    lexicon: &EntityLexicon,
    stage: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let rows = embedding_rows(model, notes, lexicon, stage)?;
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_embeddings(&rows, model.config().channel_dim(), file)
}
