//! Embedding extraction, export and the SVM cross-validation protocol.

mod embedding;
mod protocol;
mod report;
pub mod svm;

pub use embedding::{
    decode_embeddings, embeddings_csv, encode_embeddings, extract_all, extract_embedding,
    read_embeddings, write_embeddings, EmbeddingSet, GraphEmbedding, EMBEDDING_MAGIC,
    EMBEDDING_VERSION,
};
pub use protocol::{
    evaluate, mean_std, median_gamma, select_on_train, svm_protocol, AccuracyReport, FoldFit,
    FoldResult, ProtocolOptions, Scaler, STD_KIND,
};
pub use report::{emit_report, table_cell, table_row, ReportFormat};
