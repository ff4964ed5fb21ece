//! Cohort data model, ingestion, preprocessing and task targets.

mod ingest;
mod note;
mod preprocess;
mod stay;
mod targets;
pub mod tensor_io;

pub use ingest::{
    assign_charttime, load_cohort, raw_from_record, raw_with_chunks, read_manifest, read_notes,
    type_counts, write_manifest, write_stay, Cohort, Manifest, ManifestEntry, RawNote, Split,
};
pub use note::{chunk_mean, NoteRecord, NoteType, NoteTypeSet, D_CN, D_EMB};
pub use preprocess::{
    apply_scaler, build_note_matrix, expand_chunks, filter_note_types, fit_scaler, forward_impute,
    mask_last_note, prepare_stay, ScalerStats, STD_FLOOR,
};
pub use stay::{blank_embedding, Outcome, StayRecord, D_EHR, N_PHENO};
pub use targets::{decomp_label, make_task_targets, Task, TaskTargets, DECOMP_HORIZON_H, IHM_HOURS};
