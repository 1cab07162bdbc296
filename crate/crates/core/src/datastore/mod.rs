//! Local document store: append-only log file, changes feed, telemetry
//! batches and CSV export.

mod csv_io;
mod points;
mod store;

pub use csv_io::{parse_csv, write_csv, CsvError, CSV_HEADER};
pub use points::{BatchWriter, DataPoint, Stream, MAX_BATCH_POINTS};
pub use store::{
    ApplyOutcome, DocKind, Document, FeedEntry, KindSet, Store, StoreError, StoreOptions, STORE_MAGIC,
    STORE_VERSION,
};
