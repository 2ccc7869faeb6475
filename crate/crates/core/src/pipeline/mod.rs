//! Ingestion, configuration, model files, run manifests and the command line.

mod cli;
mod config;
mod container;
mod ingest;
mod manifest;

pub use cli::{gaf_file, manifest_file, run_subcommand, CLUSTERS_FILE, STAGE1_FILE, STAGE2_FILE};
pub use config::{ClusterConfig, GafConfig, IngestConfig, PathsConfig, PipelineConfig, SeedsConfig, SeriesConfig, SplitConfig};
pub use container::{
    cluster_container, cluster_from_container, stage1_container, stage1_from_container, stage2_container,
    stage2_from_container, ArtifactType, ModelContainer, WindowEncoding, CONTAINER_MAGIC, CONTAINER_VERSION,
};
pub use ingest::{
    dedup_records, filter_rare_services, ingest, ingest_reader, split, DatasetSchema, FilterReport, IngestReport,
    Reject, SplitReading, Splits,
};
pub use manifest::{sha256_hex, FileDigest, Manifest};
