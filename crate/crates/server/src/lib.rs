//! Label service backing the annotation UI: serves successful runs awaiting
//! labels, records annotator decisions in an append-only log, computes
//! inter-annotator agreement and exports the label set.
//!
//! | Method | Path | |
//! |---|---|---|
//! | GET | `/runs/next?annotator=&session=&limit=` | next batch of unlabeled runs |
//! | GET | `/runs/{id}` | playback data for one run |
//! | GET | `/media/{run_id}.mp4` | optional sidecar video |
//! | POST | `/labels` | submit a label |
//! | GET | `/agreement?a=&b=` | Cohen's kappa between two annotators |
//! | GET | `/export?partial=&format=&file=` | label and resolution CSVs |

pub mod http;
pub mod service;

pub use http::{router, serve};
pub use service::{LabelService, LabelSubmission, ServiceError, DEFAULT_BATCH_LIMIT};
