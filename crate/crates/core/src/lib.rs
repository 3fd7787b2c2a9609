//! Screening-support toolkit for updating systematic literature reviews.
//!
//! Parses labeled BibTeX corpora, builds TF-IDF features with supervised
//! selection, trains random forest or linear SVM classifiers, and scores
//! candidate studies for inclusion.

pub mod agreement;
pub mod cli;
pub mod corpus;
pub mod evalr;
pub mod featsel;
pub mod models;
pub mod pipeline;
pub mod textprep;
pub mod tuning;
pub mod vectorize;
