//! Token-space interpretability: n-grams, naive Bayes, localization.

pub mod bayes;
pub mod export;
pub mod localize;
pub mod ngram;

pub use bayes::{top_features_csv, NaiveBayes, NbMode, NbScore, RankedFeature, TOP_FEATURES_CSV_HEADER};
pub use export::{parse_token_grid_csv, token_grid_csv};
pub use localize::{
    interval_union, localization_csv, localization_text, localize, mask_spans, temporal_iou, LocalizationEntry,
    LOCALIZATION_CSV_HEADER,
};
pub use ngram::{count_ngrams, extract_ngrams, Ngram, NgramOccurrence, NgramOrders};
