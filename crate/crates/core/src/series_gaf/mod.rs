//! Presence series, rolling windows and multi-step labels, and their
//! Gramian Angular Field image encodings.

mod gaf;
pub mod io;
mod series;

pub use gaf::{
    augment, balance_classes, encode_window, gadf, gadf_with, gasf, to_polar, AugmentConfig, BalanceReport,
    GadfForm, GafImagePair, GafMatrix, GafOptions, LabeledPair, WindowMeta, POLAR_TOLERANCE,
};
pub use series::{
    build_all_series, build_presence_series, make_label, make_label_upto, paa, perturb_zero_series, rescale_to_unit,
    roll_windows, roll_windows_upto, MultiStepLabel, PresenceSeries, WindowedSample, DEFAULT_MAX_GAMMA,
};
