//! Lifted linear (Koopman) models identified by EDMD.

mod edmd;
mod io;
mod observables;

pub use edmd::{
    edmd_fit, gram_matrices, multi_step_predict, predict, FitStats, KoopmanModel, SnapshotSet,
    DEFAULT_RIDGE, MAX_UNREGULARIZED_CONDITION,
};
pub use io::{
    load_model, load_snapshots, model_from_json, model_to_json, read_snapshots, save_model,
    save_snapshots, write_snapshots, MODEL_FILE_VERSION, SNAPSHOT_HEADER,
};
pub use observables::{lift, recover_state, selection_matrix, LiftedState, ObservableConfig};
