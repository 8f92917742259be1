//! GraphSAGE mean-aggregation encoder with an MLP classification head,
//! trained full-batch with Adam on analytic gradients.

mod layers;
mod model_io;
mod network;
mod train;

pub use layers::{aggregate_neighbors, argmax_rows, cross_entropy, softmax_rows, IsolatedPolicy, LOG_FLOOR};
pub use model_io::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use network::{
    backward, forward, initial_running_stats, mlp_forward, sage_forward, sage_input,
    update_running_stats, BnRunningStats, ForwardCache, HiddenLayerParams, MlpParams, MlpSettings,
    Mode, Params, SageLayerParams,
};
pub use train::{
    featurize_for_model, history_csv, infer, network_input, predict, stratified_split, train,
    train_on_features, train_on_graph, EpochRecord, Inference, Model, Prediction, Split, TrainConfig, TrainRun,
};
