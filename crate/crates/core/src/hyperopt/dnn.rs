//! The network search space: nine architecture and preprocessing choices
//! plus the eleven feature-block flags.

use serde::{Deserialize, Serialize};

use super::{run_search, Dimension, DimensionKind, HyperSpace, HyperoptError, SearchResult, TpeSettings, Trial};
use crate::data::{MarketDataset, WindowSplit};
use crate::features::{Encoding, FeatureSpec, N_FLAGS};
use crate::neural::{
    fit_network, split_train_validation, Activation, DnnHyperparams, InitScheme, NeuralError, SplitMode, TrainSettings,
};
use crate::transform::NormMethod;

/// Bounds preset. `Small` narrows the layer widths for short windows and
/// quick runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpacePreset {
    Default,
    Small,
}

const FLAG_NAMES: [&str; N_FLAGS] = [
    "use_p_d-1",
    "use_p_d-2",
    "use_p_d-3",
    "use_p_d-7",
    "use_x1_d",
    "use_x2_d",
    "use_x1_d-1",
    "use_x2_d-1",
    "use_x1_d-7",
    "use_x2_d-7",
    "use_weekday",
];

/// Index of the first feature flag in a point.
pub const FIRST_FLAG: usize = 9;

pub fn dnn_space(preset: SpacePreset) -> HyperSpace {
    let (n1, n2) = match preset {
        SpacePreset::Default => ((100, 400), (50, 300)),
        SpacePreset::Small => ((8, 32), (8, 32)),
    };
    let mut dims = vec![
        Dimension::new("neurons_1", DimensionKind::Integer { low: n1.0, high: n1.1 }),
        Dimension::new("neurons_2", DimensionKind::Integer { low: n2.0, high: n2.1 }),
        Dimension::new("activation", DimensionKind::Categorical { choices: Activation::SEARCHABLE.len() }),
        Dimension::new("dropout", DimensionKind::Uniform { low: 0.0, high: 0.5 }),
        Dimension::new("learning_rate", DimensionKind::LogUniform { low: 1e-4, high: 1e-2 }),
        Dimension::new("batch_norm", DimensionKind::Binary),
        Dimension::new("preprocessing", DimensionKind::Categorical { choices: NormMethod::ALL.len() }),
        Dimension::new("init", DimensionKind::Categorical { choices: InitScheme::ALL.len() }),
        Dimension::new("l1", DimensionKind::LogUniform { low: 1e-6, high: 1e-3 }),
    ];
    dims.extend(FLAG_NAMES.iter().map(|n| Dimension::new(*n, DimensionKind::Binary)));
    HyperSpace::new(dims).expect("static bounds are valid")
}

/// Maps a point of [`dnn_space`] to network hyperparameters.
pub fn decode_dnn(point: &[f64]) -> DnnHyperparams {
    let idx = |j: usize| point[j] as usize;
    let mut flags = [false; N_FLAGS];
    for (i, f) in flags.iter_mut().enumerate() {
        *f = point[FIRST_FLAG + i] != 0.0;
    }
    DnnHyperparams {
        hidden_sizes: [idx(0), idx(1)],
        activation: Activation::SEARCHABLE[idx(2)],
        dropout_rate: point[3],
        use_batch_norm: point[5] != 0.0,
        init_scheme: InitScheme::ALL[idx(7)],
        l1_coeff: point[8],
        learning_rate: point[4],
        preprocessing: NormMethod::ALL[idx(6)],
        features: FeatureSpec { flags, encoding: Encoding::DnnMultiValue },
    }
}

/// Validation MAE in price units for one point, training on the window
/// with the most recent weeks held out. Prices rather than normalized
/// targets keep trials with different preprocessing comparable.
pub fn evaluate_dnn_point(
    dataset: &MarketDataset,
    window: &WindowSplit,
    point: &[f64],
    hour: Option<usize>,
    seed: u64,
    settings: &TrainSettings,
) -> Result<f64, NeuralError> {
    let hyper = decode_dnn(point);
    if !hyper.features.is_usable() {
        return Err(NeuralError::Config("no feature block selected".into()));
    }
    let split = split_train_validation(window, SplitMode::MostRecent, seed)?;
    let net = fit_network(dataset, &split, &hyper, hour, seed, settings)?;
    net.price_mae(dataset, &split.validation)
}

/// Search for one network (all hours, or one 1-based hour).
#[allow(clippy::too_many_arguments)]
pub fn search_dnn(
    dataset: &MarketDataset,
    window: &WindowSplit,
    preset: SpacePreset,
    hour: Option<usize>,
    n_trials: usize,
    tpe: &TpeSettings,
    seed: u64,
    settings: &TrainSettings,
    history: Vec<Trial>,
    on_trial: impl FnMut(&Trial) -> Result<(), HyperoptError>,
) -> Result<SearchResult, HyperoptError> {
    let space = dnn_space(preset);
    run_search(
        &space,
        |p| evaluate_dnn_point(dataset, window, p, hour, seed, settings),
        n_trials,
        tpe,
        seed,
        history,
        on_trial,
    )
}
