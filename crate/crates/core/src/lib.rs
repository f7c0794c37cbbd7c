//! Convolutional dictionary learning through a constrained recurrent sparse
//! auto-encoder: the encoder runs T unrolled FISTA iterations against the
//! current filter bank, the decoder applies the same bank to the sparse code,
//! and training back-propagates the reconstruction loss through the whole
//! unrolled graph to the one shared set of filters, projected onto the unit
//! ball after every ADAM step.
//!
//! The crate also ships the surrounding experiment machinery: a spike-train
//! simulator with controlled SNR, recovery metrics over the
//! permutation/sign/shift ambiguity, an unconstrained baseline auto-encoder,
//! and finite-difference oracles for every gradient path.

pub mod conv_ops;
pub mod encoder;
pub mod error;
pub mod gradient;
pub mod metrics;
pub mod simulator;
pub mod trainer;

pub use conv_ops::{
    apply_adjoint, apply_dictionary, estimate_lipschitz, CodeMatrix, FilterBank,
    LipschitzEstimate, SignalWindow,
};
pub use encoder::{
    decode, fista_encode, ista_encode, lasso_objective, momentum_next, reconstruction_loss,
    shrink, EncoderTrace, FistaConfig,
};
pub use error::{CrsaeError, Result};
pub use gradient::{
    backprop_encoder_gradient, backprop_filter_gradient, batch_gradient,
    finite_difference_gradient, shrink_derivative, window_gradient, FilterGradient,
};
pub use metrics::{
    match_filters, match_filters_with, recovery_err, sweep_aggregate, AggregateRow, FilterMatch,
    MatchStrategy, RecoveryReport, SweepEntry,
};
pub use simulator::{
    compute_snr, discretize_and_synthesize, generate_events, make_filter_bank, simulate_electrode,
    window_signal, AmplitudeParams, NoiseSpec, SimConfig, SpikeEvent, SpikeEventSet, Synthesis,
};
pub use trainer::{
    adam_step, init_perturbed_dictionary, lambda_heuristic, lr_range_test, noise_std_estimate,
    project_unit_ball, train, validation_loss, AdamState, EpochRecord, LambdaPolicy,
    NoiseConvention, TrainConfig, TrainReport,
};
