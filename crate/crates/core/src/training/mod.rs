//! Adversarial training: hinge losses, Adam, the train step and run loop,
//! and the discriminator-swap benchmark.

mod adam;
mod benchmark;
mod loss;
mod trainer;

pub use adam::{adam_step, adam_update, AdamHyper, AdamState};
pub use benchmark::{run_benchmark, write_benchmark_csv, BenchmarkRow, BENCHMARK_VARIANTS};
pub use loss::{hinge_d_loss, hinge_g_loss};
pub use trainer::{
    build_d_loss, build_g_loss, fid_proxy, generate_batched, run_training, train_step, RunRecord, RunSummary,
    TrainConfig, TrainState,
};
