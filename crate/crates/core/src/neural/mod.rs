//! Learned one-step mean curvature flow operator `V[U] = F(K*U)`.

pub mod checkpoint;
pub mod mlp;
pub mod operator;
pub mod training;

pub use mlp::{DEFAULT_LAYER_SIZES, MlpParams, mlp_derivative, mlp_forward, mlp_second_derivative};
pub use operator::{BoundOperator, NeuralLinearization, NeuralMcfOperator, apply_operator, operator_jvp, operator_vjp};
pub use training::{Adam, Initialization, Trainer, TrainingConfig, TrainingRecord, fit_mlp, heat_kernel_initialization, train_operator, train_progressive, training_loss};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint};
