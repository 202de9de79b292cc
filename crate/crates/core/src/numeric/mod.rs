//! Dense tensor math with explicit forward/backward passes, the RMSprop
//! optimizer and a finite-difference gradient checker.

pub mod conv1d;
pub mod conv2d;
pub mod gradcheck;
pub mod linalg;
pub mod ops;
pub mod optim;
pub mod param;
pub mod pool;
pub mod rnn;

pub use conv1d::{temporal_conv, temporal_conv_backward, ConvGrads};
pub use conv2d::{conv2d, conv2d_backward};
pub use gradcheck::{grad_check, Coords, GradCheckReport};
pub use linalg::{matmul, matmul_backward};
pub use ops::{mean_over_time, relu, softmax, softmax_cross_entropy};
pub use optim::{rmsprop_step, RmspropState};
pub use param::{ParamList, Parameter, ParameterSet};
pub use pool::{maxpool2d, temporal_maxpool};
pub use rnn::{rnn_backward, rnn_forward, rnn_step};
