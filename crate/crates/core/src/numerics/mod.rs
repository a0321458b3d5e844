//! Special functions, quadrature, sampling and optimization primitives.

pub mod beta_ineq;
pub mod optim;
pub mod quadrature;
pub mod rng;
pub mod sample;
pub mod special;

pub use beta_ineq::{beta_gt_prob, beta_ordering, BetaOrdering};
pub use optim::{nelder_mead, nelder_mead_minimize, Minimum, NelderMeadOptions};
pub use rng::SeededRng;
pub use special::{log_beta, log_choose, log_multinomial_coef, log_mv_beta, log_sum_exp, reg_inc_beta, IncBeta};
