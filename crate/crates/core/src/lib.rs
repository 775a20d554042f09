pub mod bench;
pub mod deconv;
pub mod error;
pub mod gp;
pub mod linalg;
pub mod monte_carlo;
pub mod ode;
pub mod quadrature;
pub mod trace;
pub mod warped;
