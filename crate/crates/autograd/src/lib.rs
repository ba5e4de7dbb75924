//! Reverse-mode automatic differentiation for small convolutional networks.
//!
//! Tensors are dense, row-major and usually shaped `[N, C, H, W]`. Operations
//! in [`ops`] build a graph only when an input requires grad, so inference
//! runs allocate no backward state. [`nn`] wraps the ops into layers with
//! named parameters, [`optim`] provides Adam and [`weights`] persists module
//! state in the `MIFNW1` container.
//!
//! ```
//! use velopick_autograd::{ops, Tensor};
//!
//! let w = Tensor::<f64>::param(vec![2.0, -1.0], &[2]);
//! let x = Tensor::new(vec![3.0, 4.0], &[2]);
//! let loss = ops::sum(&ops::mul(&w, &x).unwrap());
//! loss.backward();
//! assert_eq!(w.grad().unwrap(), vec![3.0, 4.0]);
//! ```

mod error;
mod real;
mod tensor;

pub mod nn;
pub mod ops;
pub mod optim;
pub mod weights;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Tensor;
