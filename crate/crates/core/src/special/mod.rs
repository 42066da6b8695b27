//! Heat kernel, Dickman subordinator density and its weighted Green's function.

pub mod bessel;
pub mod dickman;
pub mod gamma;
pub mod green;
pub mod heat;

pub use bessel::bessel_i0e;
pub use dickman::{dickman_constant, dickman_leading_term, dickman_tail_bound, DickmanGrid, DickmanOptions, DickmanSample};
pub use gamma::{ln_gamma, EULER_GAMMA};
pub use green::{green_function, green_kernel, GreenEvaluator, GreenSample, GreenValue};
pub use heat::{gaussian_product_split, heat_kernel, heat_kernel_between, heat_kernel_squared, heat_kernel_unchecked};
