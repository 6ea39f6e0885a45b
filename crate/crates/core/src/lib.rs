//! Single-image and video human relighting at desk scale.
//!
//! The toolkit decomposes a masked image into albedo, a per-pixel
//! light-transport map and second-order SH light, refines the diffuse
//! reconstruction with a residual network, and stabilizes per-frame video
//! relighting with a light-conditioned deep video prior.

pub mod error;
pub mod imaging;
pub mod losses;
pub mod nn;
pub mod pipeline;
pub mod prt;
pub mod sh;
pub mod video;

pub use error::{Error, Result};
