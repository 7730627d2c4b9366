pub mod charfn;
pub mod dilation;
pub mod linalg;
pub mod modelspace;
pub mod multiindex;
pub mod optuple;
pub mod realization;
pub mod serial;
pub mod wandering_inner;
