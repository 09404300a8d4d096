//! Rising-star prediction over dynamic diffusion graphs.

pub mod analytics;
pub mod autodiff;
pub mod data;
pub mod model;
pub mod synthgen;
pub mod training;
