//! The four finance scenarios built on the library.

pub mod collusion;
pub mod portfolio;
pub mod safesigner;
pub mod washsale;
