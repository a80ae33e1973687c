//! The guide in `book/`, compiled so its snippets run as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}

#[doc = include_str!("../../../book/src/forecasting.md")]
pub mod forecasting {}

#[doc = include_str!("../../../book/src/swarm.md")]
pub mod swarm {}

#[doc = include_str!("../../../book/src/pricing.md")]
pub mod pricing {}

#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}

#[doc = include_str!("../../../book/src/cli-and-service.md")]
pub mod cli_and_service {}
