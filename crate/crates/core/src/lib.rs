pub mod absolute;
pub mod digest;
pub mod drift;
pub mod provider;
pub mod relative;
pub mod report;
pub mod stats;
pub mod store;
pub mod templates;
pub mod verdict;
pub mod workflow;
