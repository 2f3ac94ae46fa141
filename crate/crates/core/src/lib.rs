pub mod corpus;
pub mod endpoint;
pub mod evaluation;
pub mod extraction;
pub mod grpo;
pub mod rewards;
pub mod sparql;
