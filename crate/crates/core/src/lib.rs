pub mod chemspace;
pub mod downstream;
pub mod encoder;
pub mod features;
pub mod gradcheck;
pub mod molgraph;
pub mod objectives;
pub mod seed;
pub mod stats;
pub mod tokenizer;
pub mod toy;
