pub mod benchmark;
pub mod fit;
pub mod simulate;
pub mod summarize;
