pub mod exact;
pub mod problems;
pub mod run;
pub mod studies;
