#![allow(dead_code)]

pub mod fixtures;
pub mod metric_cases;
pub mod oracle;
