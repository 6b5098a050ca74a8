#![allow(dead_code)]

pub mod gradcheck_cases;
pub mod metric_oracles;
pub mod loss_bounds;
