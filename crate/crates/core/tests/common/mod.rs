#![allow(dead_code)]

pub mod geometry_oracle;
pub mod grad_cases;
