#![allow(dead_code)]

pub mod oracle;
pub mod radius;
pub mod spectral;
pub mod studies;
