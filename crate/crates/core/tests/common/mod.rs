#![allow(dead_code)]

pub mod gradcheck;
pub mod mia;
pub mod quadrature;
