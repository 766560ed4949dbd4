pub mod cli;
pub mod controller;
pub mod design;
pub mod linalg;
pub mod problems;
pub mod qp;
pub mod sim;
