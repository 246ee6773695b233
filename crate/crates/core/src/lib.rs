pub mod cli;
pub mod config;
pub mod estimators;
pub mod expr;
pub mod ifs;
pub mod measures;
pub mod pressure;
pub mod sampling;
pub mod smallmat;
pub mod suites;
pub mod symbolic;
pub mod systems;
pub mod transversality;
