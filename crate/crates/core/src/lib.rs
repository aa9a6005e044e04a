pub mod calendar;
pub mod cli;
pub mod dqn;
pub mod forecast;
pub mod fsio;
pub mod geogrid;
pub mod index;
pub mod nn;
pub mod rl_env;
pub mod stations;
pub mod synthdata;
