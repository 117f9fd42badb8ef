//! Simulator and training harness for redundancy-aware blockchain partial
//! computation offloading.
//!
//! Each slot, users split their requested task into subtasks and decide per
//! subtask between local execution and offloading to a fog (FIN) or edge
//! (EIN) node over a shared uplink; offloaded data is replicated on a
//! consortium chain. [`game`] settles the offloading decisions by best
//! response in an ordinal potential game, and [`agent`] learns how many
//! replicas to buy with a double DQN whose greedy action is a knapsack.

pub mod agent;
pub mod chain;
pub mod config;
pub mod cost;
pub mod exec;
pub mod game;
pub mod harness;
pub mod radio;
pub mod rng;
pub mod scaa;
pub mod selftest;
pub mod tasks;
