//! Free-play sandbox platform: a shared touchscreen game with synchronized
//! recording, zone analytics, motion planning for robot-driven item moves,
//! robot control, session protocol management and behavioural annotation.

pub mod analysis;
pub mod annotation;
pub mod bus;
pub mod demo;
pub mod engine;
pub mod frames;
pub mod gateway;
pub mod time;
pub mod planner;
pub mod robot;
pub mod runtime;
pub mod script;
pub mod session;
pub mod zones;
