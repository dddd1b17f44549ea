pub mod executor;
pub mod harness;
pub mod meta_action;
pub mod model;
pub mod par;
pub mod planner;
pub mod pose;
pub mod rag_store;
pub mod scene;
pub mod sim_world;
pub mod taxonomy;
