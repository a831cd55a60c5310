pub mod aggregation;
pub mod bench;
pub mod clustering;
pub mod cues;
pub mod geometry;
pub mod ground;
pub mod io;
pub mod occupancy;
pub mod pipeline;
pub mod reasoner;
pub mod scene;
pub mod selftrain;
