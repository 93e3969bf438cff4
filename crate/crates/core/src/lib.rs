pub mod lmi;
pub mod matlin;
pub mod sdp;
pub mod oracle;
pub mod plant;
pub mod observer;
pub mod controller;
pub mod harness;
pub mod cli;
