#![allow(dead_code)]

use lpvmpc::controller::{ControllerConfig, ControllerMode};
use lpvmpc::harness::{run_closed_loop, RunOptions, SimTrace};
use lpvmpc::observer::{synthesize, ObserverDesign, ObserverSpec};
use lpvmpc::plant::{dsws, example_model, PolytopicModel, SwitchSignal};
use lpvmpc::sdp::SolveOptions;
use nalgebra::DVector;

pub fn model() -> PolytopicModel {
    example_model()
}

pub fn design() -> ObserverDesign {
    synthesize(&model(), &ObserverSpec::standard(2), &SolveOptions::default()).unwrap()
}

pub fn config(mode: ControllerMode) -> ControllerConfig {
    ControllerConfig {
        mode,
        ..ControllerConfig::standard(2, 1)
    }
}

pub fn x0() -> DVector<f64> {
    DVector::from_vec(vec![-1.5, -0.2])
}

pub fn xhat0() -> DVector<f64> {
    DVector::from_vec(vec![0.5, 1.0])
}

pub fn run(design: &ObserverDesign, mode: ControllerMode, signal: &SwitchSignal) -> SimTrace {
    run_closed_loop(&model(), design, &config(mode), signal, &x0(), &xhat0(), &RunOptions::default()).unwrap()
}

pub fn flagship(design: &ObserverDesign, mode: ControllerMode) -> SimTrace {
    run(design, mode, &dsws(100).unwrap())
}
