//! Call instrumentation shared by all decoders.
//!
//! Batched invocations count kernel-launch-like events (one per batched
//! predictor/joint call); element evaluations count per-row work. Wasted
//! element evaluations are rows computed under a mask that discards their
//! result: inactive rows fed through the predictor, and joint rows whose
//! argmax is never a real decision.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounters {
    pub predictor_batched_invocations: u64,
    pub predictor_element_evaluations: u64,
    pub joint_batched_invocations: u64,
    pub joint_element_evaluations: u64,
    pub wasted_element_evaluations: u64,
    /// Single-row encoder projections ([enc_dim] -> [joint_dim]).
    pub encoder_projection_row_evaluations: u64,
    /// Batched predictor projections ([B, pred_dim] -> [B, joint_dim]).
    pub predictor_projection_evaluations: u64,
    pub outer_loop_iterations: u64,
    pub inner_loop_iterations: u64,
    /// TDT coverage: blank predicted with duration 0 (anti-stall path).
    pub blank_zero_duration_steps: u64,
    /// TDT coverage: label predicted with duration 0 (same-frame emission).
    pub label_zero_duration_steps: u64,
}

impl CallCounters {
    pub fn record_predictor(&mut self, rows: usize, wasted_rows: usize) {
        self.predictor_batched_invocations += 1;
        self.predictor_element_evaluations += rows as u64;
        self.wasted_element_evaluations += wasted_rows as u64;
    }

    pub fn record_joint(&mut self, rows: usize, wasted_rows: usize) {
        self.joint_batched_invocations += 1;
        self.joint_element_evaluations += rows as u64;
        self.wasted_element_evaluations += wasted_rows as u64;
    }

    pub fn record_encoder_projection_rows(&mut self, rows: usize) {
        self.encoder_projection_row_evaluations += rows as u64;
    }

    pub fn record_predictor_projection(&mut self) {
        self.predictor_projection_evaluations += 1;
    }

    pub fn merge(&mut self, other: &CallCounters) {
        self.predictor_batched_invocations += other.predictor_batched_invocations;
        self.predictor_element_evaluations += other.predictor_element_evaluations;
        self.joint_batched_invocations += other.joint_batched_invocations;
        self.joint_element_evaluations += other.joint_element_evaluations;
        self.wasted_element_evaluations += other.wasted_element_evaluations;
        self.encoder_projection_row_evaluations += other.encoder_projection_row_evaluations;
        self.predictor_projection_evaluations += other.predictor_projection_evaluations;
        self.outer_loop_iterations += other.outer_loop_iterations;
        self.inner_loop_iterations += other.inner_loop_iterations;
        self.blank_zero_duration_steps += other.blank_zero_duration_steps;
        self.label_zero_duration_steps += other.label_zero_duration_steps;
    }
}

impl std::fmt::Display for CallCounters {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "predictor: {} batched invocations, {} element evaluations",
            self.predictor_batched_invocations, self.predictor_element_evaluations
        )?;
        writeln!(
            f,
            "joint:     {} batched invocations, {} element evaluations",
            self.joint_batched_invocations, self.joint_element_evaluations
        )?;
        writeln!(
            f,
            "projections: {} encoder rows, {} batched predictor projections",
            self.encoder_projection_row_evaluations, self.predictor_projection_evaluations
        )?;
        writeln!(
            f,
            "wasted element evaluations: {}",
            self.wasted_element_evaluations
        )?;
        write!(
            f,
            "loops: {} outer, {} inner",
            self.outer_loop_iterations, self.inner_loop_iterations
        )
    }
}
