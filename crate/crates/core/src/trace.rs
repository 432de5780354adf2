//! Per-step training records shared by the shallow and deep trainers.

use serde::{Deserialize, Serialize};

use crate::io::{fmt_f64, Csv};

/// Which weights the deviation and activation-flip columns are measured from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DeviationRef {
    /// The random initialization W(0).
    #[default]
    Init,
    /// The weights this run started from (W(P) when fine-tuning).
    Pretrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub loss: f64,
    pub residual_norm: f64,
    /// `(1/sqrt(n)) ||W - W_ref||_F`, summed over layers for deep nets.
    pub weight_deviation: f64,
    pub grad_fro_norm: f64,
    pub activation_flip_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub reference: DeviationRef,
    pub eta: f64,
    pub records: Vec<TraceRecord>,
    pub steps_taken: usize,
    pub stopped_early: bool,
    /// Largest `| ||dL/dX1||^2 - ||u - y||^2 |` seen, when checked.
    pub max_identity_error: Option<f64>,
}

impl TrainTrace {
    pub fn new(reference: DeviationRef, eta: f64) -> Self {
        Self {
            reference,
            eta,
            records: Vec::new(),
            steps_taken: 0,
            stopped_early: false,
            max_identity_error: None,
        }
    }

    pub fn first(&self) -> Option<&TraceRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.residual_norm).collect()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn deviations(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.weight_deviation).collect()
    }

    pub fn to_csv(&self) -> Csv {
        let mut csv = Csv::with_header(&[
            "step",
            "loss",
            "residual",
            "deviation",
            "grad_norm",
            "flip_fraction",
        ]);
        for r in &self.records {
            csv.row(&[
                r.step.to_string(),
                fmt_f64(r.loss),
                fmt_f64(r.residual_norm),
                fmt_f64(r.weight_deviation),
                fmt_f64(r.grad_fro_norm),
                fmt_f64(r.activation_flip_fraction),
            ]);
        }
        csv
    }
}
