//! A search problem: objective, pulse grid, search settings and the
//! metrics reported for it.

use serde::Serialize;
use vanloan::{propagate, ControlSequence, ObjectiveSpec, Result, SearchConfig};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Grid {
    pub total_time: f64,
    /// Steps of the waveform sent to the system, padding included.
    pub steps: usize,
    /// Zero steps at each end.
    pub pad: usize,
    pub dt: f64,
    /// Band limit of the optimization map, if any.
    pub dnu: Option<f64>,
}

impl Grid {
    pub fn opt_steps(&self) -> usize {
        self.steps - 2 * self.pad
    }

    pub fn opt_time(&self) -> f64 {
        self.dt * self.opt_steps() as f64
    }

    pub fn opt_durations(&self) -> Vec<f64> {
        vec![self.dt; self.opt_steps()]
    }
}

/// Reported quantity for one objective term: its normalized deviation,
/// or the square of it.
#[derive(Clone, Debug, PartialEq)]
pub struct Metric {
    pub name: String,
    pub squared: bool,
}

impl Metric {
    pub fn new(name: &str) -> Self {
        Metric { name: name.into(), squared: false }
    }

    pub fn squared(mut self) -> Self {
        self.squared = true;
        self
    }
}

pub struct Problem {
    pub name: String,
    pub grid: Grid,
    pub spec: ObjectiveSpec,
    /// One per objective term, same order.
    pub metrics: Vec<Metric>,
    pub search: SearchConfig,
    /// Problem-specific numbers beyond the term metrics.
    pub extras: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemberMetrics {
    pub label: String,
    pub weight: f64,
    pub phi: f64,
    pub metrics: Vec<(String, f64)>,
}

impl Problem {
    pub fn zero_controls(&self) -> Result<ControlSequence> {
        ControlSequence::new(vec![vec![0.0; self.grid.opt_steps()]; self.channels()], self.grid.opt_durations())
    }

    pub fn channels(&self) -> usize {
        self.search.bounds.len()
    }

    pub fn member_metrics(&self, alpha: &ControlSequence) -> Result<Vec<MemberMetrics>> {
        let reports = self.spec.term_report(alpha)?;
        let mut out = Vec::with_capacity(reports.len());
        for (k, r) in reports.into_iter().enumerate() {
            let mut metrics: Vec<(String, f64)> = r
                .terms
                .iter()
                .zip(&self.metrics)
                .map(|(t, m)| (m.name.clone(), if m.squared { t.deviation * t.deviation } else { t.deviation }))
                .collect();
            for extra in &self.extras {
                metrics.push((extra.clone(), self.extra(extra, k, alpha)?));
            }
            let phi = r.terms.iter().map(|t| t.weight * t.score).sum();
            out.push(MemberMetrics { label: r.label, weight: r.weight, phi, metrics });
        }
        Ok(out)
    }

    fn extra(&self, name: &str, member: usize, alpha: &ControlSequence) -> Result<f64> {
        match name {
            "recoupling_scale" => {
                let beta = self.spec.member_controls(member, alpha)?;
                let v = propagate(&self.spec.members()[member].layout, &beta)?;
                crate::builtins::recoupling_scale(self, &v)
            }
            _ => Err(vanloan::Error::UnknownName(format!("metric {:?}", name))),
        }
    }

    /// Weighted ensemble mean of each metric.
    pub fn mean_metrics(&self, members: &[MemberMetrics]) -> Vec<(String, f64)> {
        let Some(first) = members.first() else { return Vec::new() };
        first
            .metrics
            .iter()
            .enumerate()
            .map(|(i, (name, _))| (name.clone(), members.iter().map(|m| m.weight * m.metrics[i].1).sum()))
            .collect()
    }
}
