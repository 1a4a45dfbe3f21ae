//! Backward elimination by AIC.

use rayon::prelude::*;
use serde::Serialize;

use super::glm::{fit_negbin, DesignMatrix, RegressionFit};
use crate::error::Error;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepCandidate {
    pub variable: String,
    pub aic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub current_aic: f64,
    pub candidates: Vec<StepCandidate>,
    pub removed: Option<String>,
}

#[derive(Debug, Clone)]
pub struct StepwiseResult {
    pub fit: RegressionFit,
    pub design: DesignMatrix,
    pub trace: Vec<StepRecord>,
}

impl StepwiseResult {
    pub fn removed(&self) -> Vec<&str> {
        self.trace.iter().filter_map(|s| s.removed.as_deref()).collect()
    }
}

#[derive(Debug, thiserror::Error)]
#[error("stepwise selection aborted after {} steps: {source}", trace.len())]
pub struct StepwiseError {
    pub trace: Vec<StepRecord>,
    #[source]
    pub source: Error,
}

impl From<StepwiseError> for Error {
    fn from(e: StepwiseError) -> Self {
        Error::Stage { stage: "stepwise".into(), source: Box::new(e.source) }
    }
}

type Candidate = (DesignMatrix, RegressionFit);

/// Starting from the full model, repeatedly drop the covariate whose removal
/// gives the lowest AIC while that strictly improves on the current AIC.
/// Candidate fits run in parallel and are compared in column order, so the
/// earliest column wins exact ties.
pub fn stepwise_backward(design: &DesignMatrix) -> Result<StepwiseResult, StepwiseError> {
    let mut trace = Vec::new();
    let mut design = design.clone();
    let mut fit = fit_negbin(&design).map_err(|source| StepwiseError { trace: trace.clone(), source })?;
    if !fit.converged {
        log::warn!("full model did not converge; continuing with its AIC");
    }
    loop {
        let first = usize::from(design.has_intercept());
        let removable: Vec<usize> = (first..design.p()).collect();
        if removable.is_empty() {
            break;
        }
        let fits: Vec<(usize, Result<Candidate, Error>)> = removable
            .par_iter()
            .map(|&j| {
                let r = design.without(j).and_then(|d| fit_negbin(&d).map(|f| (d, f)));
                (j, r)
            })
            .collect();
        let mut candidates = Vec::new();
        let mut best: Option<(usize, DesignMatrix, RegressionFit)> = None;
        for (j, r) in fits {
            let (d, f) = match r {
                Ok(v) => v,
                Err(source) => return Err(StepwiseError { trace, source }),
            };
            candidates.push(StepCandidate { variable: design.names()[j].clone(), aic: f.aic });
            if best.as_ref().is_none_or(|b| f.aic < b.2.aic) {
                best = Some((j, d, f));
            }
        }
        let (j, d, f) = best.expect("at least one candidate");
        let improves = f.aic < fit.aic;
        trace.push(StepRecord {
            step: trace.len() + 1,
            current_aic: fit.aic,
            candidates,
            removed: improves.then(|| design.names()[j].clone()),
        });
        if !improves {
            break;
        }
        design = d;
        fit = f;
    }
    Ok(StepwiseResult { fit, design, trace })
}

/// CSV `step,current_aic,candidate,aic,removed` with one row per candidate.
pub fn write_trace<W: std::io::Write>(writer: W, trace: &[StepRecord]) -> crate::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["step", "current_aic", "candidate", "aic", "removed"])?;
    for s in trace {
        for c in &s.candidates {
            let removed = s.removed.as_deref() == Some(c.variable.as_str());
            w.write_record([
                s.step.to_string(),
                s.current_aic.to_string(),
                c.variable.clone(),
                c.aic.to_string(),
                removed.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
