//! Rolling-horizon refinement of a session's charging profile: at every
//! minute the realized powers so far, together with the battery capacity, are
//! matched against historical sessions by Euclidean distance and the closest
//! session's remaining profile becomes the new forecast.

use serde::{Deserialize, Serialize};

use crate::dataset::{resample_to_soc_grid, ChargingSession};
use crate::error::{Error, Result};
use crate::profile::{grid_index, SocGridProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub session_id: String,
    pub capacity: f64,
    pub profile: SocGridProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryMatrix {
    pub rows: Vec<HistoryRow>,
}

impl HistoryMatrix {
    pub fn new(rows: Vec<HistoryRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyMatrix);
        }
        Ok(HistoryMatrix { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// One row per training session, in input order. Duplicates are kept.
pub fn build_history_matrix(train: &[ChargingSession]) -> Result<HistoryMatrix> {
    let rows = train
        .iter()
        .map(|s| {
            Ok(HistoryRow {
                session_id: s.session_id.clone(),
                capacity: s.capacity_kwh,
                profile: resample_to_soc_grid(s)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    HistoryMatrix::new(rows)
}

/// What is known about a connected EV at the current minute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHistory {
    pub capacity: f64,
    /// Realized (SoC %, power kW) pairs, one per elapsed minute.
    pub observed: Vec<(f64, f64)>,
    pub soc_target: f64,
}

impl SessionHistory {
    /// Grid SoCs visited so far with the first power seen at each.
    pub fn query_points(&self) -> Vec<(usize, f64)> {
        let mut pts: Vec<(usize, f64)> = Vec::with_capacity(self.observed.len());
        for &(soc, p) in &self.observed {
            let g = grid_index(soc);
            if pts.last().is_none_or(|&(last, _)| last != g) {
                pts.push((g, p));
            }
        }
        pts
    }

    pub fn current_soc(&self) -> Option<usize> {
        self.observed.last().map(|&(s, _)| grid_index(s))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefineOptions {
    /// Z-score every query coordinate with the matrix column statistics.
    pub standardize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedProfile {
    pub row: usize,
    pub session_id: String,
    pub distance: f64,
    /// Inclusive grid range covered by `powers`.
    pub soc_start: usize,
    pub soc_end: usize,
    pub powers: Vec<f64>,
}

/// Euclidean distances between the query vector and every matrix row.
pub fn distances(matrix: &HistoryMatrix, history: &SessionHistory, opts: &RefineOptions) -> Vec<f64> {
    let pts = history.query_points();
    let scales: Vec<(f64, f64)> = if opts.standardize {
        let col = |f: &dyn Fn(&HistoryRow) -> f64| {
            let n = matrix.rows.len() as f64;
            let m = matrix.rows.iter().map(f).sum::<f64>() / n;
            let sd = (matrix.rows.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>() / n).sqrt();
            (m, if sd > 0.0 { sd } else { 1.0 })
        };
        std::iter::once(col(&|r: &HistoryRow| r.capacity))
            .chain(pts.iter().map(|&(g, _)| col(&move |r: &HistoryRow| r.profile.at(g))))
            .collect()
    } else {
        vec![(0.0, 1.0); pts.len() + 1]
    };

    let query: Vec<f64> = std::iter::once(history.capacity)
        .chain(pts.iter().map(|&(_, p)| p))
        .zip(&scales)
        .map(|(v, (m, s))| (v - m) / s)
        .collect();
    matrix
        .rows
        .iter()
        .map(|r| {
            std::iter::once(r.capacity)
                .chain(pts.iter().map(|&(g, _)| r.profile.at(g)))
                .zip(&scales)
                .zip(&query)
                .map(|((v, (m, s)), q)| {
                    let d = (v - m) / s - q;
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

pub fn refine(matrix: &HistoryMatrix, history: &SessionHistory) -> Result<RefinedProfile> {
    refine_with(matrix, history, &RefineOptions::default())
}

pub fn refine_with(matrix: &HistoryMatrix, history: &SessionHistory, opts: &RefineOptions) -> Result<RefinedProfile> {
    if matrix.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let current = history
        .current_soc()
        .ok_or_else(|| Error::param("refinement needs at least one observation"))?;
    let target = grid_index(history.soc_target);
    if target < current {
        return Err(Error::param(format!(
            "target SoC {target} % lies below current SoC {current} %"
        )));
    }
    let d = distances(matrix, history, opts);
    let mut best = 0;
    for (j, dj) in d.iter().enumerate().skip(1) {
        if *dj < d[best] {
            best = j;
        }
    }
    let row = &matrix.rows[best];
    Ok(RefinedProfile {
        row: best,
        session_id: row.session_id.clone(),
        distance: d[best],
        soc_start: current,
        soc_end: target,
        powers: row.profile.slice(current, target).to_vec(),
    })
}

/// One forecast in a rolling session. Iteration 0 is the unconnected
/// forecast; later iterations come from `refine`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingUpdate {
    pub iteration: usize,
    pub soc_start: usize,
    pub soc_end: usize,
    pub powers: Vec<f64>,
    pub source_session: Option<String>,
}

/// Replays a realized session minute by minute. Refinement `i` sees the
/// first `i` records; at most `max_refinements` refinements are made.
pub fn run_rolling_session(
    matrix: &HistoryMatrix,
    session: &ChargingSession,
    unconnected: &SocGridProfile,
    max_refinements: usize,
) -> Result<Vec<RollingUpdate>> {
    let (soc_a, soc_d) = (grid_index(session.soc_a()), grid_index(session.soc_d()));
    let mut out = vec![RollingUpdate {
        iteration: 0,
        soc_start: soc_a,
        soc_end: soc_d,
        powers: unconnected.slice(soc_a, soc_d).to_vec(),
        source_session: None,
    }];
    let n = session.records.len().min(max_refinements);
    let mut history = SessionHistory {
        capacity: session.capacity_kwh,
        observed: Vec::with_capacity(n),
        soc_target: session.soc_d(),
    };
    for i in 1..=n {
        let r = &session.records[i - 1];
        history.observed.push((r.soc, r.power));
        let refined = refine(matrix, &history)?;
        out.push(RollingUpdate {
            iteration: i,
            soc_start: refined.soc_start,
            soc_end: refined.soc_end,
            powers: refined.powers,
            source_session: Some(refined.session_id),
        });
    }
    Ok(out)
}
