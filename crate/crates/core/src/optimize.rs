//! Box-constrained derivative-free minimization: Nelder–Mead on the projected
//! simplex, then compass search from the best point found.
//!
//! Every evaluation is logged. Points are clamped into the box before evaluation
//! and identical points are evaluated once.

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() {
            return Err(Error::validation("bounds", "lower and upper differ in length"));
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::validation("bounds", "need finite lower ≤ upper"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| v.clamp(*l, *u))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| l <= v && v <= u)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSettings {
    /// Maximum number of distinct objective evaluations.
    pub budget: usize,
    /// Initial simplex edge and compass step, as a fraction of each box side.
    #[serde(default = "default_step")]
    pub initial_step: f64,
    /// Compass search stops once the step falls below this fraction.
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_step() -> f64 {
    0.25
}

fn default_tol() -> f64 {
    1e-3
}

impl SearchSettings {
    pub fn new(budget: usize) -> Self {
        Self {
            budget,
            initial_step: default_step(),
            tol: default_tol(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub x: Vec<f64>,
    pub value: f64,
    /// Best value seen up to and including this evaluation.
    pub best: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_x: Vec<f64>,
    pub best_value: f64,
    pub trace: Vec<TracePoint>,
}

struct Evaluator<'a, F> {
    f: &'a F,
    bounds: &'a Bounds,
    budget: usize,
    cache: FxHashMap<Vec<u64>, f64>,
    trace: Vec<TracePoint>,
    best: (Vec<f64>, f64),
}

impl<F> Evaluator<'_, F>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    fn exhausted(&self) -> bool {
        self.trace.len() >= self.budget
    }

    fn key(x: &[f64]) -> Vec<u64> {
        x.iter().map(|v| (v + 0.0).to_bits()).collect()
    }

    fn record(&mut self, x: Vec<f64>, v: f64) -> Result<f64> {
        if !v.is_finite() {
            let mut trace: Vec<f64> = self.trace.iter().map(|t| t.value).collect();
            trace.push(v);
            return Err(Error::Divergence {
                evaluations: trace.len(),
                trace,
            });
        }
        self.cache.insert(Self::key(&x), v);
        if v < self.best.1 {
            self.best = (x.clone(), v);
        }
        self.trace.push(TracePoint { x, value: v, best: self.best.1 });
        Ok(v)
    }

    /// Evaluates a batch (in parallel), returning `None` for points beyond the
    /// budget. Results are recorded in batch order.
    fn batch(&mut self, points: &[Vec<f64>]) -> Result<Vec<Option<f64>>> {
        let pts: Vec<Vec<f64>> = points.iter().map(|p| self.bounds.clamp(p)).collect();
        let mut fresh: Vec<Vec<f64>> = Vec::new();
        for p in &pts {
            let k = Self::key(p);
            if !self.cache.contains_key(&k) && !fresh.iter().any(|q| Self::key(q) == k) {
                fresh.push(p.clone());
            }
        }
        fresh.truncate(self.budget.saturating_sub(self.trace.len()));
        let f = self.f;
        let values = exec::par_map(&fresh, |p| f(p));
        for (p, v) in fresh.into_iter().zip(values) {
            self.record(p, v?)?;
        }
        Ok(pts.iter().map(|p| self.cache.get(&Self::key(p)).copied()).collect())
    }

    fn eval(&mut self, x: &[f64]) -> Result<Option<f64>> {
        Ok(self.batch(&[x.to_vec()])?[0])
    }
}

fn nelder_mead<F>(ev: &mut Evaluator<'_, F>, start: &[f64], steps: &[f64]) -> Result<()>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let k = start.len();
    let mut simplex: Vec<Vec<f64>> = vec![ev.bounds.clamp(start)];
    for i in 0..k {
        let mut p = simplex[0].clone();
        p[i] = if p[i] + steps[i] <= ev.bounds.upper[i] { p[i] + steps[i] } else { p[i] - steps[i] };
        simplex.push(ev.bounds.clamp(&p));
    }
    let init = ev.batch(&simplex)?;
    if init.iter().any(|v| v.is_none()) {
        return Ok(());
    }
    let mut vals: Vec<f64> = init.into_iter().map(|v| v.unwrap()).collect();
    let stall_tol = 1e-10;
    while !ev.exhausted() {
        let mut idx: Vec<usize> = (0..=k).collect();
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)));
        simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
        vals = idx.iter().map(|&i| vals[i]).collect();
        if (vals[k] - vals[0]).abs() <= stall_tol {
            break;
        }
        let centroid: Vec<f64> = (0..k)
            .map(|c| simplex[..k].iter().map(|p| p[c]).sum::<f64>() / k as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[k])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let Some(fr) = ev.eval(&along(1.0))? else { break };
        if fr < vals[0] {
            let Some(fe) = ev.eval(&along(2.0))? else { break };
            let (p, v) = if fe < fr { (along(2.0), fe) } else { (along(1.0), fr) };
            simplex[k] = ev.bounds.clamp(&p);
            vals[k] = v;
        } else if fr < vals[k - 1] {
            simplex[k] = ev.bounds.clamp(&along(1.0));
            vals[k] = fr;
        } else {
            let t = if fr < vals[k] { 0.5 } else { -0.5 };
            let Some(fc) = ev.eval(&along(t))? else { break };
            if fc < vals[k].min(fr) {
                simplex[k] = ev.bounds.clamp(&along(t));
                vals[k] = fc;
            } else {
                let shrunk: Vec<Vec<f64>> = simplex[1..]
                    .iter()
                    .map(|p| p.iter().zip(&simplex[0]).map(|(a, b)| b + 0.5 * (a - b)).collect())
                    .collect();
                let sv = ev.batch(&shrunk)?;
                if sv.iter().any(|v| v.is_none()) {
                    break;
                }
                for (i, (p, v)) in shrunk.into_iter().zip(sv).enumerate() {
                    simplex[i + 1] = ev.bounds.clamp(&p);
                    vals[i + 1] = v.unwrap();
                }
            }
        }
        let spread = simplex
            .iter()
            .flat_map(|p| p.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread < 1e-12 {
            break;
        }
    }
    Ok(())
}

fn compass<F>(ev: &mut Evaluator<'_, F>, steps: &[f64], tol: f64) -> Result<()>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let k = steps.len();
    let mut scale = 1.0;
    while !ev.exhausted() && scale >= tol {
        let (x, v) = ev.best.clone();
        let polls: Vec<Vec<f64>> = (0..k)
            .flat_map(|i| {
                [1.0, -1.0].into_iter().map({
                    let x = x.clone();
                    move |s| {
                        let mut p = x.clone();
                        p[i] += s * scale * steps[i];
                        p
                    }
                })
            })
            .collect();
        let vals = ev.batch(&polls)?;
        if vals.iter().any(|r| r.is_none()) {
            break;
        }
        if !vals.iter().any(|r| r.unwrap() < v) {
            scale *= 0.5;
        }
    }
    Ok(())
}

/// Minimizes `f` over the box. `starts` are evaluated first, in order; the
/// search then runs from the best of them.
pub fn minimize<F>(f: &F, bounds: &Bounds, starts: &[Vec<f64>], settings: &SearchSettings) -> Result<SearchResult>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    bounds.validate()?;
    if starts.is_empty() {
        return Err(Error::validation("starts", "need at least one starting point"));
    }
    if settings.budget == 0 {
        return Err(Error::validation("budget", "must be positive"));
    }
    let mut ev = Evaluator {
        f,
        bounds,
        budget: settings.budget,
        cache: FxHashMap::default(),
        trace: Vec::new(),
        best: (Vec::new(), f64::INFINITY),
    };
    for s in starts {
        if s.len() != bounds.dim() {
            return Err(Error::Shape {
                expected: bounds.dim(),
                got: s.len(),
            });
        }
        ev.eval(s)?;
    }
    let steps: Vec<f64> = bounds
        .lower
        .iter()
        .zip(&bounds.upper)
        .map(|(l, u)| settings.initial_step * (u - l))
        .collect();
    if bounds.dim() > 0 && steps.iter().any(|s| *s > 0.0) {
        let start = ev.best.0.clone();
        nelder_mead(&mut ev, &start, &steps)?;
        compass(&mut ev, &steps, settings.tol)?;
    }
    Ok(SearchResult {
        best_x: ev.best.0,
        best_value: ev.best.1,
        trace: ev.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bounds(k: usize, r: f64) -> Bounds {
        Bounds {
            lower: vec![-r; k],
            upper: vec![r; k],
        }
    }

    #[test]
    fn finds_interior_minimum() {
        let f = |x: &[f64]| -> Result<f64> { Ok((x[0] - 0.3).powi(2) + 2.0 * (x[1] + 0.7).powi(2)) };
        let r = minimize(&f, &bounds(2, 2.0), &[vec![0.0, 0.0]], &SearchSettings::new(400)).unwrap();
        assert!(r.best_value < 1e-5, "{r:?}");
        assert!(r.trace.windows(2).all(|w| w[1].best <= w[0].best));
        assert_eq!(r.trace[0].x, vec![0.0, 0.0]);
    }

    #[test]
    fn respects_the_box() {
        let f = |x: &[f64]| -> Result<f64> { Ok(x[0]) };
        let r = minimize(&f, &bounds(1, 1.5), &[vec![0.0]], &SearchSettings::new(60)).unwrap();
        assert_eq!(r.best_x, vec![-1.5]);
        assert!(r.trace.iter().all(|t| t.x[0] >= -1.5 && t.x[0] <= 1.5));
    }

    #[test]
    fn budget_and_divergence() {
        let f = |x: &[f64]| -> Result<f64> { Ok(x[0].sin() + x[1].cos()) };
        let r = minimize(&f, &bounds(2, 3.0), &[vec![0.0, 0.0]], &SearchSettings::new(12)).unwrap();
        assert!(r.trace.len() <= 12);
        let g = |x: &[f64]| -> Result<f64> { Ok(if x[0] > 0.1 { f64::NAN } else { x[0] }) };
        assert!(matches!(
            minimize(&g, &bounds(1, 1.0), &[vec![0.0]], &SearchSettings::new(50)),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn zero_dimensional_family_evaluates_the_start() {
        let f = |_: &[f64]| -> Result<f64> { Ok(1.25) };
        let r = minimize(&f, &bounds(0, 1.0), &[vec![]], &SearchSettings::new(10)).unwrap();
        assert_eq!(r.best_value, 1.25);
        assert_eq!(r.trace.len(), 1);
    }
}
