//! Grid-then-golden-section maximization of an expensive scalar objective.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub alpha_max: f64,
    pub grid_step: f64,
    /// Golden-section stops once the bracket is narrower than this.
    pub tol: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            alpha_max: 300.0,
            grid_step: 10.0,
            tol: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub alpha: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub alpha: f64,
    pub objective: f64,
    pub best_grid: Evaluation,
    /// Every distinct evaluation in call order.
    pub evaluations: Vec<Evaluation>,
    /// Golden-section brackets `(lo, hi)` before each shrink.
    pub brackets: Vec<(f64, f64)>,
    /// The grid objective was constant.
    pub flat: bool,
}

struct Cached<F> {
    f: F,
    cache: BTreeMap<u64, f64>,
    order: Vec<Evaluation>,
}

impl<F: FnMut(f64) -> Result<f64>> Cached<F> {
    fn eval(&mut self, alpha: f64) -> Result<f64> {
        // +0.0 and -0.0 share a key.
        let key = (alpha + 0.0).to_bits();
        if let Some(&v) = self.cache.get(&key) {
            return Ok(v);
        }
        let v = (self.f)(alpha)?;
        if v.is_nan() {
            return Err(Error::NonFinite(format!("objective at alpha = {alpha}")));
        }
        self.cache.insert(key, v);
        self.order.push(Evaluation { alpha, objective: v });
        Ok(v)
    }
}

/// Grid `0, step, 2 step, ..., alpha_max` (alpha_max always included).
pub fn grid(alpha_max: f64, step: f64) -> Vec<f64> {
    let n = (alpha_max / step).floor() as usize;
    let mut g: Vec<f64> = (0..=n).map(|i| i as f64 * step).collect();
    if *g.last().unwrap() < alpha_max {
        g.push(alpha_max);
    }
    g
}

/// Maximizes `eval` over `[0, alpha_max]`. Phase one scans the grid, phase
/// two runs golden-section search on `[best - step, best + step]` (clipped),
/// and the result is rounded to an integer. The returned objective is never
/// below the best grid objective.
pub fn coefficient_search<F: FnMut(f64) -> Result<f64>>(eval: F, cfg: &SearchConfig) -> Result<SearchOutcome> {
    if !(cfg.grid_step > 0.0) || !(cfg.alpha_max > cfg.grid_step) || !(cfg.tol > 0.0) {
        return Err(Error::InvalidArgument("need alpha_max > grid_step > 0 and tol > 0".into()));
    }
    let mut f = Cached {
        f: eval,
        cache: BTreeMap::new(),
        order: Vec::new(),
    };
    let points = grid(cfg.alpha_max, cfg.grid_step);
    let mut best_grid = Evaluation {
        alpha: 0.0,
        objective: f64::NEG_INFINITY,
    };
    let mut lowest = f64::INFINITY;
    for &a in &points {
        let v = f.eval(a)?;
        lowest = lowest.min(v);
        if v > best_grid.objective {
            best_grid = Evaluation { alpha: a, objective: v };
        }
    }
    if lowest == best_grid.objective {
        log::warn!("coefficient search objective is flat over the grid; using alpha = {}", points[0]);
        return Ok(SearchOutcome {
            alpha: points[0],
            objective: best_grid.objective,
            best_grid: Evaluation {
                alpha: points[0],
                objective: best_grid.objective,
            },
            evaluations: f.order,
            brackets: Vec::new(),
            flat: true,
        });
    }

    let mut lo = (best_grid.alpha - cfg.grid_step).max(0.0);
    let mut hi = (best_grid.alpha + cfg.grid_step).min(cfg.alpha_max);
    let mut brackets = Vec::new();
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = f.eval(c)?;
    let mut fd = f.eval(d)?;
    while hi - lo > cfg.tol {
        brackets.push((lo, hi));
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f.eval(c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f.eval(d)?;
        }
    }
    brackets.push((lo, hi));

    let centre = if fc >= fd { c } else { d };
    let rounded = centre.round().clamp(0.0, cfg.alpha_max.floor());
    let v = f.eval(rounded)?;
    let (alpha, objective) = if v >= best_grid.objective {
        (rounded, v)
    } else {
        (best_grid.alpha, best_grid.objective)
    };
    Ok(SearchOutcome {
        alpha,
        objective,
        best_grid,
        evaluations: f.order,
        brackets,
        flat: false,
    })
}
