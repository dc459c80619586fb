use std::cell::Cell;
use std::collections::HashMap;
use std::io::Write;
use std::process::Command;

use serde::{Deserialize, Serialize};

use super::expand::expand_network;
use super::network::{network_time, ModelMap, NetworkSpec};
use crate::error::{Error, Result};

/// Largest grid product [`brute_force_compress`] will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

/// Task loss of a candidate network; must be deterministic and `>= 0`.
pub trait LossEvaluator {
    fn loss(&self, net: &NetworkSpec) -> Result<f64>;
}

/// Loss identically zero: compression then minimizes time alone.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroLoss;

impl LossEvaluator for ZeroLoss {
    fn loss(&self, _: &NetworkSpec) -> Result<f64> {
        Ok(0.0)
    }
}

/// Wraps an in-process closure.
pub struct FnEvaluator<F>(pub F);

impl<F: Fn(&NetworkSpec) -> Result<f64>> LossEvaluator for FnEvaluator<F> {
    fn loss(&self, net: &NetworkSpec) -> Result<f64> {
        (self.0)(net)
    }
}

/// Penalizes narrowing relative to a reference network:
/// `weight · Σ_l max(0, 1 − w_l / ref_l)²` over output widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthDeficitLoss {
    pub reference: Vec<u32>,
    pub weight: f64,
}

impl WidthDeficitLoss {
    pub fn new(reference: &NetworkSpec, weight: f64) -> Self {
        WidthDeficitLoss { reference: reference.out_widths(), weight }
    }
}

impl LossEvaluator for WidthDeficitLoss {
    fn loss(&self, net: &NetworkSpec) -> Result<f64> {
        if net.len() != self.reference.len() {
            return Err(Error::Evaluator(format!(
                "reference has {} layers, candidate {}",
                self.reference.len(),
                net.len()
            )));
        }
        Ok(self.weight
            * net
                .out_widths()
                .iter()
                .zip(&self.reference)
                .map(|(&w, &r)| (1.0 - f64::from(w) / f64::from(r)).max(0.0).powi(2))
                .sum::<f64>())
    }
}

/// Runs `sh -c '<command> <network-file> [theta]'` and reads a single
/// non-negative real from stdout; a nonzero exit is an evaluation failure.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandEvaluator {
    pub command: String,
    /// Opaque parameters handed to the command unchanged.
    pub theta: Option<String>,
}

impl CommandEvaluator {
    pub fn new(command: impl Into<String>) -> Self {
        CommandEvaluator { command: command.into(), theta: None }
    }
}

impl LossEvaluator for CommandEvaluator {
    fn loss(&self, net: &NetworkSpec) -> Result<f64> {
        let mut file = tempfile::Builder::new().suffix(".json").tempfile()?;
        file.write_all(&net.to_json())?;
        file.flush()?;
        let mut cmd = Command::new("sh");
        cmd.arg("-c").arg(format!("{} \"$@\"", self.command)).arg("sh").arg(file.path());
        if let Some(theta) = &self.theta {
            cmd.arg(theta);
        }
        let out = cmd.output()?;
        if !out.status.success() {
            let stderr = String::from_utf8_lossy(&out.stderr);
            return Err(Error::Evaluator(format!("`{}` exited with {}: {}", self.command, out.status, stderr.trim())));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        let loss: f64 = text
            .trim()
            .parse()
            .map_err(|_| Error::Evaluator(format!("`{}` printed `{}`, expected one number", self.command, text.trim())))?;
        if !(loss.is_finite() && loss >= 0.0) {
            return Err(Error::Evaluator(format!("loss must be a non-negative real, got {loss}")));
        }
        Ok(loss)
    }
}

/// `loss + lambda · network_time`.
pub fn time_aware_objective(
    evaluator: &dyn LossEvaluator,
    models: &ModelMap,
    net: &NetworkSpec,
    lambda: f64,
) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(evaluator.loss(net)? + lambda * network_time(models, net)?)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Output widths before expansion.
    pub widths: Vec<u32>,
    /// The network actually scored (widths applied, then expanded).
    pub network: NetworkSpec,
    pub loss: f64,
    pub time: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressOutcome {
    pub network: NetworkSpec,
    pub loss: f64,
    pub time: f64,
    pub objective: f64,
    pub start_time: f64,
    pub start_objective: f64,
    pub evaluator_calls: usize,
    /// Search stopped because the evaluator budget ran out.
    pub budget_exhausted: bool,
}

struct Scorer<'a> {
    evaluator: &'a dyn LossEvaluator,
    models: &'a ModelMap,
    net: &'a NetworkSpec,
    lambda: f64,
    budget: usize,
    calls: Cell<usize>,
    cache: HashMap<Vec<u32>, Candidate>,
}

impl<'a> Scorer<'a> {
    fn new(evaluator: &'a dyn LossEvaluator, models: &'a ModelMap, net: &'a NetworkSpec, lambda: f64, budget: usize) -> Self {
        Scorer { evaluator, models, net, lambda, budget, calls: Cell::new(0), cache: HashMap::new() }
    }

    fn exhausted(&self) -> bool {
        self.calls.get() >= self.budget
    }

    fn evaluate(&self, net: &NetworkSpec) -> Result<(f64, f64)> {
        self.calls.set(self.calls.get() + 1);
        let loss = self.evaluator.loss(net)?;
        if !(loss.is_finite() && loss >= 0.0) {
            return Err(Error::Evaluator(format!("loss must be a non-negative real, got {loss}")));
        }
        Ok((loss, network_time(self.models, net)?))
    }

    /// Scores a width vector, or `None` once the budget is spent.
    fn score(&mut self, widths: &[u32]) -> Result<Option<Candidate>> {
        if let Some(c) = self.cache.get(widths) {
            return Ok(Some(c.clone()));
        }
        if self.exhausted() {
            return Ok(None);
        }
        let (network, _) = expand_network(self.models, &self.net.with_out_widths(widths)?)?;
        let (loss, time) = self.evaluate(&network)?;
        let candidate =
            Candidate { widths: widths.to_vec(), network, loss, time, objective: loss + self.lambda * time };
        self.cache.insert(widths.to_vec(), candidate.clone());
        Ok(Some(candidate))
    }

    fn input(&self) -> Result<Candidate> {
        let (loss, time) = self.evaluate(self.net)?;
        Ok(Candidate {
            widths: self.net.out_widths(),
            network: self.net.clone(),
            loss,
            time,
            objective: loss + self.lambda * time,
        })
    }

    fn outcome(&self, best: Candidate, start: &Candidate) -> CompressOutcome {
        CompressOutcome {
            network: best.network,
            loss: best.loss,
            time: best.time,
            objective: best.objective,
            start_time: start.time,
            start_objective: start.objective,
            evaluator_calls: self.calls.get(),
            budget_exhausted: self.exhausted(),
        }
    }
}

fn normalized_grid(net: &NetworkSpec, width_grid: &[Vec<u32>]) -> Result<Vec<Vec<u32>>> {
    if width_grid.len() != net.len() {
        return Err(Error::invalid(format!("width grid has {} entries for {} layers", width_grid.len(), net.len())));
    }
    width_grid
        .iter()
        .enumerate()
        .map(|(i, g)| {
            if g.is_empty() {
                return Err(Error::invalid(format!("empty width grid for layer {i}")));
            }
            if g.contains(&0) {
                return Err(Error::invalid(format!("width grid for layer {i} contains 0")));
            }
            let mut g = g.clone();
            g.sort_unstable();
            g.dedup();
            Ok(g)
        })
        .collect()
}

/// Steepest-descent search over single-layer width moves minimizing
/// `loss + lambda · time`, each candidate expanded before scoring.
///
/// Never returns a network whose objective exceeds the input's. At most
/// `budget` evaluator calls are made.
pub fn greedy_compress(
    evaluator: &dyn LossEvaluator,
    models: &ModelMap,
    net: &NetworkSpec,
    lambda: f64,
    width_grid: &[Vec<u32>],
    budget: usize,
) -> Result<CompressOutcome> {
    check_lambda(lambda)?;
    net.validate()?;
    let grid = normalized_grid(net, width_grid)?;
    if budget == 0 {
        return Err(Error::invalid("evaluator budget must be >= 1"));
    }
    let mut scorer = Scorer::new(evaluator, models, net, lambda, budget);
    let start = scorer.input()?;
    let Some(mut current) = scorer.score(&net.out_widths())? else {
        return Ok(scorer.outcome(start.clone(), &start));
    };
    'descent: loop {
        let mut best: Option<Candidate> = None;
        for (l, options) in grid.iter().enumerate() {
            for &w in options {
                if w == current.widths[l] {
                    continue;
                }
                let mut widths = current.widths.clone();
                widths[l] = w;
                let Some(c) = scorer.score(&widths)? else { break 'descent };
                let bar = best.as_ref().map_or(current.objective, |b| b.objective);
                if c.objective < bar {
                    best = Some(c);
                }
            }
        }
        match best {
            Some(b) => current = b,
            None => break,
        }
    }
    let best = if current.objective <= start.objective { current } else { start.clone() };
    Ok(scorer.outcome(best, &start))
}

/// Exhaustive minimizer of `loss + lambda · time` over the width grid (plus
/// the input network itself), each candidate expanded before scoring. Ties
/// keep the lexicographically smallest widths.
pub fn brute_force_compress(
    evaluator: &dyn LossEvaluator,
    models: &ModelMap,
    net: &NetworkSpec,
    lambda: f64,
    width_grid: &[Vec<u32>],
) -> Result<CompressOutcome> {
    check_lambda(lambda)?;
    net.validate()?;
    let grid = normalized_grid(net, width_grid)?;
    let size = grid.iter().map(|g| g.len() as u128).product::<u128>();
    if size > BRUTE_FORCE_LIMIT {
        return Err(Error::invalid(format!("search space of {size} candidates exceeds {BRUTE_FORCE_LIMIT}")));
    }
    let mut scorer = Scorer::new(evaluator, models, net, lambda, usize::MAX);
    let start = scorer.input()?;
    let mut best: Option<Candidate> = None;
    let mut index = vec![0usize; grid.len()];
    loop {
        let widths: Vec<u32> = index.iter().zip(&grid).map(|(&i, g)| g[i]).collect();
        let c = scorer.score(&widths)?.expect("unbounded budget");
        if best.as_ref().is_none_or(|b| c.objective < b.objective) {
            best = Some(c);
        }
        // odometer increment, last layer fastest
        let mut pos = grid.len();
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            index[pos] += 1;
            if index[pos] < grid[pos].len() {
                break;
            }
            index[pos] = 0;
            if pos == 0 {
                pos = usize::MAX;
                break;
            }
        }
        if pos == usize::MAX || grid.is_empty() {
            break;
        }
    }
    let mut best = best.expect("at least one candidate");
    for extra in [scorer.score(&net.out_widths())?.expect("unbounded budget"), start.clone()] {
        if extra.objective < best.objective {
            best = extra;
        }
    }
    Ok(scorer.outcome(best, &start))
}
