//! Temporal sampling under a token budget.
//!
//! News entries inside the look-back window get weight
//! `W = exp(-(D_max - D) / tau)` for age `D` in days, and are drawn with
//! probability proportional to `1 / W`, so the newest entry is `e^(D_max/tau)`
//! times likelier than the oldest. Wikipedia pages are drawn uniformly after
//! the vital articles are forced in. Either way a drawn document is accepted
//! only if it fits the remaining budget; a draw that does not fit is
//! discarded.
//!
//! Draws are made on integer weights (probabilities scaled by 2^52) held in
//! a Fenwick tree, so a draw sequence is exactly reproducible from the seed
//! and costs `O(log n)` per draw.

use std::collections::{BTreeMap, HashSet};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Five years in days.
pub const DEFAULT_WINDOW_DAYS: u32 = 1826;

/// Draws allowed per pool entry when sampling with replacement.
pub const REPLACEMENT_DRAW_FACTOR: u64 = 50;

/// Scale applied to probabilities before drawing.
pub const WEIGHT_SCALE: f64 = (1u64 << 52) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub cutoff_date: NaiveDate,
    pub window_days: u32,
    pub tau_days: f64,
}

impl CutoffSpec {
    /// Default window and `tau` equal to the window length.
    pub fn new(cutoff_date: NaiveDate) -> Self {
        Self::with_window(cutoff_date, DEFAULT_WINDOW_DAYS)
    }

    pub fn with_window(cutoff_date: NaiveDate, window_days: u32) -> Self {
        Self {
            cutoff_date,
            window_days,
            tau_days: f64::from(window_days),
        }
    }

    /// 31 December of `year`.
    pub fn year_end(year: i32) -> Self {
        Self::new(NaiveDate::from_ymd_opt(year, 12, 31).expect("valid year"))
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_days == 0 {
            return Err(Error::Config("window_days must be positive".into()));
        }
        if !(self.tau_days.is_finite() && self.tau_days > 0.0) {
            return Err(Error::Config("tau_days must be positive".into()));
        }
        Ok(())
    }

    /// Days from `date` to the cutoff; negative after the cutoff.
    pub fn age_days(&self, date: NaiveDate) -> i64 {
        (self.cutoff_date - date).num_days()
    }

    pub fn in_window(&self, date: NaiveDate) -> bool {
        let age = self.age_days(date);
        (0..=i64::from(self.window_days)).contains(&age)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub doc_id: String,
    pub age_days: u32,
    pub weight: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub d_max: u32,
    pub tau_days: f64,
    pub entries: Vec<WeightEntry>,
}

impl WeightTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.probability).collect()
    }

    /// A table of equal probabilities, for uniform draws.
    pub fn uniform(ids: &[String]) -> Self {
        let p = 1.0 / ids.len().max(1) as f64;
        Self {
            d_max: 0,
            tau_days: 1.0,
            entries: ids
                .iter()
                .map(|id| WeightEntry {
                    doc_id: id.clone(),
                    age_days: 0,
                    weight: 1.0,
                    probability: p,
                })
                .collect(),
        }
    }
}

/// Compensated (Neumaier) sum.
pub fn stable_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Recency weights and draw probabilities for `(doc_id, age_days)` entries.
pub fn compute_weights(pool: &[(String, i64)], spec: &CutoffSpec) -> Result<WeightTable> {
    spec.validate()?;
    if pool.is_empty() {
        return Err(Error::Empty("weight pool"));
    }
    let window = i64::from(spec.window_days);
    for (id, age) in pool {
        if !(0..=window).contains(age) {
            return Err(Error::AgeOutsideWindow {
                doc_id: id.clone(),
                age_days: *age,
                window_days: spec.window_days,
            });
        }
    }
    let d_max = pool.iter().map(|(_, a)| *a).max().unwrap_or(0) as u32;
    let tau = spec.tau_days;
    // 1/W computed directly as exp(+x) to avoid a second rounding.
    let inverse: Vec<f64> = pool
        .iter()
        .map(|(_, a)| ((f64::from(d_max) - *a as f64) / tau).exp())
        .collect();
    let total = stable_sum(inverse.iter().copied());
    let entries = pool
        .iter()
        .zip(&inverse)
        .map(|((id, age), inv)| WeightEntry {
            doc_id: id.clone(),
            age_days: *age as u32,
            weight: (-(f64::from(d_max) - *age as f64) / tau).exp(),
            probability: inv / total,
        })
        .collect();
    Ok(WeightTable {
        d_max,
        tau_days: tau,
        entries,
    })
}

/// Integer draw weights: `max(1, round(p * 2^52))`.
pub fn quantize(probabilities: &[f64]) -> Vec<u64> {
    probabilities
        .iter()
        .map(|p| ((p * WEIGHT_SCALE).round() as u64).max(1))
        .collect()
}

/// Fenwick tree over non-negative integer weights.
#[derive(Debug, Clone)]
pub struct Fenwick {
    tree: Vec<u64>,
    total: u64,
}

impl Fenwick {
    pub fn new(weights: &[u64]) -> Self {
        let n = weights.len();
        let mut tree = vec![0u64; n + 1];
        for (i, &w) in weights.iter().enumerate() {
            tree[i + 1] += w;
            let parent = (i + 1) + ((i + 1) & (i + 1).wrapping_neg());
            if parent <= n {
                tree[parent] += tree[i + 1];
            }
        }
        Self {
            tree,
            total: weights.iter().sum(),
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn remove(&mut self, index: usize, weight: u64) {
        let mut i = index + 1;
        while i < self.tree.len() {
            self.tree[i] -= weight;
            i += i & i.wrapping_neg();
        }
        self.total -= weight;
    }

    /// Smallest index whose inclusive prefix sum exceeds `target`.
    pub fn find(&self, mut target: u64) -> usize {
        let n = self.tree.len() - 1;
        let mut pos = 0usize;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= target {
                pos = next;
                target -= self.tree[next];
            }
            step >>= 1;
        }
        pos
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMode {
    WithoutReplacement,
    WithReplacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    BudgetMet,
    NothingFits,
    PoolExhausted,
    DrawCap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetState {
    pub t_needed: u64,
    pub t_current: u64,
    /// Accepted documents in draw order (vital articles first).
    pub accepted: Vec<String>,
    #[serde(skip)]
    pub accepted_indices: Vec<usize>,
    pub forced: u64,
    pub draws: u64,
    pub rejected_overshoot_count: u64,
    pub stop: StopReason,
}

impl BudgetState {
    pub fn residual(&self) -> u64 {
        self.t_needed - self.t_current
    }
}

struct DrawInput<'a> {
    ids: &'a [String],
    weights: Vec<u64>,
    tokens: &'a [u64],
    /// Entries already accepted or excluded before drawing starts.
    excluded: Vec<bool>,
}

fn run_draws(
    input: DrawInput<'_>,
    t_needed: u64,
    mut state: BudgetState,
    seed: u64,
    mode: SampleMode,
) -> BudgetState {
    let DrawInput {
        ids,
        mut weights,
        tokens,
        excluded,
    } = input;
    let mut live = 0u64;
    let mut sizes: BTreeMap<u64, u64> = BTreeMap::new();
    for (i, w) in weights.iter_mut().enumerate() {
        if excluded[i] {
            *w = 0;
        } else {
            live += 1;
            *sizes.entry(tokens[i]).or_insert(0) += 1;
        }
    }
    let mut tree = Fenwick::new(&weights);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap = REPLACEMENT_DRAW_FACTOR * ids.len() as u64;

    loop {
        if state.t_current == t_needed {
            state.stop = StopReason::BudgetMet;
            break;
        }
        if live == 0 {
            state.stop = StopReason::PoolExhausted;
            break;
        }
        let residual = t_needed - state.t_current;
        if sizes.keys().next().is_none_or(|&smallest| smallest > residual) {
            state.stop = StopReason::NothingFits;
            break;
        }
        if mode == SampleMode::WithReplacement && state.draws >= cap {
            state.stop = StopReason::DrawCap;
            break;
        }
        let i = tree.find(rng.gen_range(0..tree.total()));
        state.draws += 1;
        if tokens[i] <= residual {
            state.t_current += tokens[i];
            state.accepted.push(ids[i].clone());
            state.accepted_indices.push(i);
        } else {
            state.rejected_overshoot_count += 1;
        }
        if mode == SampleMode::WithoutReplacement {
            tree.remove(i, weights[i]);
            weights[i] = 0;
            live -= 1;
            let n = sizes.get_mut(&tokens[i]).expect("size tracked");
            *n -= 1;
            if *n == 0 {
                sizes.remove(&tokens[i]);
            }
        }
    }
    state
}

fn check_tokens(ids_len: usize, tokens: &[u64]) -> Result<()> {
    if ids_len != tokens.len() {
        return Err(Error::Invalid(format!(
            "{ids_len} pool entries but {} token counts",
            tokens.len()
        )));
    }
    if let Some(i) = tokens.iter().position(|&t| t == 0) {
        return Err(Error::Invalid(format!("pool entry {i} has zero tokens")));
    }
    Ok(())
}

fn empty_state(t_needed: u64) -> BudgetState {
    BudgetState {
        t_needed,
        t_current: 0,
        accepted: Vec::new(),
        accepted_indices: Vec::new(),
        forced: 0,
        draws: 0,
        rejected_overshoot_count: 0,
        stop: StopReason::BudgetMet,
    }
}

/// Draw from `table` until the budget is met or nothing else can fit.
pub fn sample_to_budget(
    table: &WeightTable,
    token_counts: &[u64],
    t_needed: u64,
    seed: u64,
    mode: SampleMode,
) -> Result<BudgetState> {
    check_tokens(table.len(), token_counts)?;
    let ids: Vec<String> = table.entries.iter().map(|e| e.doc_id.clone()).collect();
    let input = DrawInput {
        ids: &ids,
        weights: quantize(&table.probabilities()),
        tokens: token_counts,
        excluded: vec![false; ids.len()],
    };
    Ok(run_draws(input, t_needed, empty_state(t_needed), seed, mode))
}

/// Accept every vital page, then fill the budget uniformly without
/// replacement from the rest of the pool.
pub fn wiki_select(
    pool_ids: &[String],
    vital_ids: &HashSet<String>,
    budget: u64,
    token_counts: &[u64],
    seed: u64,
) -> Result<BudgetState> {
    check_tokens(pool_ids.len(), token_counts)?;
    let in_pool: HashSet<&str> = pool_ids.iter().map(String::as_str).collect();
    let mut missing: Vec<&String> = vital_ids.iter().filter(|v| !in_pool.contains(v.as_str())).collect();
    if !missing.is_empty() {
        missing.sort();
        return Err(Error::VitalNotInPool(missing[0].clone()));
    }
    let mut state = empty_state(budget);
    let mut excluded = vec![false; pool_ids.len()];
    for (i, id) in pool_ids.iter().enumerate() {
        if vital_ids.contains(id) && !excluded[i] {
            excluded[i] = true;
            state.t_current += token_counts[i];
            state.accepted.push(id.clone());
            state.accepted_indices.push(i);
            state.forced += 1;
        }
    }
    if state.t_current > budget {
        return Err(Error::VitalOverBudget {
            vital_tokens: state.t_current,
            budget,
        });
    }
    let input = DrawInput {
        ids: pool_ids,
        weights: vec![1; pool_ids.len()],
        tokens: token_counts,
        excluded,
    };
    Ok(run_draws(input, budget, state, seed, SampleMode::WithoutReplacement))
}
