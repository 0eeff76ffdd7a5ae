//! Tabular autoregressive categorical policy.
//!
//! Logits are indexed `[instance][position][symbol]` with positions
//! `0..=max_len` and symbols `0..=vocab_size` (the last is end-of-sequence).
//! The distribution at a position is the softmax of its logit row.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose, Rng};
use crate::tasks::{self, Dataset, TaskSpec, TokenId};
use crate::textfmt;

const CHECKPOINT_HEADER: &str = "dopr-checkpoint v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub num_instances: usize,
    pub positions: usize,
    pub symbols: usize,
}

impl Dims {
    pub fn for_spec(spec: &TaskSpec) -> Self {
        Self {
            num_instances: spec.num_instances,
            positions: spec.max_response_len(),
            symbols: spec.alphabet(),
        }
    }

    pub fn len(&self) -> usize {
        self.num_instances * self.positions * self.symbols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn offset(&self, id: usize, pos: usize) -> usize {
        debug_assert!(id < self.num_instances && pos < self.positions);
        (id * self.positions + pos) * self.symbols
    }

    fn tuple(&self) -> (usize, usize, usize) {
        (self.num_instances, self.positions, self.symbols)
    }

    fn eos(&self) -> TokenId {
        (self.symbols - 1) as TokenId
    }
}

/// How the initial (and reference) policy is built.
///
/// `TargetPrior` stands in for a pretrained policy that already has partial
/// competence: each position gets `strength` added to the correct symbol and
/// every logit receives independent Gaussian noise of std `noise`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyInit {
    Uniform,
    TargetPrior { strength: f64, noise: f64 },
}

impl Default for PolicyInit {
    fn default() -> Self {
        PolicyInit::TargetPrior {
            strength: 3.0,
            noise: 1.2,
        }
    }
}

/// One sampled response with its sampling-time log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutRecord {
    pub instance_id: usize,
    pub tokens: Vec<TokenId>,
    pub logprobs: Vec<f64>,
    pub reward: f64,
}

impl RolloutRecord {
    /// Emitted tokens, end-of-sequence included when present.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Max-subtracted log-softmax of `row` into `out`.
pub fn log_softmax(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|&x| (x - max).exp()).sum();
    let lse = max + sum.ln();
    for (o, &x) in out.iter_mut().zip(row) {
        *o = x - lse;
    }
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; row.len()];
    log_softmax(row, &mut out);
    out.iter_mut().for_each(|x| *x = x.exp());
    out
}

/// Categorical entropy of softmax(row), with 0·ln 0 = 0.
pub fn entropy(row: &[f64]) -> f64 {
    let mut lp = vec![0.0; row.len()];
    log_softmax(row, &mut lp);
    -lp.iter()
        .map(|&l| {
            let p = l.exp();
            if p > 0.0 {
                p * l
            } else {
                0.0
            }
        })
        .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    dims: Dims,
    logits: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            logits: vec![0.0; dims.len()],
        }
    }

    pub fn from_logits(dims: Dims, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != dims.len() {
            return Err(Error::invalid(format!(
                "expected {} logits, got {}",
                dims.len(),
                logits.len()
            )));
        }
        if let Some(i) = logits.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("logit {i} is not finite")));
        }
        Ok(Self { dims, logits })
    }

    pub fn init(dataset: &Dataset, init: &PolicyInit, seed: u64) -> Result<Self> {
        let dims = Dims::for_spec(&dataset.spec);
        let mut params = Self::zeros(dims);
        match *init {
            PolicyInit::Uniform => {}
            PolicyInit::TargetPrior { strength, noise } => {
                if !strength.is_finite() || !(noise.is_finite() && noise >= 0.0) {
                    return Err(Error::field(
                        "train.init",
                        "strength must be finite and noise finite and non-negative",
                    ));
                }
                let normal = Normal::new(0.0, noise).expect("validated std");
                let eos = dims.eos();
                for inst in &dataset.instances {
                    let mut r = rng::stream(seed, Purpose::Init, inst.id as u64, 0, 0);
                    for pos in 0..dims.positions {
                        let row = params.row_mut(inst.id, pos);
                        for x in row.iter_mut() {
                            *x = normal.sample(&mut r);
                        }
                        let correct = inst.target.get(pos).copied().or(
                            (pos == inst.target.len()).then_some(eos),
                        );
                        if let Some(tok) = correct {
                            row[tok as usize] += strength;
                        }
                    }
                }
            }
        }
        Ok(params)
    }

    /// Logits with `margin` on every correct symbol and 0 elsewhere; greedy
    /// decoding of the result reproduces every target.
    pub fn pinned_to_targets(dataset: &Dataset, margin: f64) -> Self {
        let dims = Dims::for_spec(&dataset.spec);
        let mut params = Self::zeros(dims);
        for inst in &dataset.instances {
            for (pos, &tok) in inst.target.iter().enumerate() {
                params.row_mut(inst.id, pos)[tok as usize] = margin;
            }
            params.row_mut(inst.id, inst.target.len())[dims.eos() as usize] = margin;
        }
        params
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn eos(&self) -> TokenId {
        self.dims.eos()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.logits
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn row(&self, id: usize, pos: usize) -> &[f64] {
        let o = self.dims.offset(id, pos);
        &self.logits[o..o + self.dims.symbols]
    }

    pub fn row_mut(&mut self, id: usize, pos: usize) -> &mut [f64] {
        let o = self.dims.offset(id, pos);
        let s = self.dims.symbols;
        &mut self.logits[o..o + s]
    }

    fn check_instance(&self, id: usize) -> Result<()> {
        if id >= self.dims.num_instances {
            return Err(Error::invalid(format!(
                "instance {id} out of range ({} instances)",
                self.dims.num_instances
            )));
        }
        Ok(())
    }

    fn check_tokens(&self, id: usize, tokens: &[TokenId]) -> Result<()> {
        self.check_instance(id)?;
        if tokens.len() > self.dims.positions {
            return Err(Error::invalid(format!(
                "sequence of {} tokens exceeds {} positions",
                tokens.len(),
                self.dims.positions
            )));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.dims.symbols) {
            return Err(Error::TokenOutOfRange {
                token: t,
                alphabet: self.dims.symbols,
            });
        }
        Ok(())
    }

    /// Samples one response. Stops at end-of-sequence or after every
    /// position has emitted. The reward is left at 0.
    pub fn sample(&self, id: usize, rng: &mut Rng) -> RolloutRecord {
        let eos = self.eos();
        let mut lp = vec![0.0; self.dims.symbols];
        let mut tokens = Vec::new();
        let mut logprobs = Vec::new();
        for pos in 0..self.dims.positions {
            log_softmax(self.row(id, pos), &mut lp);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = None;
            let mut last_support = 0;
            for (k, &l) in lp.iter().enumerate() {
                let p = l.exp();
                if p > 0.0 {
                    last_support = k;
                }
                acc += p;
                if u < acc {
                    pick = Some(k);
                    break;
                }
            }
            let k = pick.unwrap_or(last_support);
            tokens.push(k as TokenId);
            logprobs.push(lp[k]);
            if k as TokenId == eos {
                break;
            }
        }
        RolloutRecord {
            instance_id: id,
            tokens,
            logprobs,
            reward: 0.0,
        }
    }

    /// Per-token log-probabilities of `tokens` under these logits.
    pub fn logprob(&self, id: usize, tokens: &[TokenId]) -> Result<Vec<f64>> {
        self.check_tokens(id, tokens)?;
        let mut lp = vec![0.0; self.dims.symbols];
        Ok(tokens
            .iter()
            .enumerate()
            .map(|(pos, &t)| {
                log_softmax(self.row(id, pos), &mut lp);
                lp[t as usize]
            })
            .collect())
    }

    /// Mean categorical entropy over the first `length` positions.
    pub fn mean_entropy(&self, id: usize, length: usize) -> Result<f64> {
        self.check_instance(id)?;
        if length == 0 || length > self.dims.positions {
            return Err(Error::invalid(format!(
                "entropy length must be in [1, {}], got {length}",
                self.dims.positions
            )));
        }
        let total: f64 = (0..length).map(|pos| entropy(self.row(id, pos))).sum();
        Ok(total / length as f64)
    }

    /// Gradient of Σ_t log π(token_t) with respect to the logits.
    pub fn grad_logprob(&self, id: usize, tokens: &[TokenId]) -> Result<Gradient> {
        let mut grad = Gradient::zeros(self.dims);
        let ones = vec![1.0; tokens.len()];
        self.accumulate_score(id, tokens, &ones, &mut grad)?;
        Ok(grad)
    }

    /// Adds Σ_t weights[t]·∇ log π(token_t) into `grad`.
    pub fn accumulate_score(
        &self,
        id: usize,
        tokens: &[TokenId],
        weights: &[f64],
        grad: &mut Gradient,
    ) -> Result<()> {
        self.check_tokens(id, tokens)?;
        if grad.dims != self.dims {
            return Err(Error::Shape {
                expected: self.dims.tuple(),
                actual: grad.dims.tuple(),
            });
        }
        let mut lp = vec![0.0; self.dims.symbols];
        for (pos, (&t, &w)) in tokens.iter().zip(weights).enumerate() {
            if w == 0.0 {
                continue;
            }
            log_softmax(self.row(id, pos), &mut lp);
            let row = grad.row_mut(id, pos);
            for (g, &l) in row.iter_mut().zip(&lp) {
                *g -= w * l.exp();
            }
            row[t as usize] += w;
        }
        Ok(())
    }

    /// Argmax decoding (ties to the lowest symbol), stopping at end-of-sequence.
    pub fn greedy(&self, id: usize) -> Vec<TokenId> {
        let eos = self.eos();
        let mut out = Vec::new();
        for pos in 0..self.dims.positions {
            let row = self.row(id, pos);
            let mut best = 0;
            for (k, &x) in row.iter().enumerate().skip(1) {
                if x > row[best] {
                    best = k;
                }
            }
            out.push(best as TokenId);
            if best as TokenId == eos {
                break;
            }
        }
        out
    }

    /// Fraction of `ids` whose greedy decode passes the verifier.
    pub fn eval_accuracy(&self, dataset: &Dataset, ids: &[usize]) -> f64 {
        if ids.is_empty() {
            return 0.0;
        }
        let solved: f64 = ids
            .iter()
            .map(|&id| tasks::verify(dataset.instance(id), &self.greedy(id), &dataset.spec))
            .sum();
        solved / ids.len() as f64
    }

    pub fn to_text(&self) -> String {
        let d = self.dims;
        let mut out = String::new();
        let _ = writeln!(out, "{CHECKPOINT_HEADER}");
        let _ = writeln!(
            out,
            "# dims num_instances={} positions={} symbols={}",
            d.num_instances, d.positions, d.symbols
        );
        for id in 0..d.num_instances {
            for pos in 0..d.positions {
                let _ = write!(out, "{id} {pos}");
                for x in self.row(id, pos) {
                    let _ = write!(out, " {x:.16e}");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let c = textfmt::parse(text, CHECKPOINT_HEADER)?;
        let (line, kv) = textfmt::key_values(&c, "dims")?;
        let dims = Dims {
            num_instances: textfmt::field(&kv, line, "num_instances")?,
            positions: textfmt::field(&kv, line, "positions")?,
            symbols: textfmt::field(&kv, line, "symbols")?,
        };
        if dims.positions == 0 || dims.symbols < 3 {
            return Err(Error::format(line, "degenerate dims"));
        }
        let expected_rows = dims.num_instances * dims.positions;
        if c.rows.len() != expected_rows {
            return Err(Error::format(
                line,
                format!("expected {expected_rows} rows, found {}", c.rows.len()),
            ));
        }
        let mut logits = Vec::with_capacity(dims.len());
        for (k, (n, words)) in c.rows.iter().enumerate() {
            let (id, pos) = (k / dims.positions, k % dims.positions);
            if words.len() != dims.symbols + 2 {
                return Err(Error::format(
                    *n,
                    format!("expected {} fields, found {}", dims.symbols + 2, words.len()),
                ));
            }
            let got_id: usize = textfmt::parse_word(words[0], *n, "instance id")?;
            let got_pos: usize = textfmt::parse_word(words[1], *n, "position")?;
            if (got_id, got_pos) != (id, pos) {
                return Err(Error::format(
                    *n,
                    format!("expected row ({id}, {pos}), found ({got_id}, {got_pos})"),
                ));
            }
            for w in &words[2..] {
                let x: f64 = textfmt::parse_word(w, *n, "logit")?;
                if !x.is_finite() {
                    return Err(Error::format(*n, "non-finite logit"));
                }
                logits.push(x);
            }
        }
        Ok(Self { dims, logits })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        textfmt::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Checks the logits fit `spec` exactly.
    pub fn check_spec(&self, spec: &TaskSpec) -> Result<()> {
        let want = Dims::for_spec(spec);
        if want != self.dims {
            return Err(Error::Shape {
                expected: want.tuple(),
                actual: self.dims.tuple(),
            });
        }
        Ok(())
    }
}

/// Dense tensor with the same layout as [`PolicyParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    dims: Dims,
    values: Vec<f64>,
}

impl Gradient {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            values: vec![0.0; dims.len()],
        }
    }

    pub fn from_values(dims: Dims, values: Vec<f64>) -> Result<Self> {
        if values.len() != dims.len() {
            return Err(Error::invalid(format!(
                "expected {} values, got {}",
                dims.len(),
                values.len()
            )));
        }
        Ok(Self { dims, values })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, id: usize, pos: usize) -> &[f64] {
        let o = self.dims.offset(id, pos);
        &self.values[o..o + self.dims.symbols]
    }

    pub fn row_mut(&mut self, id: usize, pos: usize) -> &mut [f64] {
        let o = self.dims.offset(id, pos);
        let s = self.dims.symbols;
        &mut self.values[o..o + s]
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        self.values.iter_mut().for_each(|x| *x *= k);
    }

    pub fn add_scaled(&mut self, other: &Gradient, k: f64) -> Result<()> {
        if other.dims != self.dims {
            return Err(Error::Shape {
                expected: self.dims.tuple(),
                actual: other.dims.tuple(),
            });
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += k * b;
        }
        Ok(())
    }

    pub(crate) fn shape_error(&self, params: &PolicyParams) -> Option<Error> {
        (self.dims != params.dims).then(|| Error::Shape {
            expected: params.dims.tuple(),
            actual: self.dims.tuple(),
        })
    }
}
