//! Synthetic exact-match tasks and their binary verifier.
//!
//! Each instance asks the policy to emit a fixed target token sequence
//! followed by the end-of-sequence marker. The marker is the reserved id
//! `vocab_size`, so responses are drawn over `vocab_size + 1` symbols.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationErrors};
use crate::rng::{self, Purpose};
use crate::textfmt;

pub type TokenId = u32;

const DATASET_HEADER: &str = "dopr-dataset v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub num_instances: usize,
    /// Number of ordinary tokens; id `vocab_size` is end-of-sequence.
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            num_instances: 64,
            vocab_size: 8,
            min_len: 2,
            max_len: 5,
            seed: 1,
        }
    }
}

impl TaskSpec {
    pub fn collect_issues(&self, prefix: &str, issues: &mut ValidationErrors) {
        if self.num_instances == 0 {
            issues.push(format!("{prefix}num_instances"), "must be positive");
        }
        if self.vocab_size < 2 {
            issues.push(
                format!("{prefix}vocab_size"),
                format!("must be at least 2, got {}", self.vocab_size),
            );
        }
        if self.vocab_size >= TokenId::MAX as usize {
            issues.push(format!("{prefix}vocab_size"), "too large");
        }
        if self.min_len == 0 {
            issues.push(format!("{prefix}min_len"), "must be positive");
        }
        if self.min_len > self.max_len {
            issues.push(
                format!("{prefix}min_len"),
                format!(
                    "min_len {} exceeds max_len {}",
                    self.min_len, self.max_len
                ),
            );
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut issues = ValidationErrors::default();
        self.collect_issues("", &mut issues);
        issues.into_result()
    }

    pub fn eos(&self) -> TokenId {
        self.vocab_size as TokenId
    }

    /// Symbols the policy can emit, end-of-sequence included.
    pub fn alphabet(&self) -> usize {
        self.vocab_size + 1
    }

    /// Longest response the generator may emit (`max_len` tokens plus EOS).
    pub fn max_response_len(&self) -> usize {
        self.max_len + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub id: usize,
    pub target: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub spec: TaskSpec,
    pub instances: Vec<Instance>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instance(&self, id: usize) -> &Instance {
        &self.instances[id]
    }

    pub fn verify(&self, id: usize, response: &[TokenId]) -> f64 {
        verify(&self.instances[id], response, &self.spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        textfmt::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let s = &self.spec;
        let mut out = String::new();
        let _ = writeln!(out, "{DATASET_HEADER}");
        let _ = writeln!(
            out,
            "# spec num_instances={} vocab_size={} min_len={} max_len={} seed={}",
            s.num_instances, s.vocab_size, s.min_len, s.max_len, s.seed
        );
        for inst in &self.instances {
            let _ = write!(out, "{}", inst.id);
            for t in &inst.target {
                let _ = write!(out, " {t}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let container = textfmt::parse(text, DATASET_HEADER)?;
        let (spec_line, kv) = textfmt::key_values(&container, "spec")?;
        let spec = TaskSpec {
            num_instances: textfmt::field(&kv, spec_line, "num_instances")?,
            vocab_size: textfmt::field(&kv, spec_line, "vocab_size")?,
            min_len: textfmt::field(&kv, spec_line, "min_len")?,
            max_len: textfmt::field(&kv, spec_line, "max_len")?,
            seed: textfmt::field(&kv, spec_line, "seed")?,
        };
        spec.validate()
            .map_err(|e| Error::format(spec_line, e.to_string()))?;

        let mut instances = Vec::with_capacity(container.rows.len());
        for (line, words) in &container.rows {
            let line = *line;
            let id: usize = textfmt::parse_word(words[0], line, "instance id")?;
            if id != instances.len() {
                return Err(Error::format(
                    line,
                    format!("expected instance id {}, found {id}", instances.len()),
                ));
            }
            let target = words[1..]
                .iter()
                .map(|w| {
                    let tok: TokenId = textfmt::parse_word(w, line, "token")?;
                    if tok as usize >= spec.vocab_size {
                        Err(Error::format(
                            line,
                            format!(
                                "token {tok} out of range (vocab_size {}, id {} is end-of-sequence)",
                                spec.vocab_size, spec.vocab_size
                            ),
                        ))
                    } else {
                        Ok(tok)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            if target.len() < spec.min_len || target.len() > spec.max_len {
                return Err(Error::format(
                    line,
                    format!(
                        "target length {} outside [{}, {}]",
                        target.len(),
                        spec.min_len,
                        spec.max_len
                    ),
                ));
            }
            instances.push(Instance { id, target });
        }
        if instances.len() != spec.num_instances {
            return Err(Error::format(
                spec_line,
                format!(
                    "spec declares {} instances, file holds {}",
                    spec.num_instances,
                    instances.len()
                ),
            ));
        }
        Ok(Dataset { spec, instances })
    }
}

/// Draws the dataset for `spec`. Pure function of the spec.
pub fn generate_dataset(spec: &TaskSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, Purpose::Dataset, 0, 0, 0);
    let instances = (0..spec.num_instances)
        .map(|id| {
            let len = rng.random_range(spec.min_len..=spec.max_len);
            let target = (0..len)
                .map(|_| rng.random_range(0..spec.vocab_size) as TokenId)
                .collect();
            Instance { id, target }
        })
        .collect();
    Ok(Dataset {
        spec: *spec,
        instances,
    })
}

/// Binary exact-match reward.
///
/// The response is read up to its first end-of-sequence marker. It scores 1
/// only when the marker appears within `max_len + 1` emitted tokens and the
/// tokens before it equal the target.
pub fn verify(instance: &Instance, response: &[TokenId], spec: &TaskSpec) -> f64 {
    let eos = spec.eos();
    let Some(end) = response.iter().position(|&t| t == eos) else {
        return 0.0;
    };
    if end + 1 > spec.max_response_len() {
        return 0.0;
    }
    if response[..end] == instance.target[..] {
        1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, v: usize, lo: usize, hi: usize, seed: u64) -> TaskSpec {
        TaskSpec {
            num_instances: n,
            vocab_size: v,
            min_len: lo,
            max_len: hi,
            seed,
        }
    }

    #[test]
    fn single_instance_respects_bounds() {
        let d = generate_dataset(&spec(1, 4, 3, 3, 7)).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.instances[0].target.len(), 3);
        assert!(d.instances[0].target.iter().all(|&t| t < 4));
    }

    #[test]
    fn generation_is_deterministic() {
        let s = spec(16, 8, 2, 6, 1);
        assert_eq!(generate_dataset(&s).unwrap(), generate_dataset(&s).unwrap());
        let other = generate_dataset(&TaskSpec { seed: 2, ..s }).unwrap();
        assert_ne!(generate_dataset(&s).unwrap(), other);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let err = generate_dataset(&spec(4, 8, 5, 3, 0)).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("min_len"));
        assert!(generate_dataset(&spec(4, 1, 1, 3, 0)).is_err());
        assert!(generate_dataset(&spec(0, 4, 1, 3, 0)).is_err());
    }

    #[test]
    fn verifier_examples() {
        let s = spec(1, 3, 1, 3, 0);
        let eos = s.eos();
        let inst = Instance {
            id: 0,
            target: vec![2, 0, 1],
        };
        assert_eq!(verify(&inst, &[2, 0, 1, eos], &s), 1.0);
        assert_eq!(verify(&inst, &[2, 0, eos], &s), 0.0);
        assert_eq!(verify(&inst, &[2, 0, 1], &s), 0.0);
        // Tokens after the first marker are ignored.
        assert_eq!(verify(&inst, &[2, 0, 1, eos, 1], &s), 1.0);
        assert_eq!(verify(&inst, &[], &s), 0.0);
    }

    /// Enumerates every response over V+1 symbols up to length max_len+1 and
    /// checks the verifier against direct decoding.
    #[test]
    fn verifier_is_sound_by_enumeration() {
        let s = spec(1, 3, 1, 3, 0);
        let eos = s.eos();
        let alphabet = s.alphabet() as u32;
        let targets: Vec<Vec<TokenId>> = vec![vec![0], vec![2, 1], vec![1, 1, 1], vec![0, 2, 1]];
        for target in targets {
            let inst = Instance { id: 0, target };
            for len in 0..=s.max_response_len() {
                let total = alphabet.pow(len as u32);
                for code in 0..total {
                    let mut c = code;
                    let resp: Vec<TokenId> = (0..len)
                        .map(|_| {
                            let t = c % alphabet;
                            c /= alphabet;
                            t
                        })
                        .collect();
                    let decoded = resp.iter().position(|&t| t == eos).map(|p| &resp[..p]);
                    let expected = matches!(decoded, Some(d) if d == &inst.target[..]);
                    assert_eq!(verify(&inst, &resp, &s) == 1.0, expected, "{resp:?}");
                }
            }
        }
    }

    #[test]
    fn text_round_trip_and_errors() {
        let d = generate_dataset(&spec(5, 4, 1, 3, 9)).unwrap();
        let text = d.to_text();
        assert!(text.starts_with("dopr-dataset v1\n# spec num_instances=5 vocab_size=4"));
        assert_eq!(Dataset::from_text(&text).unwrap(), d);

        assert!(matches!(Dataset::from_text(""), Err(Error::Format { .. })));
        // Token 5 >= V+1 for V = 4.
        let bad = "dopr-dataset v1\n# spec num_instances=1 vocab_size=4 min_len=1 max_len=3 seed=0\n0 1 5\n";
        match Dataset::from_text(bad) {
            Err(Error::Format { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("token 5"));
            }
            other => panic!("unexpected {other:?}"),
        }
        // The end-of-sequence id itself is not a valid target token either.
        let eos = "dopr-dataset v1\n# spec num_instances=1 vocab_size=4 min_len=1 max_len=3 seed=0\n0 4\n";
        assert!(Dataset::from_text(eos).is_err());
        let short = "dopr-dataset v1\n# spec num_instances=2 vocab_size=4 min_len=1 max_len=3 seed=0\n0 1\n";
        assert!(Dataset::from_text(short).is_err());
    }
}
