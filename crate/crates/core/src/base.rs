//! The driving probability system (Ω, ℙ, θ).
//!
//! Ω is realized either as one-sided symbol streams (i.i.d. or Markov) with θ the
//! left shift, or as the circle with θ an irrational rotation. A symbol state is
//! stored as `(seed, stream, offset)`: every read is addressed through a
//! counter-based ChaCha generator, so θ is `offset += 1` and any position can be
//! read without sequential state.

use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::numeric::{frac, mean_stderr};

const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKind {
    IidSymbols,
    MarkovSymbols,
    Rotation,
}

/// Parameters of the driving system. Serialized as a flat JSON object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseSystemSpec {
    pub kind: BaseKind,
    #[serde(default)]
    pub alphabet: usize,
    #[serde(default)]
    pub weights: Vec<f64>,
    #[serde(default)]
    pub transition: Vec<Vec<f64>>,
    #[serde(default)]
    pub rotation_number: f64,
    #[serde(default)]
    pub seed: u64,
}

impl BaseSystemSpec {
    /// i.i.d. symbols with the given weights.
    pub fn iid(weights: Vec<f64>, seed: u64) -> Self {
        Self {
            kind: BaseKind::IidSymbols,
            alphabet: weights.len(),
            weights,
            transition: Vec::new(),
            rotation_number: 0.0,
            seed,
        }
    }

    /// Fair coin over `{0, 1}`.
    pub fn bernoulli_half(seed: u64) -> Self {
        Self::iid(vec![0.5, 0.5], seed)
    }

    pub fn markov(transition: Vec<Vec<f64>>, seed: u64) -> Self {
        Self {
            kind: BaseKind::MarkovSymbols,
            alphabet: transition.len(),
            weights: Vec::new(),
            transition,
            rotation_number: 0.0,
            seed,
        }
    }

    /// Rotation by `rotation_number`; symbols are `floor(alphabet * angle)`.
    pub fn rotation(rotation_number: f64, seed: u64) -> Self {
        Self {
            kind: BaseKind::Rotation,
            alphabet: 2,
            weights: Vec::new(),
            transition: Vec::new(),
            rotation_number,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            BaseKind::IidSymbols => {
                if self.alphabet == 0 {
                    return Err(Error::validation("alphabet", "must be at least 1"));
                }
                if self.weights.len() != self.alphabet {
                    return Err(Error::validation(
                        "weights",
                        format!("expected {} entries, got {}", self.alphabet, self.weights.len()),
                    ));
                }
                check_distribution("weights", &self.weights)?;
            }
            BaseKind::MarkovSymbols => {
                let k = self.transition.len();
                if k == 0 || self.alphabet != k {
                    return Err(Error::validation(
                        "transition",
                        format!("expected a {0}x{0} matrix", self.alphabet.max(1)),
                    ));
                }
                for (i, row) in self.transition.iter().enumerate() {
                    if row.len() != k {
                        return Err(Error::validation(
                            "transition",
                            format!("row {i} has {} entries, expected {k}", row.len()),
                        ));
                    }
                    check_distribution("transition", row)?;
                }
                if !irreducible(&self.transition) {
                    return Err(Error::validation("transition", "chain is not irreducible"));
                }
            }
            BaseKind::Rotation => {
                if !(self.rotation_number > 0.0 && self.rotation_number < 1.0) {
                    return Err(Error::validation("rotation_number", "must lie in (0, 1)"));
                }
                if self.alphabet == 0 {
                    return Err(Error::validation("alphabet", "must be at least 1"));
                }
            }
        }
        Ok(())
    }
}

fn check_distribution(field: &str, w: &[f64]) -> Result<()> {
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::validation(field, "entries must be finite and nonnegative"));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::validation(field, format!("entries sum to {s}, expected 1")));
    }
    Ok(())
}

/// Strong connectivity of the positive-entry graph, by reachability from every state.
fn irreducible(p: &[Vec<f64>]) -> bool {
    let k = p.len();
    (0..k).all(|start| {
        let mut seen = vec![false; k];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            for (j, &pij) in p[i].iter().enumerate() {
                if pij > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().all(|&s| s)
    })
}

/// Stationary law of an irreducible chain by power iteration on the lazy chain.
fn stationary(p: &[Vec<f64>]) -> Vec<f64> {
    let k = p.len();
    let mut pi = vec![1.0 / k as f64; k];
    for _ in 0..100_000 {
        let mut next = vec![0.0; k];
        for i in 0..k {
            for j in 0..k {
                next[j] += pi[i] * 0.5 * (p[i][j] + if i == j { 1.0 } else { 0.0 });
            }
        }
        let delta: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if delta < 1e-16 {
            break;
        }
    }
    let s: f64 = pi.iter().sum();
    pi.iter().map(|v| v / s).collect()
}

fn cdf(w: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    w.iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

fn invert_cdf(cdf: &[f64], u: f64) -> u32 {
    cdf.iter()
        .position(|&c| u < c)
        .unwrap_or(cdf.len() - 1) as u32
}

/// Uniform in `[0,1)` at `(seed, stream, position)`.
pub(crate) fn counter_uniform(seed: u64, stream: u64, position: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(2 * position as u128);
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[derive(Debug)]
struct SymbolSource {
    seed: u64,
    alphabet: usize,
    kind: SourceKind,
}

#[derive(Debug)]
enum SourceKind {
    Iid { cdf: Vec<f64> },
    Markov { initial: Vec<f64>, rows: Vec<Vec<f64>> },
}

impl SymbolSource {
    fn from_spec(spec: &BaseSystemSpec) -> Self {
        let kind = match spec.kind {
            BaseKind::IidSymbols => SourceKind::Iid {
                cdf: cdf(&spec.weights),
            },
            BaseKind::MarkovSymbols => SourceKind::Markov {
                initial: cdf(&stationary(&spec.transition)),
                rows: spec.transition.iter().map(|r| cdf(r)).collect(),
            },
            BaseKind::Rotation => unreachable!("rotation has no symbol source"),
        };
        Self {
            seed: spec.seed,
            alphabet: spec.alphabet,
            kind,
        }
    }

    /// Stream positions `[start, start + len)`.
    fn read_range(&self, stream: u64, start: u64, len: usize) -> (Vec<u32>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let next_u = |rng: &mut ChaCha8Rng| (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        match &self.kind {
            SourceKind::Iid { cdf } => {
                rng.set_word_pos(2 * start as u128);
                let us: Vec<f64> = (0..len).map(|_| next_u(&mut rng)).collect();
                (us.iter().map(|&u| invert_cdf(cdf, u)).collect(), us)
            }
            SourceKind::Markov { initial, rows } => {
                // Markov reads need the whole prefix.
                let total = start as usize + len;
                let mut syms = Vec::with_capacity(total);
                let mut us = Vec::with_capacity(total);
                for pos in 0..total {
                    let u = next_u(&mut rng);
                    let s = if pos == 0 {
                        invert_cdf(initial, u)
                    } else {
                        invert_cdf(&rows[syms[pos - 1] as usize], u)
                    };
                    syms.push(s);
                    us.push(u);
                }
                (syms[start as usize..].to_vec(), us[start as usize..].to_vec())
            }
        }
    }
}

/// A point ω of the base space.
#[derive(Clone, Debug)]
pub enum BaseState {
    Symbols {
        source: Arc<SymbolSourceHandle>,
        stream: u64,
        offset: u64,
    },
    Rotation {
        angle: f64,
        rotation_number: f64,
        alphabet: usize,
    },
}

/// Opaque shared handle to a symbol generator.
#[derive(Debug)]
pub struct SymbolSourceHandle(SymbolSource);

impl PartialEq for BaseState {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (
                BaseState::Symbols { source: a, stream: sa, offset: oa },
                BaseState::Symbols { source: b, stream: sb, offset: ob },
            ) => {
                (Arc::ptr_eq(a, b) || (a.0.seed == b.0.seed && a.0.alphabet == b.0.alphabet))
                    && sa == sb
                    && oa == ob
            }
            (
                BaseState::Rotation { angle: a, rotation_number: ra, .. },
                BaseState::Rotation { angle: b, rotation_number: rb, .. },
            ) => a == b && ra == rb,
            _ => false,
        }
    }
}

impl BaseState {
    /// Symbol at position `k` of this state's sequence.
    pub fn symbol(&self, k: u64) -> u32 {
        match self {
            BaseState::Symbols { source, stream, offset } => source.0.read_range(*stream, offset + k, 1).0[0],
            BaseState::Rotation { .. } => {
                let a = self.uniform(k);
                ((a * self.alphabet() as f64) as usize).min(self.alphabet() - 1) as u32
            }
        }
    }

    /// The uniform variate underlying position `k` (the angle of θ^k ω for rotations).
    pub fn uniform(&self, k: u64) -> f64 {
        match self {
            BaseState::Symbols { source, stream, offset } => source.0.read_range(*stream, offset + k, 1).1[0],
            BaseState::Rotation { angle, rotation_number, .. } => {
                let mut a = *angle;
                for _ in 0..k {
                    a = rotate(a, *rotation_number);
                }
                a
            }
        }
    }

    pub fn alphabet(&self) -> usize {
        match self {
            BaseState::Symbols { source, .. } => source.0.alphabet,
            BaseState::Rotation { alphabet, .. } => *alphabet,
        }
    }

    /// Shift offset for symbol states; angle for rotations.
    pub fn position(&self) -> f64 {
        match self {
            BaseState::Symbols { offset, .. } => *offset as f64,
            BaseState::Rotation { angle, .. } => *angle,
        }
    }

    pub fn stream(&self) -> Option<u64> {
        match self {
            BaseState::Symbols { stream, .. } => Some(*stream),
            BaseState::Rotation { .. } => None,
        }
    }
}

#[inline]
fn rotate(angle: f64, by: f64) -> f64 {
    frac(angle + by)
}

/// Draws ω ~ ℙ as a deterministic function of `(spec.seed, stream_index)`.
pub fn sample_omega(spec: &BaseSystemSpec, stream_index: u64) -> Result<BaseState> {
    spec.validate()?;
    Ok(sample_unchecked(spec, stream_index, None))
}

fn sample_unchecked(spec: &BaseSystemSpec, stream_index: u64, source: Option<&Arc<SymbolSourceHandle>>) -> BaseState {
    match spec.kind {
        BaseKind::Rotation => BaseState::Rotation {
            angle: counter_uniform(spec.seed, stream_index, 0),
            rotation_number: spec.rotation_number,
            alphabet: spec.alphabet,
        },
        _ => BaseState::Symbols {
            source: source
                .cloned()
                .unwrap_or_else(|| Arc::new(SymbolSourceHandle(SymbolSource::from_spec(spec)))),
            stream: stream_index,
            offset: 0,
        },
    }
}

/// Reusable sampler that shares one symbol source across draws.
#[derive(Clone, Debug)]
pub struct OmegaSampler {
    spec: BaseSystemSpec,
    source: Option<Arc<SymbolSourceHandle>>,
}

impl OmegaSampler {
    pub fn new(spec: &BaseSystemSpec) -> Result<Self> {
        spec.validate()?;
        let source = match spec.kind {
            BaseKind::Rotation => None,
            _ => Some(Arc::new(SymbolSourceHandle(SymbolSource::from_spec(spec)))),
        };
        Ok(Self {
            spec: spec.clone(),
            source,
        })
    }

    pub fn sample(&self, stream_index: u64) -> BaseState {
        sample_unchecked(&self.spec, stream_index, self.source.as_ref())
    }

    pub fn spec(&self) -> &BaseSystemSpec {
        &self.spec
    }
}

/// θ: shift by one symbol, or rotate by the rotation number.
pub fn advance(omega: &BaseState) -> BaseState {
    match omega {
        BaseState::Symbols { source, stream, offset } => BaseState::Symbols {
            source: Arc::clone(source),
            stream: *stream,
            offset: offset + 1,
        },
        BaseState::Rotation { angle, rotation_number, alphabet } => BaseState::Rotation {
            angle: rotate(*angle, *rotation_number),
            rotation_number: *rotation_number,
            alphabet: *alphabet,
        },
    }
}

/// θ^k ω.
pub fn advance_by(omega: &BaseState, k: usize) -> BaseState {
    (0..k).fold(omega.clone(), |w, _| advance(&w))
}

/// A finite θ-orbit `[ω, θω, …, θ^{L-1}ω]` with cached symbol and uniform reads.
#[derive(Clone, Debug)]
pub struct BasePath {
    states: Vec<BaseState>,
    // Reads of stream positions offset(ω) + 0 .. offset(ω) + L + lookahead.
    symbols: Vec<u32>,
    uniforms: Vec<f64>,
}

/// Number of symbols past the last state that stay cached.
const LOOKAHEAD: usize = 8;

impl BasePath {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, j: usize) -> &BaseState {
        &self.states[j]
    }

    pub fn states(&self) -> &[BaseState] {
        &self.states
    }

    /// Symbol `k` of θ^j ω.
    pub fn symbol(&self, j: usize, k: usize) -> u32 {
        match self.symbols.get(j + k) {
            Some(s) => *s,
            None => self.states[0].symbol((j + k) as u64),
        }
    }

    /// Uniform variate `k` of θ^j ω.
    pub fn uniform(&self, j: usize, k: usize) -> f64 {
        match self.uniforms.get(j + k) {
            Some(u) => *u,
            None => self.states[0].uniform((j + k) as u64),
        }
    }

    /// The path started at θ^j ω, of length `len`.
    pub fn suffix(&self, j: usize, len: usize) -> Result<BasePath> {
        make_path(&self.states[j], len)
    }

    pub fn view(&self, j: usize) -> PathView<'_> {
        PathView { path: self, j }
    }
}

/// θ^j ω seen through a cached path; reads go to the cache when possible.
#[derive(Clone, Copy, Debug)]
pub struct PathView<'a> {
    path: &'a BasePath,
    j: usize,
}

impl<'a> PathView<'a> {
    pub fn symbol(&self, k: usize) -> u32 {
        self.path.symbol(self.j, k)
    }

    pub fn uniform(&self, k: usize) -> f64 {
        self.path.uniform(self.j, k)
    }

    /// θ applied to the viewed state.
    pub fn next(&self) -> PathView<'a> {
        PathView {
            path: self.path,
            j: self.j + 1,
        }
    }

    pub fn time(&self) -> usize {
        self.j
    }

    pub fn alphabet(&self) -> usize {
        self.path.states[0].alphabet()
    }
}

/// Builds `[ω, θω, …, θ^{L-1}ω]`.
pub fn make_path(omega: &BaseState, len: usize) -> Result<BasePath> {
    if len == 0 {
        return Err(Error::validation("L", "path length must be at least 1"));
    }
    let mut states = Vec::with_capacity(len);
    states.push(omega.clone());
    for j in 1..len {
        states.push(advance(&states[j - 1]));
    }
    let (symbols, uniforms) = match omega {
        BaseState::Symbols { source, stream, offset } => source.0.read_range(*stream, *offset, len + LOOKAHEAD),
        BaseState::Rotation {
            rotation_number,
            alphabet,
            ..
        } => {
            let mut us: Vec<f64> = states.iter().map(BaseState::position).collect();
            for _ in 0..LOOKAHEAD {
                let last = us[us.len() - 1];
                us.push(rotate(last, *rotation_number));
            }
            let syms = us
                .iter()
                .map(|u| ((u * *alphabet as f64) as usize).min(alphabet - 1) as u32)
                .collect();
            (syms, us)
        }
    };
    Ok(BasePath {
        states,
        symbols,
        uniforms,
    })
}

/// Monte Carlo estimate of `∫ g dℙ` from `m` independent draws.
///
/// Returns `(mean, standard error)`. Draw `i` uses stream index `i`, so the result
/// is a pure function of `(spec, m)`.
pub fn expectation<G>(g: G, spec: &BaseSystemSpec, m: usize) -> Result<(f64, f64)>
where
    G: Fn(&BaseState) -> f64 + Sync + Send,
{
    if m < 2 {
        return Err(Error::validation("m", "need at least 2 samples"));
    }
    let sampler = OmegaSampler::new(spec)?;
    let values = exec::par_map_range(m, |i| g(&sampler.sample(i as u64)));
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "expectation",
            index: i as u64,
        });
    }
    Ok(mean_stderr(&values))
}
