use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Seedable, platform-independent random stream (ChaCha8).
///
/// Independent sub-streams are derived with [`Rng::stream`], which keys the
/// ChaCha stream id rather than consuming the parent's state.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

/// Serialized position of a stream: seed, stream id and word offset.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RngState {
    seed: u64,
    stream: u64,
    word_pos: String,
}

// Equal seed, stream and position.
impl PartialEq for Rng {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed && self.inner == other.inner
    }
}

impl Serialize for Rng {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RngState { seed: self.seed, stream: self.inner.get_stream(), word_pos: self.inner.get_word_pos().to_string() }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rng {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let st = RngState::deserialize(d)?;
        let pos: u128 = st.word_pos.parse().map_err(serde::de::Error::custom)?;
        let mut rng = Rng::stream(st.seed, st.stream);
        rng.inner.set_word_pos(pos);
        Ok(rng)
    }
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Independent stream `id` for the same seed.
    pub fn stream(seed: u64, id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(id);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn normal_vec(&mut self, n: usize, sd: f64) -> Vec<f64> {
        (0..n).map(|_| sd * self.normal()).collect()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Index drawn proportionally to non-negative `weights`.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform() * total;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                return i;
            }
            u -= w;
        }
        // floating leftovers land on the last positive weight
        weights.iter().rposition(|w| *w > 0.0).unwrap_or(weights.len() - 1)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
