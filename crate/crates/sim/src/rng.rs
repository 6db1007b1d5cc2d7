//! Counter-based SplitMix64 stream with Box–Muller normals.
//!
//! Draw `k` of stream `(seed, stream)` is `mix(key + (k + 1) * GAMMA)` with
//! `key = mix(seed ^ (stream * STREAM_SALT))`, so any implementation with the
//! same constants reproduces the same numbers.

pub const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
pub const STREAM_SALT: u64 = 0xD1B5_4A32_D192_ED03;

/// The SplitMix64 finaliser.
pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterRng {
    key: u64,
    counter: u64,
    spare: Option<f64>,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            key: mix(seed ^ stream.wrapping_mul(STREAM_SALT)),
            counter: 0,
            spare: None,
        }
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        mix(self.key.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    /// Uniform on `[0, 1)` with 53 bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal; pairs come from one Box–Muller transform, cosine first.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn normals<const N: usize>(&mut self) -> [f64; N] {
        std::array::from_fn(|_| self.normal())
    }
}
