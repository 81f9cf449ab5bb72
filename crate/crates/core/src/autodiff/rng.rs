use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use super::Tensor;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based random stream: output `i` is a pure function of `(seed, i)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Independent child stream keyed by `tag`; does not advance `self`.
    pub fn fork(&self, tag: u64) -> Self {
        Self::new(mix(self.seed ^ mix(tag.wrapping_add(GOLDEN))))
    }

    /// Child stream keyed by a label, e.g. `"init"` or `"shuffle"`.
    pub fn fork_named(&self, label: &str) -> Self {
        let tag = label
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325_u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3));
        self.fork(tag)
    }

    fn draw(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in the open interval (0, 1).
    pub fn unit_open(&mut self) -> f64 {
        ((self.draw() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    }

    /// Uniform in the open interval (low, high).
    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.unit_open()
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let z: f64 = StandardNormal.sample(self);
        mean + std * z
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.unit_open() * n as f64) as usize % n.max(1)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        (self.draw() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.draw()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let bytes = self.draw().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

/// Tensor of i.i.d. uniform samples strictly inside (low, high).
pub fn uniform_sample(rng: &mut RngStream, low: f64, high: f64, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform(low, high)).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

pub fn normal_sample(rng: &mut RngStream, mean: f64, std: f64, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.normal(mean, std)).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}
