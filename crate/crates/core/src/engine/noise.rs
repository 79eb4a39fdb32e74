use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::converter::NoiseSource;

/// Measurement noise for one agent: an independent ChaCha stream per output
/// channel, keyed on `(seed, agent, channel)`.
#[derive(Debug, Clone)]
pub struct AgentNoise {
    streams: Vec<ChaCha8Rng>,
}

impl AgentNoise {
    pub fn new(seed: u64, agent: usize, channels: usize) -> Self {
        let streams = (0..channels)
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(((agent as u64) << 8) | c as u64);
                rng
            })
            .collect();
        Self { streams }
    }
}

impl NoiseSource for AgentNoise {
    fn standard_normal(&mut self, channel: usize) -> f64 {
        StandardNormal.sample(&mut self.streams[channel])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_independent_of_agent_count() {
        let mut a = AgentNoise::new(3, 1, 4);
        let mut b = AgentNoise::new(3, 1, 4);
        let mut other = AgentNoise::new(3, 2, 4);
        for _ in 0..10 {
            let x = a.standard_normal(2);
            assert_eq!(x, b.standard_normal(2));
            assert_ne!(x, other.standard_normal(2));
        }
    }
}
