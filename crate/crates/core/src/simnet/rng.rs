use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::SimError;

/// Named random substreams. Each stream is a ChaCha8 generator keyed by the
/// master seed and a distinct stream id, so consumers never perturb each
/// other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Loss,
    Delays,
    ScannerPool,
    ClientBehavior,
    Spoof,
    Consensus,
    Ports,
}

impl Stream {
    pub const ALL: [Stream; 7] = [
        Stream::Loss,
        Stream::Delays,
        Stream::ScannerPool,
        Stream::ClientBehavior,
        Stream::Spoof,
        Stream::Consensus,
        Stream::Ports,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stream::Loss => "loss",
            Stream::Delays => "delays",
            Stream::ScannerPool => "scanner-pool",
            Stream::ClientBehavior => "client-behavior",
            Stream::Spoof => "spoof",
            Stream::Consensus => "consensus",
            Stream::Ports => "ports",
        }
    }

    pub fn from_name(name: &str) -> Option<Stream> {
        Stream::ALL.into_iter().find(|s| s.name() == name)
    }

    fn index(self) -> usize {
        Stream::ALL.iter().position(|s| *s == self).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DrawKind {
    /// Uniform in `[0, 1)`.
    Unit,
    Bernoulli(f64),
    /// Uniform integer in `[lo, hi]`.
    IntInclusive(u64, u64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Draw {
    Float(f64),
    Bool(bool),
    Int(u64),
}

#[derive(Debug, Clone)]
pub struct RngStreams {
    seed: u64,
    streams: Vec<ChaCha8Rng>,
}

impl RngStreams {
    pub fn new(seed: u64) -> RngStreams {
        let streams = Stream::ALL
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64 + 1);
                rng
            })
            .collect();
        RngStreams { seed, streams }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng(&mut self, stream: Stream) -> &mut ChaCha8Rng {
        &mut self.streams[stream.index()]
    }

    pub fn unit(&mut self, stream: Stream) -> f64 {
        self.rng(stream).random::<f64>()
    }

    pub fn bernoulli(&mut self, stream: Stream, p: f64) -> bool {
        if p <= 0.0 {
            return false;
        }
        if p >= 1.0 {
            return true;
        }
        self.unit(stream) < p
    }

    pub fn int_inclusive(&mut self, stream: Stream, lo: u64, hi: u64) -> u64 {
        assert!(lo <= hi, "empty integer range [{lo}, {hi}]");
        self.rng(stream).random_range(lo..=hi)
    }

    /// Draw by stream name; unknown names are an error.
    pub fn draw(&mut self, stream: &str, kind: DrawKind) -> Result<Draw, SimError> {
        let stream = Stream::from_name(stream).ok_or_else(|| SimError::UnknownStream(stream.to_string()))?;
        Ok(match kind {
            DrawKind::Unit => Draw::Float(self.unit(stream)),
            DrawKind::Bernoulli(p) => Draw::Bool(self.bernoulli(stream, p)),
            DrawKind::IntInclusive(lo, hi) => Draw::Int(self.int_inclusive(stream, lo, hi)),
        })
    }
}
