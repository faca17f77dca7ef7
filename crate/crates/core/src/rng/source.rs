use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};
use serde::{Deserialize, Serialize};

use super::RngError;

/// Where uniform bits come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceKind {
    /// ChaCha20 keystream. Seeded from OS entropy unless a seed is given.
    Csprng { seed: Option<u64> },
    /// Uniform bit source limited to `bits_per_second`, standing in for a
    /// physical QRNG.
    QrngEmulated { bits_per_second: f64, seed: Option<u64> },
}

impl Default for SourceKind {
    fn default() -> Self {
        SourceKind::Csprng { seed: None }
    }
}

#[derive(Debug)]
enum Engine {
    Cipher(Box<ChaCha20Rng>),
    Qrng {
        rng: Box<ChaCha8Rng>,
        bits_per_second: f64,
        epoch: Instant,
        produced: u64,
    },
}

/// A stream of uniform random bytes.
#[derive(Debug)]
pub struct UniformSource {
    engine: Engine,
}

impl UniformSource {
    pub fn new(kind: SourceKind) -> Self {
        let engine = match kind {
            SourceKind::Csprng { seed: Some(s) } => Engine::Cipher(Box::new(ChaCha20Rng::seed_from_u64(s))),
            SourceKind::Csprng { seed: None } => Engine::Cipher(Box::new(ChaCha20Rng::from_os_rng())),
            SourceKind::QrngEmulated { bits_per_second, seed } => Engine::Qrng {
                rng: Box::new(match seed {
                    Some(s) => ChaCha8Rng::seed_from_u64(s),
                    None => ChaCha8Rng::from_os_rng(),
                }),
                bits_per_second,
                epoch: Instant::now(),
                produced: 0,
            },
        };
        UniformSource { engine }
    }

    /// ChaCha20 keyed directly with a 256-bit key (nonce and counter zero).
    pub fn csprng_from_key(key: [u8; 32]) -> Self {
        UniformSource { engine: Engine::Cipher(Box::new(ChaCha20Rng::from_seed(key))) }
    }

    /// Bits the source can hand out right now; unbounded for the cipher.
    pub fn available_bits(&self) -> u64 {
        match &self.engine {
            Engine::Cipher(_) => u64::MAX,
            Engine::Qrng { bits_per_second, epoch, produced, .. } => {
                let budget = (epoch.elapsed().as_secs_f64() * bits_per_second) as u64;
                budget.saturating_sub(*produced)
            }
        }
    }

    pub fn fill_bytes(&mut self, out: &mut [u8]) -> Result<(), RngError> {
        let requested = out.len() as u64 * 8;
        let available = self.available_bits();
        match &mut self.engine {
            Engine::Cipher(rng) => rng.fill_bytes(out),
            Engine::Qrng { rng, produced, .. } => {
                if requested > available {
                    return Err(RngError::SourceStall { requested, available });
                }
                *produced += requested;
                rng.fill_bytes(out);
            }
        }
        Ok(())
    }

    /// Like [`fill_bytes`](Self::fill_bytes), but waits for a rate-limited
    /// source to accrue enough bits instead of failing.
    pub fn fill_bytes_blocking(&mut self, out: &mut [u8]) {
        loop {
            match self.fill_bytes(out) {
                Ok(()) => return,
                Err(RngError::SourceStall { requested, available }) => {
                    let rate = match &self.engine {
                        Engine::Qrng { bits_per_second, .. } => *bits_per_second,
                        Engine::Cipher(_) => unreachable!("cipher never stalls"),
                    };
                    let wait = (requested - available) as f64 / rate;
                    std::thread::sleep(std::time::Duration::from_secs_f64(wait.max(1e-4)));
                }
                Err(_) => unreachable!("fill_bytes only stalls"),
            }
        }
    }

    /// `nbits` uniform bits, packed LSB-first; bits past `nbits` in the last
    /// byte are zero.
    pub fn produce_uniform(&mut self, nbits: usize) -> Result<Vec<u8>, RngError> {
        let mut out = vec![0u8; nbits.div_ceil(8)];
        self.fill_bytes(&mut out)?;
        if nbits % 8 != 0 {
            if let Some(last) = out.last_mut() {
                *last &= (1u8 << (nbits % 8)) - 1;
            }
        }
        Ok(out)
    }
}
