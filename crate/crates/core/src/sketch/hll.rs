use crate::error::{ensure_compatible, FormatErrorKind, SketchError};
use crate::hash::HashConfig;
use crate::kernels::KernelDispatch;

/// HyperLogLog register array, one byte per register.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HllSketch {
    config: HashConfig,
    registers: Vec<u8>,
}

fn alpha(m: usize) -> f64 {
    match m {
        16 => 0.673,
        32 => 0.697,
        64 => 0.709,
        _ => 0.7213 / (1.0 + 1.079 / m as f64),
    }
}

impl HllSketch {
    pub fn new(config: HashConfig) -> Self {
        Self {
            config,
            registers: vec![0; config.num_registers()],
        }
    }

    pub fn from_registers(config: HashConfig, registers: Vec<u8>) -> Result<Self, FormatErrorKind> {
        if registers.len() != config.num_registers() {
            return Err(FormatErrorKind::Invalid(format!(
                "expected {} registers, got {}",
                config.num_registers(),
                registers.len()
            )));
        }
        let max = config.max_rank();
        if let Some(&value) = registers.iter().find(|&&r| r > max) {
            return Err(FormatErrorKind::RegisterRange { value, max });
        }
        Ok(Self { config, registers })
    }

    pub fn config(&self) -> &HashConfig {
        &self.config
    }

    pub fn registers(&self) -> &[u8] {
        &self.registers
    }

    pub fn is_empty(&self) -> bool {
        self.registers.iter().all(|&r| r == 0)
    }

    pub fn insert(&mut self, item: u64) {
        let p = self.config.precision() as u32;
        let h = self.config.hll_hash(item);
        let index = (h >> (64 - p)) as usize;
        let rank = ((h << p).leading_zeros() + 1).min(self.config.max_rank() as u32) as u8;
        let reg = &mut self.registers[index];
        if *reg < rank {
            *reg = rank;
        }
    }

    /// Per-register maximum: the sketch of the union.
    pub fn merge(&self, other: &HllSketch) -> Result<HllSketch, SketchError> {
        let mut out = self.clone();
        out.merge_assign(other)?;
        Ok(out)
    }

    pub fn merge_assign(&mut self, other: &HllSketch) -> Result<(), SketchError> {
        ensure_compatible(&self.config, &other.config)?;
        KernelDispatch::active()
            .max_assign_u8(&mut self.registers, &other.registers)
            .expect("register counts fixed by config");
        Ok(())
    }

    /// Harmonic-mean estimate with linear counting below `2.5 m`.
    ///
    /// Linear-counting results are clamped to `2.5 m`, the switch-over
    /// point. No large-range correction over 64-bit hashes.
    pub fn estimate(&self) -> f64 {
        let m = self.registers.len() as f64;
        let mut zeros = 0usize;
        let mut sum = 0.0f64;
        for &r in &self.registers {
            if r == 0 {
                zeros += 1;
            }
            sum += f64::from_bits(((1023 - r as i64) as u64) << 52);
        }
        let raw = alpha(self.registers.len()) * m * m / sum;
        if zeros > 0 && raw <= 2.5 * m {
            (m * (m / zeros as f64).ln()).min(2.5 * m)
        } else {
            raw
        }
    }
}
