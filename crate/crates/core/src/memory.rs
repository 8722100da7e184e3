//! Cluster-visible memory: the banked TCDM and the L2/external region.

use thiserror::Error;

/// Base address of the tightly coupled data memory.
pub const TCDM_BASE: u32 = 0x0001_0000;
/// Base address of the L2/external region. Code is placed here as well.
pub const L2_BASE: u32 = 0x8000_0000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemError {
    #[error("misaligned {width}-byte access at {addr:#010x}")]
    MisalignedAccess { addr: u32, width: u32 },
    #[error("access at {addr:#010x} ({width} bytes) is outside the memory map")]
    OutOfRangeAccess { addr: u32, width: u32 },
}

/// Which memory an address routes to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Tcdm,
    L2,
}

/// Flat storage for the two data regions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Memory {
    tcdm: Vec<u8>,
    l2: Vec<u8>,
}

impl Memory {
    pub fn new(tcdm_size: usize, l2_size: usize) -> Self {
        Memory {
            tcdm: vec![0; tcdm_size],
            l2: vec![0; l2_size],
        }
    }

    pub fn tcdm_size(&self) -> usize {
        self.tcdm.len()
    }

    pub fn l2_size(&self) -> usize {
        self.l2.len()
    }

    /// Region containing the whole range `[addr, addr + len)`.
    pub fn region_of(&self, addr: u32, len: u32) -> Option<Region> {
        let end = addr as u64 + len as u64;
        let inside = |base: u32, size: usize| {
            addr >= base && end <= base as u64 + size as u64
        };
        if inside(TCDM_BASE, self.tcdm.len()) {
            Some(Region::Tcdm)
        } else if inside(L2_BASE, self.l2.len()) {
            Some(Region::L2)
        } else {
            None
        }
    }

    fn slice(&self, addr: u32, len: u32) -> Result<&[u8], MemError> {
        let oob = MemError::OutOfRangeAccess { addr, width: len };
        let (buf, off) = match self.region_of(addr, len).ok_or(oob)? {
            Region::Tcdm => (&self.tcdm, addr - TCDM_BASE),
            Region::L2 => (&self.l2, addr - L2_BASE),
        };
        Ok(&buf[off as usize..(off + len) as usize])
    }

    fn slice_mut(&mut self, addr: u32, len: u32) -> Result<&mut [u8], MemError> {
        let oob = MemError::OutOfRangeAccess { addr, width: len };
        let (buf, off) = match self.region_of(addr, len).ok_or(oob)? {
            Region::Tcdm => (&mut self.tcdm, addr - TCDM_BASE),
            Region::L2 => (&mut self.l2, addr - L2_BASE),
        };
        Ok(&mut buf[off as usize..(off + len) as usize])
    }

    pub fn read_bytes(&self, addr: u32, len: u32) -> Result<Vec<u8>, MemError> {
        self.slice(addr, len).map(<[u8]>::to_vec)
    }

    pub fn write_bytes(&mut self, addr: u32, data: &[u8]) -> Result<(), MemError> {
        self.slice_mut(addr, data.len() as u32)?
            .copy_from_slice(data);
        Ok(())
    }

    fn check_align(addr: u32, width: u32) -> Result<(), MemError> {
        if !addr.is_multiple_of(width) {
            Err(MemError::MisalignedAccess { addr, width })
        } else {
            Ok(())
        }
    }

    /// Naturally aligned little-endian load of 4 or 8 bytes.
    pub fn load(&self, addr: u32, width: u32) -> Result<u64, MemError> {
        Self::check_align(addr, width)?;
        let bytes = self.slice(addr, width)?;
        let mut buf = [0u8; 8];
        buf[..width as usize].copy_from_slice(bytes);
        Ok(u64::from_le_bytes(buf))
    }

    pub fn store(&mut self, addr: u32, width: u32, value: u64) -> Result<(), MemError> {
        Self::check_align(addr, width)?;
        let bytes = value.to_le_bytes();
        self.slice_mut(addr, width)?
            .copy_from_slice(&bytes[..width as usize]);
        Ok(())
    }

    pub fn load_f64(&self, addr: u32) -> Result<f64, MemError> {
        self.load(addr, 8).map(f64::from_bits)
    }

    pub fn store_f64(&mut self, addr: u32, v: f64) -> Result<(), MemError> {
        self.store(addr, 8, v.to_bits())
    }

    /// Reads `n` consecutive doubles starting at `addr`.
    pub fn read_f64s(&self, addr: u32, n: usize) -> Result<Vec<f64>, MemError> {
        (0..n)
            .map(|i| self.load_f64(addr + 8 * i as u32))
            .collect()
    }

    pub fn write_f64s(&mut self, addr: u32, values: &[f64]) -> Result<(), MemError> {
        for (i, v) in values.iter().enumerate() {
            self.store_f64(addr + 8 * i as u32, *v)?;
        }
        Ok(())
    }
}

/// Memory as seen by an executing instruction: accesses report the number of
/// cycles the data takes to come back.
pub trait MemoryPort {
    fn load(&mut self, addr: u32, width: u32) -> Result<(u64, u64), MemError>;
    fn store(&mut self, addr: u32, width: u32, value: u64) -> Result<(), MemError>;
}

/// A [`Memory`] with fixed per-region load latencies and no contention.
pub struct FixedLatency<'a> {
    pub mem: &'a mut Memory,
    pub tcdm_latency: u64,
    pub l2_latency: u64,
}

impl MemoryPort for FixedLatency<'_> {
    fn load(&mut self, addr: u32, width: u32) -> Result<(u64, u64), MemError> {
        let v = self.mem.load(addr, width)?;
        let lat = match self.mem.region_of(addr, width) {
            Some(Region::Tcdm) => self.tcdm_latency,
            _ => self.l2_latency,
        };
        Ok((v, lat))
    }

    fn store(&mut self, addr: u32, width: u32, value: u64) -> Result<(), MemError> {
        self.mem.store(addr, width, value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn routes_regions_and_checks_bounds() {
        let mut m = Memory::new(1024, 4096);
        assert_eq!(m.region_of(TCDM_BASE, 8), Some(Region::Tcdm));
        assert_eq!(m.region_of(TCDM_BASE + 1020, 8), None);
        assert_eq!(m.region_of(L2_BASE + 8, 8), Some(Region::L2));
        assert_eq!(m.region_of(0, 4), None);
        m.store_f64(TCDM_BASE + 16, 1.5).unwrap();
        assert_eq!(m.load_f64(TCDM_BASE + 16).unwrap(), 1.5);
        assert_eq!(
            m.load(TCDM_BASE + 4, 8),
            Err(MemError::MisalignedAccess {
                addr: TCDM_BASE + 4,
                width: 8
            })
        );
        assert!(matches!(
            m.store(0x100, 4, 0),
            Err(MemError::OutOfRangeAccess { .. })
        ));
    }
}
