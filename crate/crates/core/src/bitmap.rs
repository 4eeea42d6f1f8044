use std::sync::atomic::{AtomicU64, Ordering};

/// Fixed-size bitset.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Bitmap {
    words: Vec<u64>,
    len: u64,
}

impl Bitmap {
    pub fn new(len: u64) -> Bitmap {
        Bitmap { words: vec![0; len.div_ceil(64) as usize], len }
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: u64) -> bool {
        i < self.len && self.words[(i / 64) as usize] & (1 << (i % 64)) != 0
    }

    /// Sets bit `i`; returns whether it was already set.
    #[inline]
    pub fn set(&mut self, i: u64) -> bool {
        let w = &mut self.words[(i / 64) as usize];
        let mask = 1 << (i % 64);
        let was = *w & mask != 0;
        *w |= mask;
        was
    }

    #[inline]
    pub fn clear(&mut self, i: u64) {
        self.words[(i / 64) as usize] &= !(1 << (i % 64));
    }

    pub fn set_range(&mut self, start: u64, end: u64) {
        for i in start..end {
            self.set(i);
        }
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// ORs `other` in and returns the indices already set on both sides.
    pub fn union_with_overlap(&mut self, other: &Bitmap) -> Vec<u64> {
        let mut overlap = Vec::new();
        for (i, (a, b)) in self.words.iter_mut().zip(&other.words).enumerate() {
            let both = *a & *b;
            if both != 0 {
                let mut bits = both;
                while bits != 0 {
                    let t = bits.trailing_zeros() as u64;
                    overlap.push(i as u64 * 64 + t);
                    bits &= bits - 1;
                }
            }
            *a |= *b;
        }
        overlap
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = u64> + '_ {
        self.words.iter().enumerate().flat_map(|(i, &w)| {
            let mut bits = w;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let t = bits.trailing_zeros() as u64;
                bits &= bits - 1;
                Some(i as u64 * 64 + t)
            })
        })
    }

    /// Reads `len` bits stored LSB-first from consecutive bytes.
    pub fn from_le_bytes(bytes: &[u8], len: u64) -> Bitmap {
        let mut bm = Bitmap::new(len);
        for (i, w) in bm.words.iter_mut().enumerate() {
            let start = i * 8;
            let mut buf = [0u8; 8];
            let end = (start + 8).min(bytes.len());
            if start < end {
                buf[..end - start].copy_from_slice(&bytes[start..end]);
            }
            *w = u64::from_le_bytes(buf);
        }
        if !len.is_multiple_of(64) {
            if let Some(last) = bm.words.last_mut() {
                *last &= (1u64 << (len % 64)) - 1;
            }
        }
        bm
    }
}

/// Bitset shared between threads, set with `fetch_or`.
pub struct AtomicBitmap {
    words: Vec<AtomicU64>,
    len: u64,
}

impl AtomicBitmap {
    pub fn new(len: u64) -> AtomicBitmap {
        AtomicBitmap { words: (0..len.div_ceil(64)).map(|_| AtomicU64::new(0)).collect(), len }
    }

    /// Sets bit `i`; returns whether it was already set.
    #[inline]
    pub fn set(&self, i: u64) -> bool {
        let mask = 1 << (i % 64);
        self.words[(i / 64) as usize].fetch_or(mask, Ordering::AcqRel) & mask != 0
    }

    #[inline]
    pub fn get(&self, i: u64) -> bool {
        i < self.len && self.words[(i / 64) as usize].load(Ordering::Acquire) & (1 << (i % 64)) != 0
    }

    pub fn snapshot(&self) -> Bitmap {
        Bitmap {
            words: self.words.iter().map(|w| w.load(Ordering::Acquire)).collect(),
            len: self.len,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlap_reports_shared_bits() {
        let mut a = Bitmap::new(200);
        let mut b = Bitmap::new(200);
        a.set(7);
        a.set(130);
        b.set(7);
        b.set(131);
        assert_eq!(a.union_with_overlap(&b), vec![7]);
        assert_eq!(a.iter_ones().collect::<Vec<_>>(), vec![7, 130, 131]);
    }

    #[test]
    fn byte_order_is_lsb_first() {
        let bm = Bitmap::from_le_bytes(&[0b0000_0101, 0x80], 12);
        assert!(bm.get(0) && bm.get(2) && !bm.get(1));
        assert!(!bm.get(15), "bits past len are masked");
        assert_eq!(bm.count_ones(), 2);
    }
}
