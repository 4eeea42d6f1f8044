//! CRC32C (Castagnoli), reflected, init and final XOR `0xFFFF_FFFF`.
//!
//! On x86_64 with SSE4.2 the `crc32` instruction is used eight bytes at a
//! time; everywhere else a slicing-by-8 table walk.

const POLY: u32 = 0x82F6_3B78;

static TABLES: [[u32; 256]; 8] = build_tables();

const fn build_tables() -> [[u32; 256]; 8] {
    let mut tables = [[0u32; 256]; 8];
    let mut i = 0;
    while i < 256 {
        let mut crc = i as u32;
        let mut k = 0;
        while k < 8 {
            crc = if crc & 1 != 0 { (crc >> 1) ^ POLY } else { crc >> 1 };
            k += 1;
        }
        tables[0][i] = crc;
        i += 1;
    }
    let mut t = 1;
    while t < 8 {
        let mut i = 0;
        while i < 256 {
            let prev = tables[t - 1][i];
            tables[t][i] = (prev >> 8) ^ tables[0][(prev & 0xFF) as usize];
            i += 1;
        }
        t += 1;
    }
    tables
}

/// Checksum of `bytes`.
pub fn crc32c(bytes: &[u8]) -> u32 {
    !crc32c_update(!0, bytes)
}

/// Advances a raw (un-inverted) CRC register over `bytes`.
///
/// `crc32c(a ++ b) == !crc32c_update(crc32c_update(!0, a), b)`.
pub fn crc32c_update(state: u32, bytes: &[u8]) -> u32 {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("sse4.2") {
            // SAFETY: feature presence checked above.
            return unsafe { update_sse42(state, bytes) };
        }
    }
    update_table(state, bytes)
}

/// Checksum of `bytes` as if the four bytes at `hole..hole + 4` were zero.
pub fn crc32c_with_zeroed(bytes: &[u8], hole: usize) -> u32 {
    let state = crc32c_update(!0, &bytes[..hole]);
    let state = crc32c_update(state, &[0u8; 4]);
    !crc32c_update(state, &bytes[hole + 4..])
}

pub(crate) fn update_table(mut crc: u32, bytes: &[u8]) -> u32 {
    let mut chunks = bytes.chunks_exact(8);
    for c in &mut chunks {
        let lo = u32::from_le_bytes([c[0], c[1], c[2], c[3]]) ^ crc;
        let hi = u32::from_le_bytes([c[4], c[5], c[6], c[7]]);
        crc = TABLES[7][(lo & 0xFF) as usize]
            ^ TABLES[6][((lo >> 8) & 0xFF) as usize]
            ^ TABLES[5][((lo >> 16) & 0xFF) as usize]
            ^ TABLES[4][(lo >> 24) as usize]
            ^ TABLES[3][(hi & 0xFF) as usize]
            ^ TABLES[2][((hi >> 8) & 0xFF) as usize]
            ^ TABLES[1][((hi >> 16) & 0xFF) as usize]
            ^ TABLES[0][(hi >> 24) as usize];
    }
    for &b in chunks.remainder() {
        crc = (crc >> 8) ^ TABLES[0][((crc ^ b as u32) & 0xFF) as usize];
    }
    crc
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "sse4.2")]
unsafe fn update_sse42(crc: u32, bytes: &[u8]) -> u32 {
    use std::arch::x86_64::{_mm_crc32_u64, _mm_crc32_u8};
    let mut state = crc as u64;
    let mut chunks = bytes.chunks_exact(8);
    for c in &mut chunks {
        let word = u64::from_le_bytes(c.try_into().unwrap());
        state = _mm_crc32_u64(state, word);
    }
    let mut state = state as u32;
    for &b in chunks.remainder() {
        state = _mm_crc32_u8(state, b);
    }
    state
}

#[cfg(test)]
mod tests {
    use super::*;

    // Bit-at-a-time definition, independent of the table and instruction paths.
    fn reference(bytes: &[u8]) -> u32 {
        let mut crc = 0xFFFF_FFFFu32;
        for &b in bytes {
            crc ^= b as u32;
            for _ in 0..8 {
                let mask = (crc & 1).wrapping_neg();
                crc = (crc >> 1) ^ (0x82F6_3B78 & mask);
            }
        }
        !crc
    }

    #[test]
    fn empty_input_is_zero() {
        assert_eq!(crc32c(b""), 0);
    }

    #[test]
    fn check_value() {
        assert_eq!(reference(b"123456789"), 0xE306_9283);
        assert_eq!(crc32c(b"123456789"), 0xE306_9283);
    }

    #[test]
    fn table_and_dispatch_agree_with_reference() {
        let data: Vec<u8> = (0..5000u32).map(|i| (i.wrapping_mul(2654435761) >> 13) as u8).collect();
        for len in [0, 1, 7, 8, 9, 63, 128, 4088, 5000] {
            let want = reference(&data[..len]);
            assert_eq!(crc32c(&data[..len]), want, "len {len}");
            assert_eq!(!update_table(!0, &data[..len]), want, "table len {len}");
        }
    }

    #[test]
    fn zeroed_hole_matches_explicit_zeroing() {
        let mut data: Vec<u8> = (0..128u8).collect();
        let with_hole = crc32c_with_zeroed(&data, 112);
        data[112..116].fill(0);
        assert_eq!(with_hole, crc32c(&data));
    }

    #[test]
    fn incremental_equals_one_shot() {
        let data = b"the quick brown fox jumps over the lazy dog";
        let s = crc32c_update(!0, &data[..10]);
        assert_eq!(!crc32c_update(s, &data[10..]), crc32c(data));
    }
}
