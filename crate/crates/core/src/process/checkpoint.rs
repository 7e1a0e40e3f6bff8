//! Binary checkpoint layout (all integers and floats little-endian):
//!
//! | offset | size | field                                 |
//! |--------|------|---------------------------------------|
//! | 0      | 4    | magic `LACK`                          |
//! | 4      | 4    | version (u32, currently 1)            |
//! | 8      | 8    | parameter count `n` (u64)             |
//! | 16     | 8    | stage_index (u64)                     |
//! | 24     | 8    | iteration_count (u64)                 |
//! | 32     | 8·n  | parameters (f64)                      |
//! | 32+8n  | 32   | RNG seed (ChaCha8)                    |
//! | 64+8n  | 8    | RNG stream (u64)                      |
//! | 72+8n  | 16   | RNG word position (u128)              |

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ProcessError, ProcessState};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"LACK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(state: &ProcessState, mut out: W) -> Result<(), ProcessError> {
    out.write_all(&CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(state.parameters.len() as u64).to_le_bytes())?;
    out.write_all(&state.stage_index.to_le_bytes())?;
    out.write_all(&state.iteration_count.to_le_bytes())?;
    for p in &state.parameters {
        out.write_all(&p.to_le_bytes())?;
    }
    out.write_all(&state.rng.get_seed())?;
    out.write_all(&state.rng.get_stream().to_le_bytes())?;
    out.write_all(&state.rng.get_word_pos().to_le_bytes())?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(input: &mut R) -> Result<[u8; N], ProcessError> {
    let mut buf = [0u8; N];
    input
        .read_exact(&mut buf)
        .map_err(|e| ProcessError::Checkpoint(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<ProcessState, ProcessError> {
    let magic: [u8; 4] = read_array(&mut input)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(ProcessError::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut input)?);
    if version != CHECKPOINT_VERSION {
        return Err(ProcessError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let count = u64::from_le_bytes(read_array(&mut input)?);
    let stage_index = u64::from_le_bytes(read_array(&mut input)?);
    let iteration_count = u64::from_le_bytes(read_array(&mut input)?);
    if count > (1 << 32) {
        return Err(ProcessError::Checkpoint(format!("implausible parameter count {count}")));
    }
    let mut parameters = Vec::with_capacity(count as usize);
    for _ in 0..count {
        parameters.push(f64::from_le_bytes(read_array(&mut input)?));
    }
    let seed: [u8; 32] = read_array(&mut input)?;
    let stream = u64::from_le_bytes(read_array(&mut input)?);
    let word_pos = u128::from_le_bytes(read_array(&mut input)?);
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    Ok(ProcessState {
        parameters,
        stage_index,
        iteration_count,
        rng,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn round_trip_preserves_state_and_rng_position() {
        let mut state = ProcessState::new(vec![1.0, -0.25, f64::MIN_POSITIVE], 42);
        state.stage_index = 3;
        state.iteration_count = 1500;
        let _: u64 = state.rng.gen();
        let mut buf = Vec::new();
        write_checkpoint(&state, &mut buf).unwrap();
        assert_eq!(buf.len(), 32 + 8 * 3 + 32 + 8 + 16);
        assert_eq!(&buf[..4], b"LACK");
        let mut back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, state);
        assert_eq!(back.rng.gen::<u64>(), state.rng.clone().gen::<u64>());
    }

    #[test]
    fn rejects_corruption() {
        let state = ProcessState::new(vec![0.5; 4], 1);
        let mut buf = Vec::new();
        write_checkpoint(&state, &mut buf).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(bad.as_slice()).is_err());
        let mut bad = buf;
        bad[4] = 9;
        assert!(read_checkpoint(bad.as_slice()).is_err());
    }
}
