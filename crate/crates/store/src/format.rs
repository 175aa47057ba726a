//! Headered little-endian arrays.

pub const CLEAN_IMAGES_MAGIC: &[u8; 8] = b"ADVXIMG1";
pub const NOISE_MAGIC: &[u8; 8] = b"ADVXNSE1";
pub const CONFIDENCE_MAGIC: &[u8; 8] = b"ADVXCNF1";
pub const COORDS_MAGIC: &[u8; 8] = b"ADVXCRD1";

pub const HEADER_LEN: usize = 12;

fn header(magic: &[u8; 8], count: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(count as u32).to_le_bytes());
    out
}

/// Magic, value count, then the values.
pub fn encode_f32(magic: &[u8; 8], values: &[f32]) -> Vec<u8> {
    let mut out = header(magic, values.len());
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Magic, record count, then fixed-size records.
pub fn encode_records(magic: &[u8; 8], records: &[Vec<u8>]) -> Vec<u8> {
    let mut out = header(magic, records.len());
    for r in records {
        out.extend_from_slice(r);
    }
    out
}

fn check_header<'a>(magic: &[u8; 8], bytes: &'a [u8]) -> Result<(usize, &'a [u8]), String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("{} bytes is shorter than the header", bytes.len()));
    }
    if &bytes[..8] != magic {
        return Err(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&bytes[..8])
        ));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    Ok((count, &bytes[HEADER_LEN..]))
}

pub fn decode_f32(magic: &[u8; 8], bytes: &[u8]) -> Result<Vec<f32>, String> {
    let (count, body) = check_header(magic, bytes)?;
    if body.len() != count * 4 {
        return Err(format!("header declares {count} values but {} payload bytes follow", body.len()));
    }
    Ok(body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

pub fn decode_records(magic: &[u8; 8], bytes: &[u8], record_len: usize) -> Result<Vec<Vec<u8>>, String> {
    let (count, body) = check_header(magic, bytes)?;
    if body.len() != count * record_len {
        return Err(format!(
            "header declares {count} records of {record_len} bytes but {} payload bytes follow",
            body.len()
        ));
    }
    Ok(body.chunks_exact(record_len.max(1)).map(<[u8]>::to_vec).collect())
}
