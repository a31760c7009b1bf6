//! Small string utilities shared across modules.

use sha2::{Digest, Sha256};

/// Lowercases, replaces punctuation with spaces and collapses whitespace.
///
/// No singularization; see [`crate::matching::normalize_term`] for the
/// lexical form used when comparing entity labels.
pub fn normalize_text(text: &str) -> String {
    let mapped: String = text
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() {
                c
            } else {
                ' '
            }
        })
        .flat_map(char::to_lowercase)
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Hex SHA-256 over the given parts, each terminated by a NUL byte so that
/// `("ab", "c")` and `("a", "bc")` hash differently.
pub fn stable_hash<I, S>(parts: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part.as_ref());
        hasher.update([0u8]);
    }
    hex::encode(hasher.finalize())
}

/// First 8 bytes of [`stable_hash`] as an integer.
pub fn stable_u64(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Round half away from zero at the given number of decimals.
///
/// A small epsilon absorbs binary representation error so that values such as
/// `66.65` (stored as `66.6499999…`) round up as written.
pub fn round_half_up(value: f64, decimals: u32) -> f64 {
    let factor = 10f64.powi(decimals as i32);
    let scaled = value.abs() * factor;
    let rounded = (scaled + 0.5 + 1e-9).floor() / factor;
    rounded.copysign(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_collapses_and_lowercases() {
        assert_eq!(normalize_text("  Parking   Spot, 33! "), "parking spot 33");
        assert_eq!(normalize_text(""), "");
    }

    #[test]
    fn hash_is_separator_aware() {
        assert_ne!(stable_hash(["ab", "c"]), stable_hash(["a", "bc"]));
        assert_eq!(stable_hash(["x"]), stable_hash(["x"]));
        assert_eq!(stable_hash(["x"]).len(), 64);
    }

    #[test]
    fn rounding() {
        assert_eq!(round_half_up(66.666_666, 1), 66.7);
        assert_eq!(round_half_up(0.125 * 100.0, 0), 13.0);
        assert_eq!(round_half_up(19.378_154, 1), 19.4);
        assert_eq!(round_half_up(-2.5, 0), -3.0);
        assert_eq!(round_half_up(66.65, 1), 66.7);
    }
}
