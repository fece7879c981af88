//! Hashed bag-of-words utterance features.

use crate::seed::derive_seed;

/// Signed feature hashing of lower-cased alphanumeric tokens, L2-normalised.
/// Returns all zeros for text without tokens.
pub fn hash_text(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    if dim == 0 {
        return v;
    }
    for token in text
        .split(|c: char| !c.is_alphanumeric() && c != '\'')
        .map(|t| t.trim_matches('\'').to_lowercase())
        .filter(|t| !t.is_empty())
    {
        let h = derive_seed(0, &token, 0);
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[(h % dim as u64) as usize] += sign;
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_and_punctuation_insensitive() {
        assert_eq!(hash_text("Hello, there!", 16), hash_text("hello there", 16));
    }

    #[test]
    fn unit_norm_or_zero() {
        let v = hash_text("one two three", 8);
        assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(hash_text("...", 8).iter().all(|&x| x == 0.0));
    }
}
