use std::ops::Range;

use crate::error::{MsaeError, Result};

/// Ragged token set: `len × width` row-major tokens, each tagged with its
/// `(frame, joint)` and time-slice index.
///
/// Slice indices start at 0 and never decrease, so each slice occupies a
/// contiguous run of rows.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSet<T> {
    pub tokens: Vec<T>,
    pub width: usize,
    pub positions: Vec<(usize, usize)>,
    pub slice_of_token: Vec<usize>,
}

impl<T: Copy> TokenSet<T> {
    pub fn new(
        tokens: Vec<T>,
        width: usize,
        positions: Vec<(usize, usize)>,
        slice_of_token: Vec<usize>,
    ) -> Result<Self> {
        let n = positions.len();
        if n == 0 || tokens.len() != n * width || slice_of_token.len() != n {
            return Err(MsaeError::InvalidSequence(format!(
                "token set shape mismatch: {} values, width {width}, {n} positions, {} slice ids",
                tokens.len(),
                slice_of_token.len()
            )));
        }
        if slice_of_token[0] != 0 || slice_of_token.windows(2).any(|w| w[1] < w[0] || w[1] > w[0] + 1) {
            return Err(MsaeError::InvalidSequence(
                "slice ids must start at 0 and increase by at most 1 per token".into(),
            ));
        }
        Ok(Self { tokens, width, positions, slice_of_token })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.tokens[i * self.width..(i + 1) * self.width]
    }

    pub fn slice_count(&self) -> usize {
        self.slice_of_token.last().map_or(0, |s| s + 1)
    }

    pub fn groups(&self) -> Vec<Range<usize>> {
        groups_of(&self.slice_of_token)
    }

    /// Same tags, new values.
    pub(crate) fn with_tokens(&self, tokens: Vec<T>) -> Self {
        debug_assert_eq!(tokens.len(), self.tokens.len());
        Self {
            tokens,
            width: self.width,
            positions: self.positions.clone(),
            slice_of_token: self.slice_of_token.clone(),
        }
    }
}

/// Contiguous row ranges sharing a slice id.
pub(crate) fn groups_of(slice_of_token: &[usize]) -> Vec<Range<usize>> {
    let mut out: Vec<Range<usize>> = Vec::new();
    for (i, &s) in slice_of_token.iter().enumerate() {
        match out.last_mut() {
            Some(r) if slice_of_token[r.start] == s => r.end = i + 1,
            _ => out.push(i..i + 1),
        }
    }
    out
}
