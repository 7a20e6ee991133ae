//! Exact binomial coefficients.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Triangular table of binomial coefficients `C(n, k)` for `0 <= k <= n <= max_n`.
///
/// Entries are computed with Pascal's rule in `u64` and stored alongside their
/// `f64` images. Every entry up to [`BinomialTable::MAX_N`] is exactly representable
/// in double precision (checked when the table is built).
#[derive(Debug, Clone)]
pub struct BinomialTable {
    max_n: usize,
    exact: Vec<u64>,
    values: Vec<f64>,
}

impl BinomialTable {
    pub const MAX_N: usize = 56;

    pub fn new(max_n: usize) -> Result<Self> {
        if max_n > Self::MAX_N {
            return Err(Error::Config(format!(
                "binomial table limited to n <= {}, requested {max_n}",
                Self::MAX_N
            )));
        }
        let mut exact = Vec::with_capacity((max_n + 1) * (max_n + 2) / 2);
        for n in 0..=max_n {
            let row = n * (n + 1) / 2;
            for k in 0..=n {
                let v = if k == 0 || k == n {
                    1
                } else {
                    let prev = row - n;
                    exact[prev + k - 1] + exact[prev + k]
                };
                exact.push(v);
            }
        }
        let values: Vec<f64> = exact.iter().map(|&v| v as f64).collect();
        for (&e, &f) in exact.iter().zip(&values) {
            if f as u64 != e {
                return Err(Error::Config(format!("binomial {e} not exactly representable as f64")));
            }
        }
        Ok(BinomialTable { max_n, exact, values })
    }

    /// Shared table covering the full supported range.
    pub fn global() -> &'static BinomialTable {
        static TABLE: OnceLock<BinomialTable> = OnceLock::new();
        TABLE.get_or_init(|| BinomialTable::new(Self::MAX_N).expect("binomial table"))
    }

    pub fn max_n(&self) -> usize {
        self.max_n
    }

    pub fn get(&self, n: usize, k: usize) -> Result<f64> {
        if k > n || n > self.max_n {
            return Err(Error::Domain(format!("binomial({n}, {k}) out of range (max_n = {})", self.max_n)));
        }
        Ok(self.values[n * (n + 1) / 2 + k])
    }

    pub fn get_exact(&self, n: usize, k: usize) -> Result<u64> {
        if k > n || n > self.max_n {
            return Err(Error::Domain(format!("binomial({n}, {k}) out of range (max_n = {})", self.max_n)));
        }
        Ok(self.exact[n * (n + 1) / 2 + k])
    }

    /// Unchecked lookup for hot loops; callers guarantee `k <= n <= max_n`.
    #[inline]
    pub(crate) fn at(&self, n: usize, k: usize) -> f64 {
        debug_assert!(k <= n && n <= self.max_n);
        self.values[n * (n + 1) / 2 + k]
    }

    /// Checks that degrees requiring coefficients up to row `n` fit in the table.
    pub fn require(&self, n: usize, what: &str) -> Result<()> {
        if n > self.max_n {
            Err(Error::Config(format!(
                "{what} needs binomials of order {n}, exact table stops at {}",
                self.max_n
            )))
        } else {
            Ok(())
        }
    }
}

/// `C(n, k)` from the shared table.
pub fn binomial(n: i64, k: i64) -> Result<f64> {
    if n < 0 || k < 0 {
        return Err(Error::Domain(format!("binomial({n}, {k}) out of range")));
    }
    BinomialTable::global().get(n as usize, k as usize)
}

/// Unchecked shorthand used by the polynomial kernels.
#[inline]
pub(crate) fn c(n: usize, k: usize) -> f64 {
    BinomialTable::global().at(n, k)
}
