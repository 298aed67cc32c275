//! Unsigned Stirling numbers of the first kind in log space, and the
//! Antoniak distribution of the number of occupied tables.

use rand::Rng as _;

use crate::rng::Rng;
use crate::special::log_sum_exp;

/// `ln |S(n, m)|` for `0 ≤ m ≤ n ≤ max_n`.
#[derive(Debug, Clone)]
pub struct StirlingTable {
    rows: Vec<Vec<f64>>,
}

impl Default for StirlingTable {
    fn default() -> Self {
        Self::new(0)
    }
}

impl StirlingTable {
    pub fn new(max_n: usize) -> Self {
        let mut t = Self { rows: vec![vec![0.0]] };
        t.grow(max_n);
        t
    }

    pub fn max_n(&self) -> usize {
        self.rows.len() - 1
    }

    /// Extends the table with `|S(n+1, m)| = n |S(n, m)| + |S(n, m−1)|`.
    pub fn grow(&mut self, max_n: usize) {
        while self.rows.len() <= max_n {
            let n = self.rows.len() - 1;
            let prev = &self.rows[n];
            let mut next = vec![f64::NEG_INFINITY; n + 2];
            for (m, slot) in next.iter_mut().enumerate() {
                let stay = if m <= n && n > 0 {
                    (n as f64).ln() + prev[m]
                } else {
                    f64::NEG_INFINITY
                };
                let add = if m >= 1 { prev[m - 1] } else { f64::NEG_INFINITY };
                *slot = log_sum_exp(&[stay, add]);
            }
            self.rows.push(next);
        }
    }

    pub fn ln_unsigned(&self, n: usize, m: usize) -> f64 {
        match self.rows.get(n).and_then(|r| r.get(m)) {
            Some(&v) => v,
            None => f64::NEG_INFINITY,
        }
    }

    /// Log-probabilities of `m = 0..=n` tables for `n` customers with
    /// concentration `c`: `p(m) ∝ |S(n, m)| c^m`.
    pub fn antoniak_log_probs(&self, n: usize, c: f64) -> Vec<f64> {
        assert!(n <= self.max_n(), "Stirling table too small");
        let log_c = c.ln();
        let mut lp: Vec<f64> = (0..=n).map(|m| self.ln_unsigned(n, m) + m as f64 * log_c).collect();
        let z = log_sum_exp(&lp);
        lp.iter_mut().for_each(|x| *x -= z);
        lp
    }

    /// Draws the number of tables.
    pub fn sample_antoniak(&self, n: usize, c: f64, rng: &mut Rng) -> usize {
        if n == 0 {
            return 0;
        }
        if n == 1 {
            return 1;
        }
        let lp = self.antoniak_log_probs(n, c);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (m, l) in lp.iter().enumerate() {
            acc += l.exp();
            if u < acc {
                return m;
            }
        }
        n
    }
}

/// Number of tables after seating `n` customers by the Chinese restaurant
/// process with concentration `c`.
pub fn simulate_crp_tables(n: usize, c: f64, rng: &mut Rng) -> usize {
    (0..n).filter(|&i| rng.random::<f64>() < c / (c + i as f64)).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_values() {
        let t = StirlingTable::new(6);
        let exact = |n, m| t.ln_unsigned(n, m).exp().round() as u64;
        assert_eq!((exact(3, 1), exact(3, 2), exact(3, 3)), (2, 3, 1));
        assert_eq!(exact(4, 2), 11);
        assert_eq!(exact(6, 3), 225);
        assert_eq!(t.ln_unsigned(3, 0), f64::NEG_INFINITY);
        assert_eq!(t.ln_unsigned(0, 0), 0.0);
    }

    #[test]
    fn rows_sum_to_factorial() {
        let t = StirlingTable::new(40);
        for n in [5usize, 20, 40] {
            let row: Vec<f64> = (0..=n).map(|m| t.ln_unsigned(n, m)).collect();
            let ln_fact: f64 = (1..=n).map(|i| (i as f64).ln()).sum();
            assert!((log_sum_exp(&row) - ln_fact).abs() < 1e-10);
        }
    }

    #[test]
    fn antoniak_for_three_customers() {
        let t = StirlingTable::new(3);
        let p: Vec<f64> = t.antoniak_log_probs(3, 1.0).iter().map(|x| x.exp()).collect();
        for (a, b) in p.iter().zip([0.0, 2.0 / 6.0, 3.0 / 6.0, 1.0 / 6.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn degenerate_counts() {
        let t = StirlingTable::new(2);
        let mut rng = crate::rng::rng_for(0, &[]);
        assert_eq!(t.sample_antoniak(0, 0.7, &mut rng), 0);
        assert_eq!(t.sample_antoniak(1, 0.7, &mut rng), 1);
    }
}
