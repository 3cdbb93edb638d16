//! Compensated summation for the likelihood accumulators.
//!
//! Quasi-likelihood values and gradients are sums of up to a few hundred
//! thousand terms; plain accumulation leaves rounding noise near the 1e-8
//! gradient tolerance of the Newton stopping rule on long horizons.

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub(crate) fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum
    }
}

/// Per-component compensated accumulator for gradient vectors.
#[derive(Debug, Clone)]
pub(crate) struct KahanVec {
    sums: Vec<KahanSum>,
}

impl KahanVec {
    pub(crate) fn zeros(len: usize) -> Self {
        KahanVec { sums: vec![KahanSum::default(); len] }
    }

    pub(crate) fn add(&mut self, idx: usize, x: f64) {
        self.sums[idx].add(x);
    }

    pub(crate) fn into_vector(self) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_iterator(self.sums.len(), self.sums.iter().map(|s| s.value()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensation_beats_plain_summation() {
        let terms: Vec<f64> = (0..100_000).map(|i| 1e4 * ((i as f64 * 0.7).sin())).collect();
        let mut kahan = KahanSum::default();
        for t in &terms {
            kahan.add(*t);
        }
        let mut exact = 0.0f64; // binary split gives a near-exact reference
        let mut stack = vec![(0usize, terms.len())];
        let mut parts = Vec::new();
        while let Some((a, b)) = stack.pop() {
            if b - a <= 32 {
                parts.push(terms[a..b].iter().sum::<f64>());
            } else {
                let m = (a + b) / 2;
                stack.push((a, m));
                stack.push((m, b));
            }
        }
        parts.sort_by(|x, y| x.abs().partial_cmp(&y.abs()).unwrap());
        for p in parts {
            exact += p;
        }
        assert!((kahan.value() - exact).abs() <= 1e-7 * (1.0 + exact.abs()));
    }
}
