//! Wavelet matrix over the ranks of a real sequence: range quantiles and
//! range count/sum of values below a threshold in `O(log n)`.

pub struct WaveletMatrix {
    /// Values in ascending order; rank `r` stands for `sorted[r]`.
    sorted: Vec<f64>,
    bits: usize,
    /// Per level: prefix count of one-bits.
    ones: Vec<Vec<u32>>,
    /// Per level: number of zero-bits.
    zeros: Vec<usize>,
    /// Per level: prefix sums of values in the order of the next level.
    sums: Vec<Vec<f64>>,
    /// Prefix sums in the original order.
    prefix: Vec<f64>,
}

impl WaveletMatrix {
    pub fn new(values: &[f64]) -> Self {
        let n = values.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        let mut rank = vec![0u32; n];
        for (r, &i) in order.iter().enumerate() {
            rank[i] = r as u32;
        }
        let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        let bits = (usize::BITS - n.max(1).leading_zeros()) as usize;

        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(0.0);
        for &v in values {
            prefix.push(prefix.last().copied().unwrap_or(0.0) + v);
        }

        let mut cur = rank;
        let mut ones = Vec::with_capacity(bits);
        let mut zeros = Vec::with_capacity(bits);
        let mut sums = Vec::with_capacity(bits);
        for level in 0..bits {
            let shift = bits - 1 - level;
            let mut pre = Vec::with_capacity(n + 1);
            pre.push(0u32);
            let mut zs = Vec::with_capacity(n);
            let mut os = Vec::new();
            for &r in &cur {
                let b = (r >> shift) & 1;
                pre.push(pre.last().copied().unwrap_or(0) + b);
                if b == 0 {
                    zs.push(r);
                } else {
                    os.push(r);
                }
            }
            zeros.push(zs.len());
            zs.extend(os);
            cur = zs;
            let mut s = Vec::with_capacity(n + 1);
            s.push(0.0);
            for &r in &cur {
                s.push(s.last().copied().unwrap_or(0.0) + sorted[r as usize]);
            }
            ones.push(pre);
            sums.push(s);
        }
        Self {
            sorted,
            bits,
            ones,
            zeros,
            sums,
            prefix,
        }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// `k`-th smallest (0-based) value in `[l, r)`.
    pub fn quantile(&self, mut l: usize, mut r: usize, mut k: usize) -> f64 {
        debug_assert!(l < r && k < r - l);
        let mut rank = 0usize;
        for level in 0..self.bits {
            let o = &self.ones[level];
            let (ol, or) = (o[l] as usize, o[r] as usize);
            let zeros_in = (r - l) - (or - ol);
            rank <<= 1;
            if k < zeros_in {
                l -= ol;
                r -= or;
            } else {
                k -= zeros_in;
                rank |= 1;
                l = self.zeros[level] + ol;
                r = self.zeros[level] + or;
            }
        }
        self.sorted[rank]
    }

    /// Sample median of `[l, r)` (mean of the two central values if even).
    pub fn median(&self, l: usize, r: usize) -> f64 {
        let m = r - l;
        if m % 2 == 1 {
            self.quantile(l, r, m / 2)
        } else {
            0.5 * (self.quantile(l, r, m / 2 - 1) + self.quantile(l, r, m / 2))
        }
    }

    /// Number of sorted ranks holding values strictly below `c`.
    fn rank_below(&self, c: f64) -> usize {
        self.sorted.partition_point(|&v| v < c)
    }

    /// `(#{y_k < c}, sum of those y_k)` over `[l, r)`.
    pub fn count_sum_below(&self, l: usize, r: usize, c: f64) -> (usize, f64) {
        self.count_sum_rank_below(l, r, self.rank_below(c))
    }

    fn count_sum_rank_below(&self, mut l: usize, mut r: usize, t: usize) -> (usize, f64) {
        if t >= self.sorted.len() {
            return (r - l, self.prefix[r] - self.prefix[l]);
        }
        let (mut count, mut sum) = (0usize, 0.0);
        for level in 0..self.bits {
            let o = &self.ones[level];
            let (ol, or) = (o[l] as usize, o[r] as usize);
            let (zl, zr) = (l - ol, r - or);
            if (t >> (self.bits - 1 - level)) & 1 == 1 {
                count += zr - zl;
                sum += self.sums[level][zr] - self.sums[level][zl];
                l = self.zeros[level] + ol;
                r = self.zeros[level] + or;
            } else {
                l = zl;
                r = zr;
            }
        }
        (count, sum)
    }

    /// `sum_{k in [l, r)} |y_k - c|`.
    pub fn abs_deviation(&self, l: usize, r: usize, c: f64) -> f64 {
        let (cnt, below) = self.count_sum_below(l, r, c);
        let total = self.prefix[r] - self.prefix[l];
        let m = r - l;
        (c * cnt as f64 - below) + (total - below - c * (m - cnt) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn queries_match_sorting(
            v in proptest::collection::vec(-5i32..5, 1..60),
            a in 0usize..60, b in 0usize..60, c in -6i32..6,
        ) {
            let v: Vec<f64> = v.into_iter().map(f64::from).collect();
            let n = v.len();
            let (l, r) = (a.min(b) % n, (a.max(b) % n) + 1);
            prop_assume!(l < r);
            let wm = WaveletMatrix::new(&v);
            let mut s = v[l..r].to_vec();
            s.sort_by(f64::total_cmp);
            for (k, &want) in s.iter().enumerate() {
                prop_assert_eq!(wm.quantile(l, r, k), want);
            }
            let c = f64::from(c) + 0.5 * f64::from(u8::from(c % 2 == 0));
            let below: Vec<f64> = v[l..r].iter().copied().filter(|&x| x < c).collect();
            let (cnt, sum) = wm.count_sum_below(l, r, c);
            prop_assert_eq!(cnt, below.len());
            prop_assert!((sum - below.iter().sum::<f64>()).abs() < 1e-9);
            let dev: f64 = v[l..r].iter().map(|x| (x - c).abs()).sum();
            prop_assert!((wm.abs_deviation(l, r, c) - dev).abs() < 1e-9);
        }
    }

    #[test]
    fn median_of_even_and_odd_ranges() {
        let wm = WaveletMatrix::new(&[3.0, 1.0, 2.0, 10.0]);
        assert_eq!(wm.median(0, 3), 2.0);
        assert_eq!(wm.median(0, 4), 2.5);
        assert_eq!(wm.median(3, 4), 10.0);
    }
}
