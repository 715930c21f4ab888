//! Index sets over a signal, kept as sorted disjoint half-open spans.
//!
//! The graph only ever evaluates (or back-propagates through) the sample
//! positions some requested output actually depends on; for a single
//! residual that is a window a few dozen samples wide.

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub(crate) struct Support {
    spans: Vec<(usize, usize)>,
}

impl Support {
    pub fn full(m: usize) -> Self {
        Self { spans: if m > 0 { vec![(0, m)] } else { vec![] } }
    }

    pub fn single(k: usize) -> Self {
        Self { spans: vec![(k, k + 1)] }
    }

    /// `idx` need not be sorted or unique.
    pub fn from_indices(idx: &[usize]) -> Self {
        let mut v = idx.to_vec();
        v.sort_unstable();
        v.dedup();
        let mut spans: Vec<(usize, usize)> = Vec::new();
        for k in v {
            match spans.last_mut() {
                Some(last) if last.1 == k => last.1 = k + 1,
                _ => spans.push((k, k + 1)),
            }
        }
        Self { spans }
    }

    fn from_unsorted(mut raw: Vec<(isize, isize)>, m: usize) -> Self {
        raw.sort_unstable();
        let mut spans: Vec<(usize, usize)> = Vec::with_capacity(raw.len());
        for (lo, hi) in raw {
            let lo = lo.clamp(0, m as isize) as usize;
            let hi = hi.clamp(0, m as isize) as usize;
            if lo >= hi {
                continue;
            }
            match spans.last_mut() {
                Some(last) if last.1 >= lo => last.1 = last.1.max(hi),
                _ => spans.push((lo, hi)),
            }
        }
        Self { spans }
    }

    /// Positions `t` with `k - left <= t <= k + right` for some `k` in the
    /// set, clipped to `[0, m)`.
    pub fn dilate(&self, left: isize, right: isize, m: usize) -> Self {
        let raw = self
            .spans
            .iter()
            .map(|&(lo, hi)| (lo as isize - left, hi as isize + right))
            .collect();
        Self::from_unsorted(raw, m)
    }

    pub fn union(&self, other: &Support, m: usize) -> Self {
        let raw = self
            .spans
            .iter()
            .chain(&other.spans)
            .map(|&(lo, hi)| (lo as isize, hi as isize))
            .collect();
        Self::from_unsorted(raw, m)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.spans.iter().flat_map(|&(lo, hi)| lo..hi)
    }

    #[cfg(test)]
    pub fn len(&self) -> usize {
        self.spans.iter().map(|(lo, hi)| hi - lo).sum()
    }

    #[cfg(test)]
    pub fn spans(&self) -> &[(usize, usize)] {
        &self.spans
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indices_merge_into_spans() {
        let s = Support::from_indices(&[5, 1, 2, 3, 9, 2]);
        assert_eq!(s.spans(), &[(1, 4), (5, 6), (9, 10)]);
        assert_eq!(s.len(), 5);
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![1, 2, 3, 5, 9]);
    }

    #[test]
    fn dilation_clips_and_merges() {
        let s = Support::from_indices(&[0, 6]);
        let d = s.dilate(1, 2, 8);
        assert_eq!(d.spans(), &[(0, 3), (5, 8)]);
        let d = s.dilate(2, 2, 8);
        assert_eq!(d.spans(), &[(0, 3), (4, 8)]);
        let d = s.dilate(3, 2, 8);
        assert_eq!(d.spans(), &[(0, 8)]);
        // negative reach shifts instead of growing
        let d = Support::single(4).dilate(-1, 1, 8);
        assert_eq!(d.spans(), &[(5, 6)]);
    }

    #[test]
    fn union_of_overlapping() {
        let a = Support::from_indices(&[1, 2]);
        let b = Support::from_indices(&[3, 7]);
        assert_eq!(a.union(&b, 10).spans(), &[(1, 4), (7, 8)]);
    }
}
