use crate::error::{arg, Result};

/// `H = I - 2 w w^T / |w|^2`, stored as `w` only.
#[derive(Debug, Clone, PartialEq)]
pub struct Reflector {
    w: Vec<f64>,
    beta: f64,
}

impl Reflector {
    fn from_w(w: Vec<f64>) -> Self {
        let beta = 2.0 / super::dot(&w, &w);
        Self { w, beta }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub(crate) fn w(&self) -> &[f64] {
        &self.w
    }

    /// `2 / |w|^2`
    pub(crate) fn beta(&self) -> f64 {
        self.beta
    }

    /// `v <- H v`; `v.len() == self.len()`.
    pub fn apply(&self, v: &mut [f64]) {
        debug_assert_eq!(v.len(), self.w.len());
        let s = self.beta * super::dot(&self.w, v);
        super::axpy(-s, &self.w, v);
    }
}

/// Reflector with `H a = b`; requires `|a| == |b|` and `a != b`.
pub fn householder(a: &[f64], b: &[f64]) -> Result<Reflector> {
    if a.len() != b.len() || a.is_empty() {
        return arg("householder: vectors must be non-empty and of equal length");
    }
    let (na, nb) = (super::norm(a), super::norm(b));
    if (na - nb).abs() > 1e-12 * na.max(nb) {
        return arg(format!("householder: norms differ ({na} vs {nb})"));
    }
    let w: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if w.iter().all(|&v| v == 0.0) {
        return arg("householder: a == b, nothing to reflect");
    }
    Ok(Reflector::from_w(w))
}

/// Maps `a` onto `beta e_1` with `beta = -sign(a_0) |a|`, so `<a, b> <= 0`.
/// Returns `None` (and `beta = a_0`) when the tail of `a` is already zero.
pub fn reflector_to_axis(a: &[f64]) -> (Option<Reflector>, f64) {
    if a.is_empty() {
        return (None, 0.0);
    }
    if a[1..].iter().all(|&v| v == 0.0) {
        return (None, a[0]);
    }
    let n = super::norm(a);
    let beta = if a[0] > 0.0 { -n } else { n };
    let mut w = a.to_vec();
    w[0] -= beta;
    (Some(Reflector::from_w(w)), beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Ordered reflectors, each acting on `v[offset..offset + len]`.
#[derive(Debug, Clone, Default)]
pub struct ReflectorChain {
    items: Vec<(Side, usize, Reflector)>,
}

impl ReflectorChain {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, side: Side, offset: usize, r: Reflector) {
        self.items.push((side, offset, r));
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// `v <- H_last ... H_first v` (storage order).
    pub fn apply_forward(&self, v: &mut [f64]) {
        for (_, off, r) in &self.items {
            r.apply(&mut v[*off..off + r.len()]);
        }
    }

    /// `v <- H_first ... H_last v`.
    pub fn apply_reverse(&self, v: &mut [f64]) {
        for (_, off, r) in self.items.iter().rev() {
            r.apply(&mut v[*off..off + r.len()]);
        }
    }
}
