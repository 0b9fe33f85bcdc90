use std::fmt::Write;

use serde::{Deserialize, Serialize};

/// `c + Σ k·v` with integer coefficients. Terms keep first-appearance order,
/// never repeat a variable and never carry a zero coefficient.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AffineExpr<V> {
    pub constant: i64,
    pub terms: Vec<(V, i64)>,
}

impl<V: Copy + Eq> AffineExpr<V> {
    pub fn constant(c: i64) -> Self {
        AffineExpr {
            constant: c,
            terms: Vec::new(),
        }
    }

    pub fn var(v: V) -> Self {
        Self::term(v, 1)
    }

    pub fn term(v: V, k: i64) -> Self {
        let mut e = Self::constant(0);
        e.push_term(v, k);
        e
    }

    fn push_term(&mut self, v: V, k: i64) {
        if let Some(pos) = self.terms.iter().position(|(w, _)| *w == v) {
            self.terms[pos].1 += k;
            if self.terms[pos].1 == 0 {
                self.terms.remove(pos);
            }
        } else if k != 0 {
            self.terms.push((v, k));
        }
    }

    pub fn plus(&self, other: &Self) -> Self {
        let mut e = self.clone();
        e.constant += other.constant;
        for (v, k) in &other.terms {
            e.push_term(*v, *k);
        }
        e
    }

    pub fn minus(&self, other: &Self) -> Self {
        self.plus(&other.scaled(-1))
    }

    pub fn offset(&self, c: i64) -> Self {
        let mut e = self.clone();
        e.constant += c;
        e
    }

    pub fn scaled(&self, k: i64) -> Self {
        if k == 0 {
            return Self::constant(0);
        }
        AffineExpr {
            constant: self.constant * k,
            terms: self.terms.iter().map(|(v, c)| (*v, c * k)).collect(),
        }
    }

    pub fn as_constant(&self) -> Option<i64> {
        self.terms.is_empty().then_some(self.constant)
    }

    pub fn vars(&self) -> impl Iterator<Item = V> + '_ {
        self.terms.iter().map(|(v, _)| *v)
    }

    /// Substitutes every variable by an expression over another variable set.
    pub fn substitute<W: Copy + Eq>(&self, mut f: impl FnMut(V) -> AffineExpr<W>) -> AffineExpr<W> {
        let mut e = AffineExpr::constant(self.constant);
        for (v, k) in &self.terms {
            e = e.plus(&f(*v).scaled(*k));
        }
        e
    }

    pub fn eval(&self, mut value: impl FnMut(V) -> i64) -> i64 {
        self.terms.iter().fold(self.constant, |acc, (v, k)| acc + k * value(*v))
    }

    /// MLIR-style text: `d0 * 2 + d1 - 1`, `-d0 + 5`, `0`.
    pub fn format_with(&self, mut name: impl FnMut(V) -> String) -> String {
        let mut s = String::new();
        for (i, (v, k)) in self.terms.iter().enumerate() {
            let n = name(*v);
            let mag = k.unsigned_abs();
            match (i, *k < 0) {
                (0, false) => s.push_str(&n),
                (0, true) => write!(s, "-{n}").unwrap(),
                (_, false) => write!(s, " + {n}").unwrap(),
                (_, true) => write!(s, " - {n}").unwrap(),
            }
            if mag != 1 {
                write!(s, " * {mag}").unwrap();
            }
        }
        match (s.is_empty(), self.constant) {
            (true, c) => write!(s, "{c}").unwrap(),
            (false, 0) => {}
            (false, c) if c > 0 => write!(s, " + {c}").unwrap(),
            (false, c) => write!(s, " - {}", c.unsigned_abs()).unwrap(),
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type E = AffineExpr<u32>;

    fn d(v: u32) -> String {
        format!("d{v}")
    }

    #[test]
    fn formatting() {
        assert_eq!(E::var(0).offset(2).format_with(d), "d0 + 2");
        assert_eq!(E::var(0).format_with(d), "d0");
        assert_eq!(E::constant(7).format_with(d), "7");
        assert_eq!(E::term(0, -1).offset(5).format_with(d), "-d0 + 5");
        assert_eq!(
            E::term(0, 2).plus(&E::term(1, -3)).offset(-1).format_with(d),
            "d0 * 2 - d1 * 3 - 1"
        );
    }

    #[test]
    fn cancellation_and_substitution() {
        let e = E::var(0).plus(&E::var(1)).minus(&E::var(0));
        assert_eq!(e, E::var(1));
        // j = j' - 2i with j' = d1, i = d0 + 1
        let j = AffineExpr::<char>::var('s').minus(&AffineExpr::var('i').scaled(2));
        let sub = j.substitute(|v| if v == 's' { E::var(1) } else { E::var(0).offset(1) });
        assert_eq!(sub.format_with(d), "d1 - d0 * 2 - 2");
        assert_eq!(sub.eval(|v| [3, 10][v as usize]), 2);
    }
}
