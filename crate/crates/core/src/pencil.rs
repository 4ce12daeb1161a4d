//! Noncommutative polynomials in GUE letters `x_j` and deterministic letters
//! `y_j, y_j^*`, and their selfadjoint linearization into a linear pencil.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{BlockOperator, CMatrix, HermMatrix, I};

/// Default imaginary padding of the non-corner diagonal of the spectral argument.
pub const DEFAULT_EPSILON_PAD: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Letter {
    X(usize),
    Y(usize),
    YStar(usize),
}

impl Letter {
    pub fn adjoint(self) -> Letter {
        match self {
            Letter::X(j) => Letter::X(j),
            Letter::Y(j) => Letter::YStar(j),
            Letter::YStar(j) => Letter::Y(j),
        }
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Letter::X(j) => write!(f, "x{}", j + 1),
            Letter::Y(j) => write!(f, "y{}", j + 1),
            Letter::YStar(j) => write!(f, "y{}^*", j + 1),
        }
    }
}

/// Word ordered by degree first, then lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Word(pub Vec<Letter>);

impl Ord for Word {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.len().cmp(&other.0.len()).then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Word {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Word {
    pub fn adjoint(&self) -> Word {
        Word(self.0.iter().rev().map(|l| l.adjoint()).collect())
    }
}

/// Polynomial with complex coefficients in noncommuting letters.
/// Terms are kept merged, without zero coefficients, in graded-lex order.
#[derive(Clone, Debug, PartialEq)]
pub struct NCPolynomial {
    p: usize,
    q: usize,
    terms: BTreeMap<Word, C64>,
}

impl NCPolynomial {
    pub fn zero(p: usize, q: usize) -> Self {
        Self { p, q, terms: BTreeMap::new() }
    }

    pub fn constant(p: usize, q: usize, c: C64) -> Self {
        let mut out = Self::zero(p, q);
        out.add_term(c, Vec::new());
        out
    }

    /// Single monomial `c * word`. Letter indices must fit the arity.
    pub fn monomial(p: usize, q: usize, c: C64, word: Vec<Letter>) -> Result<Self> {
        for l in &word {
            let ok = match *l {
                Letter::X(j) => j < p,
                Letter::Y(j) | Letter::YStar(j) => j < q,
            };
            if !ok {
                return Err(invalid(format!("letter {l} out of range (p = {p}, q = {q})")));
            }
        }
        let mut out = Self::zero(p, q);
        out.add_term(c, word);
        Ok(out)
    }

    pub fn x(p: usize, q: usize, j: usize) -> Self {
        Self::monomial(p.max(j + 1), q, C64::new(1.0, 0.0), vec![Letter::X(j)]).unwrap()
    }

    pub fn y(p: usize, q: usize, j: usize) -> Self {
        Self::monomial(p, q.max(j + 1), C64::new(1.0, 0.0), vec![Letter::Y(j)]).unwrap()
    }

    /// Number of GUE letters.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of deterministic letters.
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn with_arity(mut self, p: usize, q: usize) -> Self {
        self.p = self.p.max(p);
        self.q = self.q.max(q);
        self
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[Letter], C64)> + '_ {
        self.terms.iter().map(|(w, &c)| (w.0.as_slice(), c))
    }

    pub fn coefficient(&self, word: &[Letter]) -> C64 {
        self.terms.get(&Word(word.to_vec())).copied().unwrap_or_default()
    }

    pub fn degree(&self) -> usize {
        self.terms.keys().map(|w| w.0.len()).max().unwrap_or(0)
    }

    fn add_term(&mut self, c: C64, word: Vec<Letter>) {
        if c == C64::default() {
            return;
        }
        let key = Word(word);
        let merged = self.terms.get(&key).copied().unwrap_or_default() + c;
        if merged == C64::default() {
            self.terms.remove(&key);
        } else {
            self.terms.insert(key, merged);
        }
    }

    pub fn scale(&self, c: C64) -> Self {
        let mut out = Self::zero(self.p, self.q);
        for (w, &v) in &self.terms {
            out.add_term(v * c, w.0.clone());
        }
        out
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Self::zero(self.p, self.q);
        for (w, &c) in &self.terms {
            out.add_term(c.conj(), w.adjoint().0);
        }
        out
    }

    /// Largest coefficient mismatch between `P` and `P*`.
    pub fn selfadjoint_defect(&self) -> f64 {
        let adj = self.adjoint();
        let mut defect = 0.0f64;
        for (w, &c) in self.terms.iter().chain(adj.terms.iter()) {
            let d = (c - adj.coefficient(&w.0)).norm().max((c - self.coefficient(&w.0)).norm());
            defect = defect.max(d);
        }
        defect
    }

    pub fn is_selfadjoint(&self, tol: f64) -> bool {
        self.selfadjoint_defect() <= tol * self.coef_scale()
    }

    /// Selfadjointness when every `y_j` is Hermitian.
    pub fn is_selfadjoint_hermitian(&self, tol: f64) -> bool {
        self.hermitize().hermitian_defect() <= tol * self.coef_scale()
    }

    fn coef_scale(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).fold(1.0, f64::max)
    }

    /// Defect of a polynomial without `y^*` letters against its adjoint
    /// with `y_j^* = y_j`.
    fn hermitian_defect(&self) -> f64 {
        let adj = self.adjoint().hermitize();
        (self - &adj).terms.values().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Replace every `y_j^*` by `y_j`. Valid when the deterministic
    /// matrices are Hermitian.
    pub fn hermitize(&self) -> Self {
        let mut out = Self::zero(self.p, self.q);
        for (w, &c) in &self.terms {
            let word = w
                .0
                .iter()
                .map(|l| match *l {
                    Letter::YStar(j) => Letter::Y(j),
                    other => other,
                })
                .collect();
            out.add_term(c, word);
        }
        out
    }

    /// Substitute polynomials for letters. `y_j^*` is replaced by the adjoint
    /// of the substitute for `y_j`.
    pub fn substitute(&self, xs: &[NCPolynomial], ys: &[NCPolynomial]) -> Result<Self> {
        if xs.len() < self.p || ys.len() < self.q {
            return Err(invalid("not enough substitutes for polynomial letters"));
        }
        let p = xs.iter().chain(ys).map(|s| s.p).max().unwrap_or(0);
        let q = xs.iter().chain(ys).map(|s| s.q).max().unwrap_or(0);
        let ys_adj: Vec<NCPolynomial> = ys.iter().map(|y| y.adjoint()).collect();
        let mut out = Self::zero(p, q);
        for (w, &c) in &self.terms {
            let mut term = Self::constant(p, q, c);
            for l in &w.0 {
                let s = match *l {
                    Letter::X(j) => &xs[j],
                    Letter::Y(j) => &ys[j],
                    Letter::YStar(j) => &ys_adj[j],
                };
                term = &term * s;
            }
            out = &out + &term;
        }
        Ok(out)
    }

    /// Evaluate at `X_j` (Hermitian) and `Y_j` (arbitrary), all `N x N`.
    pub fn evaluate(&self, x: &[HermMatrix], y: &[CMatrix]) -> Result<CMatrix> {
        if x.len() < self.p || y.len() < self.q {
            return Err(invalid(format!(
                "polynomial needs {} GUE and {} deterministic matrices, got {} and {}",
                self.p,
                self.q,
                x.len(),
                y.len()
            )));
        }
        let n = x
            .first()
            .map(|m| m.dim())
            .or_else(|| y.first().map(|m| m.nrows()))
            .ok_or_else(|| invalid("cannot infer matrix size for evaluation"))?;
        for m in x.iter().map(|m| m.as_cmatrix()).chain(y.iter()) {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::DimensionMismatch {
                    context: "polynomial evaluation",
                    expected: n,
                    found: m.nrows().max(m.ncols()),
                });
            }
        }
        let mut y_adj: Vec<Option<CMatrix>> = vec![None; y.len()];
        for w in self.terms.keys() {
            for l in &w.0 {
                if let Letter::YStar(j) = *l {
                    if y_adj[j].is_none() {
                        y_adj[j] = Some(y[j].adjoint());
                    }
                }
            }
        }
        let letter = |l: &Letter| -> &CMatrix {
            match *l {
                Letter::X(j) => x[j].as_cmatrix(),
                Letter::Y(j) => &y[j],
                Letter::YStar(j) => y_adj[j].as_ref().unwrap(),
            }
        };
        let mut out = CMatrix::zeros(n, n);
        for (w, &c) in &self.terms {
            match w.0.len() {
                0 => {
                    for i in 0..n {
                        out[(i, i)] += c;
                    }
                }
                _ => {
                    let mut prod = letter(&w.0[0]).clone();
                    for l in &w.0[1..] {
                        prod = &prod * letter(l);
                    }
                    out += &prod.scale(c);
                }
            }
        }
        Ok(out)
    }

    /// Evaluate a selfadjoint polynomial at Hermitian arguments.
    pub fn evaluate_hermitian(&self, x: &[HermMatrix], y: &[HermMatrix]) -> Result<HermMatrix> {
        let y: Vec<CMatrix> = y.iter().map(|m| m.as_cmatrix().clone()).collect();
        Ok(HermMatrix::symmetrize(self.evaluate(x, &y)?))
    }

    /// Parse the text form, inferring the arity from the largest indices.
    pub fn parse(text: &str) -> Result<Self> {
        let mut parser = Parser { s: text.as_bytes(), pos: 0 };
        let out = parser.sum()?;
        parser.skip_ws();
        if parser.pos != parser.s.len() {
            return Err(parser.err("unexpected trailing input"));
        }
        Ok(out)
    }
}

impl<'a> std::ops::Add<&'a NCPolynomial> for &'a NCPolynomial {
    type Output = NCPolynomial;
    fn add(self, rhs: &NCPolynomial) -> NCPolynomial {
        let mut out = self.clone().with_arity(rhs.p, rhs.q);
        for (w, &c) in &rhs.terms {
            out.add_term(c, w.0.clone());
        }
        out
    }
}

impl<'a> std::ops::Sub<&'a NCPolynomial> for &'a NCPolynomial {
    type Output = NCPolynomial;
    fn sub(self, rhs: &NCPolynomial) -> NCPolynomial {
        self + &rhs.scale(C64::new(-1.0, 0.0))
    }
}

impl<'a> std::ops::Mul<&'a NCPolynomial> for &'a NCPolynomial {
    type Output = NCPolynomial;
    fn mul(self, rhs: &NCPolynomial) -> NCPolynomial {
        let mut out = NCPolynomial::zero(self.p.max(rhs.p), self.q.max(rhs.q));
        for (a, &ca) in &self.terms {
            for (b, &cb) in &rhs.terms {
                let mut w = a.0.clone();
                w.extend_from_slice(&b.0);
                out.add_term(ca * cb, w);
            }
        }
        out
    }
}

fn fmt_coef(c: C64) -> String {
    if c.im == 0.0 {
        format!("{}", c.re)
    } else if c.re == 0.0 {
        format!("{}i", c.im)
    } else {
        let sign = if c.im.is_sign_negative() { '-' } else { '+' };
        format!("({}{}{}i)", c.re, sign, c.im.abs())
    }
}

impl fmt::Display for NCPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (idx, (w, &c)) in self.terms.iter().enumerate() {
            if idx > 0 {
                write!(f, " + ")?;
            }
            let one = C64::new(1.0, 0.0);
            if w.0.is_empty() {
                write!(f, "{}", fmt_coef(c))?;
                continue;
            }
            if c != one {
                write!(f, "{}*", fmt_coef(c))?;
            }
            let letters: Vec<String> = w.0.iter().map(|l| l.to_string()).collect();
            write!(f, "{}", letters.join("*"))?;
        }
        Ok(())
    }
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> Error {
        Error::Parse { pos: self.pos, msg: msg.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn eat(&mut self, tok: &str) -> bool {
        self.skip_ws();
        if self.s[self.pos..].starts_with(tok.as_bytes()) {
            self.pos += tok.len();
            true
        } else {
            false
        }
    }

    // sum := ['+'|'-'] term (('+'|'-') term)*, where a term may be `h.c.`
    fn sum(&mut self) -> Result<NCPolynomial> {
        let mut acc = NCPolynomial::zero(0, 0);
        let mut hc = false;
        let mut first = true;
        loop {
            let neg = if self.eat("+") {
                false
            } else if self.eat("-") {
                true
            } else if first {
                false
            } else {
                break;
            };
            first = false;
            if self.eat("h.c.") {
                if neg || hc {
                    return Err(self.err("`h.c.` must appear once, with a plus sign"));
                }
                hc = true;
                continue;
            }
            let t = self.product()?;
            acc = if neg { &acc - &t } else { &acc + &t };
        }
        if hc {
            acc = &acc + &acc.adjoint();
        }
        Ok(acc)
    }

    // product := factor ('*' factor)*
    fn product(&mut self) -> Result<NCPolynomial> {
        let mut acc = self.factor()?;
        while self.eat("*") {
            let f = self.factor()?;
            acc = &acc * &f;
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<NCPolynomial> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.sum()?;
                if !self.eat(")") {
                    return Err(self.err("expected `)`"));
                }
                Ok(inner)
            }
            Some(b'x') | Some(b'w') | Some(b'y') => self.letter(),
            Some(b'i') => {
                self.pos += 1;
                Ok(NCPolynomial::constant(0, 0, I))
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let v = self.number()?;
                if self.s.get(self.pos) == Some(&b'i') {
                    self.pos += 1;
                    Ok(NCPolynomial::constant(0, 0, C64::new(0.0, v)))
                } else {
                    Ok(NCPolynomial::constant(0, 0, C64::new(v, 0.0)))
                }
            }
            _ => Err(self.err("expected a number, a letter or `(`")),
        }
    }

    fn number(&mut self) -> Result<f64> {
        let start = self.pos;
        let s = self.s;
        let mut i = self.pos;
        while i < s.len() && (s[i].is_ascii_digit() || s[i] == b'.') {
            i += 1;
        }
        if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
            let mut j = i + 1;
            if j < s.len() && (s[j] == b'+' || s[j] == b'-') {
                j += 1;
            }
            if j < s.len() && s[j].is_ascii_digit() {
                while j < s.len() && s[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = std::str::from_utf8(&s[start..i]).unwrap();
        let v: f64 = text.parse().map_err(|_| self.err("malformed number"))?;
        self.pos = i;
        Ok(v)
    }

    fn letter(&mut self) -> Result<NCPolynomial> {
        let kind = self.s[self.pos];
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        let idx: usize = std::str::from_utf8(&self.s[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| self.err("letter needs a 1-based index"))?;
        if idx == 0 {
            return Err(self.err("letter indices start at 1"));
        }
        let j = idx - 1;
        let one = C64::new(1.0, 0.0);
        match kind {
            b'y' => {
                let star = if self.s[self.pos..].starts_with(b"^*") {
                    self.pos += 2;
                    true
                } else if self.s[self.pos..].starts_with("†".as_bytes()) {
                    self.pos += "†".len();
                    true
                } else {
                    false
                };
                let l = if star { Letter::YStar(j) } else { Letter::Y(j) };
                NCPolynomial::monomial(0, j + 1, one, vec![l])
            }
            _ => NCPolynomial::monomial(j + 1, 0, one, vec![Letter::X(j)]),
        }
    }
}

/// Linear pencil `L = a0 (x) 1 + sum a_j (x) X_j + sum b_j (x) Y_j` with
/// Hermitian `k x k` coefficients.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Pencil {
    pub k: usize,
    pub a0: HermMatrix,
    pub a: Vec<HermMatrix>,
    pub b: Vec<HermMatrix>,
}

impl Pencil {
    pub fn new(a0: HermMatrix, a: Vec<HermMatrix>, b: Vec<HermMatrix>) -> Result<Self> {
        let k = a0.dim();
        if k == 0 {
            return Err(invalid("pencil needs k >= 1"));
        }
        for m in a.iter().chain(&b) {
            if m.dim() != k {
                return Err(Error::DimensionMismatch {
                    context: "pencil coefficient",
                    expected: k,
                    found: m.dim(),
                });
            }
        }
        Ok(Self { k, a0, a, b })
    }

    pub fn p(&self) -> usize {
        self.a.len()
    }

    pub fn q(&self) -> usize {
        self.b.len()
    }

    /// `sum_j ||a_j||^2`, operator norms.
    pub fn variance_norm(&self) -> f64 {
        self.a.iter().map(|m| crate::linalg::op_norm(m).powi(2)).sum()
    }

    /// `R_s(M) = sum_j a_j M a_j`.
    pub fn covariance_map(&self, m: &CMatrix) -> CMatrix {
        covariance_map(&self.a, m)
    }

    /// `L_N` at the given matrices.
    pub fn evaluate(&self, x: &[HermMatrix], y: &[HermMatrix]) -> Result<BlockOperator> {
        if x.len() != self.p() || y.len() != self.q() {
            return Err(invalid(format!(
                "pencil needs {} GUE and {} deterministic matrices, got {} and {}",
                self.p(),
                self.q(),
                x.len(),
                y.len()
            )));
        }
        let n = x
            .first()
            .or(y.first())
            .map(|m| m.dim())
            .ok_or_else(|| invalid("cannot infer matrix size for pencil evaluation"))?;
        let k = self.k;
        let mut out = CMatrix::zeros(k * n, k * n);
        let add = |out: &mut CMatrix, coef: &HermMatrix, m: Option<&HermMatrix>| -> Result<()> {
            if let Some(m) = m {
                if m.dim() != n {
                    return Err(Error::DimensionMismatch {
                        context: "pencil evaluation",
                        expected: n,
                        found: m.dim(),
                    });
                }
            }
            for u in 0..k {
                for v in 0..k {
                    let s = coef[(u, v)];
                    if s == C64::default() {
                        continue;
                    }
                    match m {
                        None => {
                            for i in 0..n {
                                out[(u * n + i, v * n + i)] += s;
                            }
                        }
                        Some(m) => {
                            for i in 0..n {
                                for j in 0..n {
                                    out[(u * n + i, v * n + j)] += s * m[(i, j)];
                                }
                            }
                        }
                    }
                }
            }
            Ok(())
        };
        add(&mut out, &self.a0, None)?;
        for (c, m) in self.a.iter().zip(x) {
            add(&mut out, c, Some(m))?;
        }
        for (c, m) in self.b.iter().zip(y) {
            add(&mut out, c, Some(m))?;
        }
        BlockOperator::new(k, n, HermMatrix::symmetrize(out).into_cmatrix())
    }
}

pub fn covariance_map(a: &[HermMatrix], m: &CMatrix) -> CMatrix {
    let k = m.nrows();
    let mut out = CMatrix::zeros(k, k);
    for aj in a {
        out += &(&(aj.as_cmatrix() * m) * aj.as_cmatrix());
    }
    out
}

/// Output of [`linearize`]: the pencil plus what is needed to read the
/// polynomial's Stieltjes transform off its corner.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinearizationCertificate {
    pub pencil: Pencil,
    pub corner_dim: usize,
    pub epsilon_pad: f64,
}

impl LinearizationCertificate {
    /// `diag(lambda, i eps, ..., i eps)`.
    pub fn spectral_argument(&self, lambda: C64) -> CMatrix {
        let k = self.pencil.k;
        CMatrix::from_fn(k, k, |u, v| match (u, v) {
            (0, 0) => lambda,
            (u, v) if u == v => C64::new(0.0, self.epsilon_pad),
            _ => C64::default(),
        })
    }
}

/// Selfadjoint linearization with the default padding.
pub fn linearize(poly: &NCPolynomial) -> Result<LinearizationCertificate> {
    linearize_with(poly, DEFAULT_EPSILON_PAD)
}

/// Build a selfadjoint pencil `L` whose corner Schur complement is the
/// polynomial. The deterministic letters are taken Hermitian, so `y_j^*`
/// is identified with `y_j` before anything else.
pub fn linearize_with(poly: &NCPolynomial, epsilon_pad: f64) -> Result<LinearizationCertificate> {
    if !(epsilon_pad > 0.0 && epsilon_pad.is_finite()) {
        return Err(invalid("epsilon pad must be positive"));
    }
    let h = poly.hermitize();
    if h.hermitian_defect() > 1e-12 * h.coef_scale() {
        return Err(Error::NotSelfAdjoint { defect: h.hermitian_defect() });
    }
    let (p, q) = (h.p(), h.q());

    // Each higher-degree monomial (or monomial pair) contributes a diagonal
    // block. Entries are sparse lists of (row, col, letter, coefficient).
    struct Entry {
        r: usize,
        c: usize,
        letter: Option<Letter>,
        v: C64,
    }
    let mut entries: Vec<Entry> = Vec::new();
    let mut k = 1usize;
    let mut push = |r: usize, c: usize, letter: Option<Letter>, v: C64| {
        entries.push(Entry { r, c, letter, v });
        if r != c {
            entries.push(Entry { r: c, c: r, letter, v: v.conj() });
        }
    };

    let mut done: std::collections::BTreeSet<Word> = Default::default();
    for (w, c) in h.terms() {
        let word = Word(w.to_vec());
        if done.contains(&word) {
            continue;
        }
        let d = w.len();
        match d {
            0 => push(0, 0, None, C64::new(c.re, 0.0)),
            1 => push(0, 0, Some(w[0]), C64::new(c.re, 0.0)),
            _ => {
                let adj = Word(w.iter().rev().copied().collect());
                let m = d - 1;
                if adj == word {
                    // Palindrome: block Q' = -(J T)/c, U = (l1, 0, ..., 0).
                    let c = c.re;
                    let base = k;
                    push(0, base, Some(w[0]), C64::new(1.0, 0.0));
                    // (J T)_{i, m-1-i} = 1 and (J T)_{i, m-i} = -l_{m-i+1} (0-based)
                    for i in 0..m {
                        let j1 = m - 1 - i;
                        if i <= j1 {
                            push(base + i, base + j1, None, C64::new(-1.0 / c, 0.0));
                        }
                        if i >= 1 {
                            let j2 = m - i;
                            if i <= j2 {
                                // T_{m-1-i, m-i} = -w[m-i]
                                push(base + i, base + j2, Some(w[m - i]), C64::new(1.0 / c, 0.0));
                            }
                        }
                    }
                    k += m;
                } else {
                    // Pair c w + conj(c) w*: Q' = -[[0, T], [T*, 0]],
                    // U = (v*, c u) with u = (l1, 0, ..) and v = (0, .., l_d)^T.
                    let base = k;
                    let top = base; // rows of the first half
                    let bot = base + m; // rows of the second half
                    push(0, top + m - 1, Some(w[d - 1]), C64::new(1.0, 0.0));
                    push(0, bot, Some(w[0]), c);
                    for i in 0..m {
                        // -T_{i,i} = -1 and -T_{i,i+1} = +l_{i+1}
                        push(top + i, bot + i, None, C64::new(-1.0, 0.0));
                        if i + 1 < m {
                            push(top + i, bot + i + 1, Some(w[i + 1]), C64::new(1.0, 0.0));
                        }
                    }
                    k += 2 * m;
                    done.insert(adj);
                }
            }
        }
        done.insert(word);
    }

    let zero = || CMatrix::zeros(k, k);
    let mut a0 = zero();
    let mut a: Vec<CMatrix> = (0..p).map(|_| zero()).collect();
    let mut b: Vec<CMatrix> = (0..q).map(|_| zero()).collect();
    for e in entries {
        let target = match e.letter {
            None => &mut a0,
            Some(Letter::X(j)) => &mut a[j],
            Some(Letter::Y(j)) | Some(Letter::YStar(j)) => &mut b[j],
        };
        target[(e.r, e.c)] += e.v;
    }
    let herm = |m: CMatrix| HermMatrix::new_checked(m, 1e-12);
    let pencil = Pencil::new(
        herm(a0)?,
        a.into_iter().map(herm).collect::<Result<_>>()?,
        b.into_iter().map(herm).collect::<Result<_>>()?,
    )?;
    Ok(LinearizationCertificate { pencil, corner_dim: 1, epsilon_pad })
}

/// Corner entry of the operator-valued Stieltjes transform; its limit as the
/// padding vanishes is the scalar Stieltjes transform of the polynomial.
pub fn corner_extract(g: &CMatrix, _cert: &LinearizationCertificate) -> C64 {
    g[(0, 0)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::resolvent;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn parse_and_print() {
        let p = NCPolynomial::parse("2.5*x1*y1*x1 + h.c.").unwrap();
        assert_eq!(p.coefficient(&[Letter::X(0), Letter::Y(0), Letter::X(0)]), c(2.5, 0.0));
        assert_eq!(p.coefficient(&[Letter::X(0), Letter::YStar(0), Letter::X(0)]), c(2.5, 0.0));
        assert!(p.is_selfadjoint(1e-14));
        let back = NCPolynomial::parse(&p.to_string()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn parse_complex_and_parens() {
        let p = NCPolynomial::parse("(1+2i)*y2^* - 3 + i*x1 - (x1)").unwrap();
        assert_eq!((p.p(), p.q()), (1, 2));
        assert_eq!(p.coefficient(&[Letter::YStar(1)]), c(1.0, 2.0));
        assert_eq!(p.coefficient(&[]), c(-3.0, 0.0));
        assert_eq!(p.coefficient(&[Letter::X(0)]), c(-1.0, 1.0));
        let q = NCPolynomial::parse("(x1 + y1)*(x1 + y1)").unwrap();
        assert_eq!(q.terms().count(), 4);
        assert!(NCPolynomial::parse("x0").is_err());
        assert!(NCPolynomial::parse("x1 +").is_err());
        assert!(NCPolynomial::parse("x1 - h.c.").is_err());
    }

    #[test]
    fn canonical_order_is_graded() {
        let p = NCPolynomial::parse("x1*x1 + y1 + 1 + x2").unwrap();
        let words: Vec<usize> = p.terms().map(|(w, _)| w.len()).collect();
        assert_eq!(words, vec![0, 1, 1, 2]);
    }

    #[test]
    fn linearize_x_squared() {
        let cert = linearize(&NCPolynomial::parse("x1*x1").unwrap()).unwrap();
        let l = &cert.pencil;
        assert_eq!(l.k, 2);
        let a0 = HermMatrix::from_real_rows(&[vec![0.0, 0.0], vec![0.0, -1.0]]).unwrap();
        let a1 = HermMatrix::from_real_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(l.a0, a0);
        assert_eq!(l.a[0], a1);
    }

    #[test]
    fn linearize_passthrough() {
        let cert = linearize(&NCPolynomial::parse("x1").unwrap()).unwrap();
        assert_eq!(cert.pencil.k, 1);
        assert_eq!(cert.pencil.a[0][(0, 0)], c(1.0, 0.0));
        let cert = linearize(&NCPolynomial::parse("x1 + 0.5*y1 - 2").unwrap()).unwrap();
        assert_eq!(cert.pencil.k, 1);
        assert_eq!(cert.pencil.a0[(0, 0)], c(-2.0, 0.0));
    }

    #[test]
    fn linearize_anticommutator_size() {
        let cert = linearize(&NCPolynomial::parse("x1*y1 + y1*x1").unwrap()).unwrap();
        assert_eq!(cert.pencil.k, 3);
    }

    #[test]
    fn linearize_rejects_non_selfadjoint() {
        let p = NCPolynomial::parse("i*x1").unwrap();
        assert!(matches!(linearize(&p), Err(Error::NotSelfAdjoint { .. })));
        let p = NCPolynomial::parse("x1*x2").unwrap();
        assert!(matches!(linearize(&p), Err(Error::NotSelfAdjoint { .. })));
    }

    // Scalar letters commute, so the corner must reproduce 1/(lambda - P(x, y)).
    fn scalar_corner(text: &str, x: &[f64], y: &[f64], lambda: C64) -> (C64, C64) {
        let p = NCPolynomial::parse(text).unwrap();
        let cert = linearize(&p).unwrap();
        let xm: Vec<HermMatrix> = x.iter().map(|&v| HermMatrix::from_real_diag(&[v])).collect();
        let ym: Vec<HermMatrix> = y.iter().map(|&v| HermMatrix::from_real_diag(&[v])).collect();
        let l = cert.pencil.evaluate(&xm, &ym).unwrap();
        let g = resolvent(&cert.spectral_argument(lambda), &l).unwrap();
        let direct = 1.0 / (lambda - p.evaluate_hermitian(&xm, &ym).unwrap()[(0, 0)]);
        (g.matrix()[(0, 0)], direct)
    }

    #[test]
    fn corner_matches_scalar_evaluation() {
        let cases = [
            ("x1*x1", vec![0.7], vec![]),
            ("x1*y1 + y1*x1", vec![0.3], vec![-1.2]),
            ("x1*y1*x1 + y1", vec![1.1], vec![0.4]),
            ("2*x1*x2*x1 - x2*x2*x2 + (1+i)*x1*x2 + (1-i)*x2*x1", vec![0.5, -0.8], vec![]),
            ("x1*y1*y2*x1 + x1*y2*y1*x1 + 3", vec![0.9], vec![0.2, -0.6]),
        ];
        for (text, x, y) in cases {
            let (g, d) = scalar_corner(text, &x, &y, c(0.4, 0.5));
            assert!((g - d).norm() < 1e-6, "{text}: {g} vs {d}");
        }
    }

    #[test]
    fn corner_matches_matrix_evaluation() {
        let n = 3;
        let x = HermMatrix::symmetrize(CMatrix::from_fn(n, n, |i, j| c((i + 2 * j) as f64 * 0.3 - 0.7, (i as f64 - j as f64) * 0.2)));
        let y = HermMatrix::from_real_diag(&[1.0, -1.0, 0.5]);
        for text in ["x1*x1", "x1*y1 + y1*x1", "x1*y1*x1 + y1"] {
            let p = NCPolynomial::parse(text).unwrap();
            let cert = linearize(&p).unwrap();
            let yy: Vec<HermMatrix> = if p.q() > 0 { vec![y.clone()] } else { vec![] };
            let l = cert.pencil.evaluate(&[x.clone()], &yy).unwrap();
            let lambda = c(0.3, 0.8);
            let g = resolvent(&cert.spectral_argument(lambda), &l).unwrap();
            let corner = g.block(0, 0);
            let pv = p.evaluate_hermitian(&[x.clone()], &yy).unwrap();
            let direct = (&CMatrix::scalar(n, lambda) - pv.as_cmatrix()).inverse().unwrap();
            assert!(corner.max_abs_diff(&direct) < 1e-6, "{text}");
        }
    }

    #[test]
    fn substitute_composes() {
        let p = NCPolynomial::parse("x1*x1 + y1").unwrap();
        let s = NCPolynomial::parse("x1 + x2").unwrap();
        let t = NCPolynomial::parse("2*y1^*").unwrap();
        let r = p.substitute(&[s], &[t]).unwrap();
        let expect = NCPolynomial::parse("x1*x1 + x1*x2 + x2*x1 + x2*x2 + 2*y1^*").unwrap();
        assert_eq!(r, expect);
    }

    #[test]
    fn adjoint_reverses_words() {
        let p = NCPolynomial::parse("i*x1*y1*x2").unwrap();
        let a = p.adjoint();
        assert_eq!(a.coefficient(&[Letter::X(1), Letter::YStar(0), Letter::X(0)]), c(0.0, -1.0));
    }
}
