//! Explicit Butcher tableaus and embedded pairs.
//!
//! Tableaus are immutable after construction and shareable across workers.
//! Besides the classic fourth-order scheme, the crate ships three embedded
//! pairs: Dormand-Prince 5(4), the classical 13-stage 8(7) pair, and a 9(8)
//! pair obtained by one level of Richardson extrapolation of the 13-stage
//! order-8 formula. All shipped coefficients are exact rationals rounded
//! once to f64.

use crate::error::{Error, Result};

mod coefficients;
mod rational;

use rational::Rational;

/// Tolerance for the structural tableau invariants (row sums, weight sums).
pub const INVARIANT_TOL: f64 = 1e-12;

/// An explicit Runge-Kutta tableau, optionally with embedded weights of one
/// order lower for error estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct ButcherTableau {
    name: String,
    /// Classical ODE order of the propagating weights.
    order: u32,
    /// Order of the embedded weights; 0 when there are none.
    embedded_order: u32,
    /// Stage nodes `c`.
    nodes: Vec<f64>,
    /// Strictly lower-triangular coupling matrix; row `i` holds the `i`
    /// coefficients multiplying earlier stages.
    coupling: Vec<Vec<f64>>,
    /// Propagating weights `b`.
    weights: Vec<f64>,
    /// Embedded weights, when the tableau is a pair.
    embedded_weights: Option<Vec<f64>>,
}

/// Residual of the quadrature condition `sum_i b_i c_i^(q-1) = 1/q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureResidual {
    pub order: u32,
    pub weights: f64,
    pub embedded: Option<f64>,
}

impl ButcherTableau {
    pub fn new(
        name: impl Into<String>,
        order: u32,
        embedded_order: u32,
        nodes: Vec<f64>,
        coupling: Vec<Vec<f64>>,
        weights: Vec<f64>,
        embedded_weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        let tab = ButcherTableau {
            name: name.into(),
            order,
            embedded_order,
            nodes,
            coupling,
            weights,
            embedded_weights,
        };
        tab.validate()?;
        Ok(tab)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn stages(&self) -> usize {
        self.nodes.len()
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn embedded_order(&self) -> u32 {
        self.embedded_order
    }

    /// Strong order of the lifted SDE scheme: half the ODE order.
    pub fn sde_order(&self) -> f64 {
        self.order as f64 / 2.0
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn coupling(&self) -> &[Vec<f64>] {
        &self.coupling
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn embedded_weights(&self) -> Option<&[f64]> {
        self.embedded_weights.as_deref()
    }

    pub fn is_embedded_pair(&self) -> bool {
        self.embedded_weights.is_some()
    }

    /// Checks the type invariants: strictly lower-triangular coupling
    /// (structural), row sums matching the nodes, and unit weight sums.
    pub fn validate(&self) -> Result<()> {
        let s = self.stages();
        if s == 0 {
            return Err(Error::Invalid("tableau must have at least one stage".into()));
        }
        if self.coupling.len() != s || self.weights.len() != s {
            return Err(Error::Dimension {
                what: "tableau arrays",
                expected: s,
                actual: self.coupling.len().min(self.weights.len()),
            });
        }
        for (i, row) in self.coupling.iter().enumerate() {
            if row.len() != i {
                return Err(Error::Tableau {
                    condition: format!("coupling row {} must have exactly {} entries (strictly lower triangular)", i + 1, i),
                    residual: row.len() as f64 - i as f64,
                });
            }
            let sum: f64 = row.iter().sum();
            let residual = (sum - self.nodes[i]).abs();
            if residual > INVARIANT_TOL {
                return Err(Error::Tableau {
                    condition: format!("row-sum condition c_{} = sum_j A_{},j", i + 1, i + 1),
                    residual,
                });
            }
        }
        let bsum: f64 = self.weights.iter().sum();
        if (bsum - 1.0).abs() > INVARIANT_TOL {
            return Err(Error::Tableau {
                condition: "weights must sum to 1".into(),
                residual: (bsum - 1.0).abs(),
            });
        }
        if let Some(bh) = &self.embedded_weights {
            if bh.len() != s {
                return Err(Error::Dimension {
                    what: "embedded weights",
                    expected: s,
                    actual: bh.len(),
                });
            }
            let sum: f64 = bh.iter().sum();
            if (sum - 1.0).abs() > INVARIANT_TOL {
                return Err(Error::Tableau {
                    condition: "embedded weights must sum to 1".into(),
                    residual: (sum - 1.0).abs(),
                });
            }
        }
        Ok(())
    }

    /// Quadrature residuals `|sum_i b_i c_i^(q-1) - 1/q|` for q = 1..=max_order,
    /// for the weights and (when present) the embedded weights.
    pub fn quadrature_residuals(&self, max_order: u32) -> Vec<QuadratureResidual> {
        (1..=max_order)
            .map(|q| QuadratureResidual {
                order: q,
                weights: quadrature_residual(&self.weights, &self.nodes, q),
                embedded: self
                    .embedded_weights
                    .as_ref()
                    .map(|bh| quadrature_residual(bh, &self.nodes, q)),
            })
            .collect()
    }

    /// The classic four-stage fourth-order scheme. No embedded weights.
    pub fn classic_rk4() -> Self {
        ButcherTableau {
            name: "rk4".into(),
            order: 4,
            embedded_order: 0,
            nodes: vec![0.0, 0.5, 0.5, 1.0],
            coupling: vec![vec![], vec![0.5], vec![0.0, 0.5], vec![0.0, 0.0, 1.0]],
            weights: vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
            embedded_weights: None,
        }
    }

    /// The Dormand-Prince 5(4) pair with seven stages.
    pub fn dormand_prince_54() -> Self {
        coefficients::dormand_prince_54()
    }

    /// The classical 13-stage 8(7) pair: order-8 propagating weights with
    /// an embedded order-7 formula.
    pub fn fehlberg_87() -> Self {
        coefficients::fehlberg_87()
    }

    /// A 39-stage 9(8) pair built by one level of Richardson extrapolation
    /// of the 13-stage order-8 formula: one full step combined with two
    /// half steps eliminates the leading order-8 error term, and the plain
    /// two-half-step composition serves as the embedded order-8 solution.
    pub fn extrapolated_98() -> Self {
        let (a, b, c) = coefficients::order8_base();
        extrapolated_pair("xrkf98", &a, &b, &c, 8, &[1, 2])
    }

    /// Serializes in the line-oriented tableau file format with 20
    /// significant digits.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("name {}\n", self.name));
        out.push_str(&format!("order {} {}\n", self.order, self.embedded_order));
        out.push_str(&format!("stages {}\n", self.stages()));
        out.push_str(&format!("c{}\n", join_numbers(&self.nodes)));
        for (i, row) in self.coupling.iter().enumerate() {
            out.push_str(&format!("a {}{}\n", i + 1, join_numbers(row)));
        }
        out.push_str(&format!("b{}\n", join_numbers(&self.weights)));
        if let Some(bh) = &self.embedded_weights {
            out.push_str(&format!("bhat{}\n", join_numbers(bh)));
        }
        out
    }

    /// Parses the tableau file format and validates all type invariants.
    pub fn parse(text: &str) -> Result<Self> {
        Parser::new(text).run()
    }
}

fn quadrature_residual(weights: &[f64], nodes: &[f64], q: u32) -> f64 {
    let sum: f64 = weights
        .iter()
        .zip(nodes)
        .map(|(b, c)| b * c.powi(q as i32 - 1))
        .sum();
    (sum - 1.0 / q as f64).abs()
}

fn join_numbers(values: &[f64]) -> String {
    let mut s = String::new();
    for v in values {
        s.push_str(&format!(" {:.19e}", v));
    }
    s
}

struct Parser<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            lines: text.lines().enumerate(),
        }
    }

    /// Next non-empty, non-comment line with its 1-based number.
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        for (idx, line) in self.lines.by_ref() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            return Ok((idx + 1, trimmed));
        }
        Err(Error::Parse {
            line: 0,
            message: "unexpected end of file".into(),
        })
    }

    fn run(mut self) -> Result<ButcherTableau> {
        let (ln, line) = self.next_line()?;
        let name = expect_keyword(ln, line, "name")?.trim().to_string();
        if name.is_empty() {
            return Err(Error::Parse {
                line: ln,
                message: "missing tableau name".into(),
            });
        }

        let (ln, line) = self.next_line()?;
        let rest = expect_keyword(ln, line, "order")?;
        let parts = parse_integers(ln, rest, 2)?;
        let (order, embedded_order) = (parts[0], parts[1]);

        let (ln, line) = self.next_line()?;
        let rest = expect_keyword(ln, line, "stages")?;
        let stages = parse_integers(ln, rest, 1)?[0] as usize;
        if stages == 0 {
            return Err(Error::Parse {
                line: ln,
                message: "stage count must be positive".into(),
            });
        }

        let (ln, line) = self.next_line()?;
        let rest = expect_keyword(ln, line, "c")?;
        let nodes = parse_numbers(ln, rest, stages)?;

        let mut coupling = Vec::with_capacity(stages);
        for i in 1..=stages {
            let (ln, line) = self.next_line()?;
            let rest = expect_keyword(ln, line, "a")?;
            let mut tokens = rest.split_whitespace();
            let row_index: usize = tokens
                .next()
                .ok_or_else(|| Error::Parse {
                    line: ln,
                    message: "missing row index after 'a'".into(),
                })?
                .parse()
                .map_err(|_| Error::Parse {
                    line: ln,
                    message: "invalid row index".into(),
                })?;
            if row_index != i {
                return Err(Error::Parse {
                    line: ln,
                    message: format!("expected coupling row {i}, found row {row_index}"),
                });
            }
            let values: std::result::Result<Vec<f64>, _> = tokens.map(str::parse::<f64>).collect();
            let values = values.map_err(|e| Error::Parse {
                line: ln,
                message: format!("invalid coefficient: {e}"),
            })?;
            if values.len() != i - 1 {
                return Err(Error::Parse {
                    line: ln,
                    message: format!("coupling row {} must have {} entries, found {}", i, i - 1, values.len()),
                });
            }
            coupling.push(values);
        }

        let (ln, line) = self.next_line()?;
        let rest = expect_keyword(ln, line, "b")?;
        let weights = parse_numbers(ln, rest, stages)?;

        let embedded_weights = match self.next_line() {
            Ok((ln, line)) => {
                let rest = expect_keyword(ln, line, "bhat")?;
                Some(parse_numbers(ln, rest, stages)?)
            }
            Err(_) => None,
        };

        if embedded_weights.is_some() && embedded_order == 0 {
            return Err(Error::Parse {
                line: 2,
                message: "embedded weights present but embedded order declared as 0".into(),
            });
        }
        if embedded_weights.is_none() && embedded_order != 0 {
            return Err(Error::Parse {
                line: 2,
                message: format!("embedded order {embedded_order} declared but no bhat line present"),
            });
        }

        ButcherTableau::new(name, order, embedded_order, nodes, coupling, weights, embedded_weights)
    }
}

fn expect_keyword<'a>(line_no: usize, line: &'a str, keyword: &str) -> Result<&'a str> {
    let mut split = line.splitn(2, char::is_whitespace);
    let head = split.next().unwrap_or("");
    if head != keyword {
        return Err(Error::Parse {
            line: line_no,
            message: format!("expected '{keyword}', found '{head}'"),
        });
    }
    Ok(split.next().unwrap_or(""))
}

fn parse_integers(line_no: usize, text: &str, expected: usize) -> Result<Vec<u32>> {
    let values: std::result::Result<Vec<u32>, _> = text.split_whitespace().map(str::parse).collect();
    let values = values.map_err(|e| Error::Parse {
        line: line_no,
        message: format!("invalid integer: {e}"),
    })?;
    if values.len() != expected {
        return Err(Error::Parse {
            line: line_no,
            message: format!("expected {expected} integers, found {}", values.len()),
        });
    }
    Ok(values)
}

fn parse_numbers(line_no: usize, text: &str, expected: usize) -> Result<Vec<f64>> {
    let values: std::result::Result<Vec<f64>, _> = text.split_whitespace().map(str::parse).collect();
    let values = values.map_err(|e| Error::Parse {
        line: line_no,
        message: format!("invalid number: {e}"),
    })?;
    if values.len() != expected {
        return Err(Error::Parse {
            line: line_no,
            message: format!("expected {expected} values, found {}", values.len()),
        });
    }
    Ok(values)
}

/// Builds an embedded pair by Richardson extrapolation of a base method of
/// order `p` over the given substep counts. Extrapolation weights are the
/// unique solution of the moment conditions `sum_j alpha_j = 1`,
/// `sum_j alpha_j / n_j^q = 0` for `q = p .. p + K - 2`; the embedded
/// weights solve the same system over all nodes but the first, giving a
/// formula of one order less. All arithmetic is exact rational.
fn extrapolated_pair(
    name: &str,
    base_a: &[Vec<Rational>],
    base_b: &[Rational],
    base_c: &[Rational],
    p: u32,
    nodes: &[i128],
) -> ButcherTableau {
    assert!(nodes.len() >= 2);
    let alpha = extrapolation_weights(nodes, p);
    let beta = extrapolation_weights(&nodes[1..], p);
    let sb = base_b.len();
    let stages: usize = nodes.iter().map(|&n| n as usize * sb).sum();

    let mut c = vec![0.0; stages];
    let mut a: Vec<Vec<f64>> = (0..stages).map(|i| vec![0.0; i]).collect();
    let mut b = vec![0.0; stages];
    let mut bhat = vec![0.0; stages];

    let mut offset = 0;
    for (block, &n) in nodes.iter().enumerate() {
        let inv_n = Rational::new(1, n);
        for sub in 0..n as usize {
            for sig in 0..sb {
                let row = offset + sub * sb + sig;
                c[row] = Rational::new(sub as i128, n).add(base_c[sig].mul(inv_n)).to_f64();
                for prev_sub in 0..sub {
                    for prev_sig in 0..sb {
                        a[row][offset + prev_sub * sb + prev_sig] = base_b[prev_sig].mul(inv_n).to_f64();
                    }
                }
                for r in 0..sig {
                    a[row][offset + sub * sb + r] = base_a[sig][r].mul(inv_n).to_f64();
                }
                b[row] = alpha[block].mul(base_b[sig]).mul(inv_n).to_f64();
                bhat[row] = if block == 0 {
                    0.0
                } else {
                    beta[block - 1].mul(base_b[sig]).mul(inv_n).to_f64()
                };
            }
        }
        offset += n as usize * sb;
    }

    let order = p + nodes.len() as u32 - 1;
    ButcherTableau::new(name, order, order - 1, c, a, b, Some(bhat))
        .expect("extrapolated tableau satisfies invariants by construction")
}

/// Exact extrapolation weights for substep counts `nodes` and base order `p`.
fn extrapolation_weights(nodes: &[i128], p: u32) -> Vec<Rational> {
    let k = nodes.len();
    let mut raw = Vec::with_capacity(k);
    for (j, &nj) in nodes.iter().enumerate() {
        // w_j = n_j^p * n_j^(K-1) * prod_{k != j} n_k / prod_{k != j} (n_k - n_j)
        let mut num = nj.pow(p) * nj.pow(k as u32 - 1);
        let mut den: i128 = 1;
        for (i, &nk) in nodes.iter().enumerate() {
            if i != j {
                num *= nk;
                den *= nk - nj;
            }
        }
        raw.push(Rational::new(num, den));
    }
    let total = raw.iter().fold(Rational::new(0, 1), |acc, &w| acc.add(w));
    raw.into_iter().map(|w| w.div(total)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_matches_hand_values() {
        let t = ButcherTableau::classic_rk4();
        assert_eq!(t.stages(), 4);
        assert_eq!(t.order(), 4);
        assert!(!t.is_embedded_pair());
        // weights sum
        assert!(((t.weights().iter().sum::<f64>()) - 1.0).abs() < 1e-15);
        // second-order quadrature sum: sum b_i c_i = 1/2
        let s: f64 = t.weights().iter().zip(t.nodes()).map(|(b, c)| b * c).sum();
        assert!((s - 0.5).abs() < 1e-15);
        // the half-step coupling of stage 2
        assert_eq!(t.coupling()[1][0], 0.5);
        t.validate().unwrap();
    }

    #[test]
    fn rk4_quadrature_residuals() {
        let t = ButcherTableau::classic_rk4();
        let res = t.quadrature_residuals(5);
        for r in &res[..4] {
            assert!(r.weights <= 1e-15, "order {} residual {}", r.order, r.weights);
        }
        // classical RK4 is not order 5 in quadrature: |5/24 - 1/5| = 1/120
        assert!((res[4].weights - 1.0 / 120.0).abs() < 1e-15, "got {}", res[4].weights);
    }

    #[test]
    fn quadrature_order_one_is_weight_sum() {
        for t in [
            ButcherTableau::classic_rk4(),
            ButcherTableau::dormand_prince_54(),
            ButcherTableau::fehlberg_87(),
            ButcherTableau::extrapolated_98(),
        ] {
            let r = t.quadrature_residuals(1);
            assert!(r[0].weights <= 1e-12);
        }
    }

    #[test]
    fn shipped_tableaus_pass_invariants_and_quadrature() {
        for t in [
            ButcherTableau::dormand_prince_54(),
            ButcherTableau::fehlberg_87(),
            ButcherTableau::extrapolated_98(),
        ] {
            t.validate().unwrap();
            for r in t.quadrature_residuals(t.order()) {
                assert!(
                    r.weights <= 1e-12,
                    "{}: quadrature order {} residual {:e}",
                    t.name(),
                    r.order,
                    r.weights
                );
                if r.order <= t.embedded_order() {
                    let e = r.embedded.unwrap();
                    assert!(
                        e <= 1e-12,
                        "{}: embedded quadrature order {} residual {:e}",
                        t.name(),
                        r.order,
                        e
                    );
                }
            }
        }
    }

    #[test]
    fn extrapolated_pair_has_expected_shape() {
        let t = ButcherTableau::extrapolated_98();
        assert_eq!(t.stages(), 39);
        assert_eq!(t.order(), 9);
        assert_eq!(t.embedded_order(), 8);
        // embedded order is exactly 8: the order-9 quadrature condition fails
        let r = t.quadrature_residuals(9);
        assert!(r[8].embedded.unwrap() > 1e-9);
    }

    #[test]
    fn serialize_parse_round_trip_is_bitwise() {
        for t in [
            ButcherTableau::classic_rk4(),
            ButcherTableau::dormand_prince_54(),
            ButcherTableau::fehlberg_87(),
            ButcherTableau::extrapolated_98(),
        ] {
            let text = t.serialize();
            let back = ButcherTableau::parse(&text).unwrap();
            assert_eq!(t, back, "round trip changed tableau {}", t.name());
        }
    }

    #[test]
    fn parse_rejects_row_sum_violation() {
        let mut t = ButcherTableau::classic_rk4();
        t.coupling[1][0] += 1e-3;
        let text = t.serialize();
        match ButcherTableau::parse(&text) {
            Err(Error::Tableau { condition, residual }) => {
                assert!(condition.contains("row-sum"), "{condition}");
                assert!((residual - 1e-3).abs() < 1e-9);
            }
            other => panic!("expected row-sum violation, got {other:?}"),
        }
    }

    #[test]
    fn parse_reports_line_numbers() {
        let text = "name broken\norder 4 0\nstages 2\nc 0.0 oops\n";
        match ButcherTableau::parse(text) {
            Err(Error::Parse { line: 4, .. }) => {}
            other => panic!("expected parse error on line 4, got {other:?}"),
        }
    }

    #[test]
    fn extrapolation_weights_satisfy_moment_conditions() {
        let alpha = extrapolation_weights(&[1, 2, 3, 4, 5, 6], 4);
        let sum: f64 = alpha.iter().map(|a| a.to_f64()).sum();
        assert!((sum - 1.0).abs() < 1e-12);
        for q in 4..=8u32 {
            let m: f64 = alpha
                .iter()
                .zip([1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0])
                .map(|(a, n)| a.to_f64() / n.powi(q as i32))
                .sum();
            assert!(m.abs() < 1e-12, "moment q={q} is {m:e}");
        }
    }
}
