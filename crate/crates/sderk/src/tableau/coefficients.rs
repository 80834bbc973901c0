//! Exact rational coefficient tables for the shipped embedded pairs.

use super::rational::Rational;
use super::ButcherTableau;

fn r(num: i128, den: i128) -> Rational {
    Rational::new(num, den)
}

/// Dormand-Prince 5(4): seven stages, first-same-as-last structure.
pub fn dormand_prince_54() -> ButcherTableau {
    let c = [r(0, 1), r(1, 5), r(3, 10), r(4, 5), r(8, 9), r(1, 1), r(1, 1)];
    let a: Vec<Vec<Rational>> = vec![
        vec![],
        vec![r(1, 5)],
        vec![r(3, 40), r(9, 40)],
        vec![r(44, 45), r(-56, 15), r(32, 9)],
        vec![r(19372, 6561), r(-25360, 2187), r(64448, 6561), r(-212, 729)],
        vec![r(9017, 3168), r(-355, 33), r(46732, 5247), r(49, 176), r(-5103, 18656)],
        vec![r(35, 384), r(0, 1), r(500, 1113), r(125, 192), r(-2187, 6784), r(11, 84)],
    ];
    let b = [
        r(35, 384),
        r(0, 1),
        r(500, 1113),
        r(125, 192),
        r(-2187, 6784),
        r(11, 84),
        r(0, 1),
    ];
    let bhat = [
        r(5179, 57600),
        r(0, 1),
        r(7571, 16695),
        r(393, 640),
        r(-92097, 339200),
        r(187, 2100),
        r(1, 40),
    ];
    ButcherTableau::new(
        "dp54",
        5,
        4,
        c.iter().map(|v| v.to_f64()).collect(),
        a.iter().map(|row| row.iter().map(|v| v.to_f64()).collect()).collect(),
        b.iter().map(|v| v.to_f64()).collect(),
        Some(bhat.iter().map(|v| v.to_f64()).collect()),
    )
    .expect("dp54 coefficients satisfy invariants")
}

/// Nodes and coupling matrix of the classical 13-stage order 8(7) pair.
fn stage_13_nodes() -> Vec<Rational> {
    vec![
        r(0, 1),
        r(2, 27),
        r(1, 9),
        r(1, 6),
        r(5, 12),
        r(1, 2),
        r(5, 6),
        r(1, 6),
        r(2, 3),
        r(1, 3),
        r(1, 1),
        r(0, 1),
        r(1, 1),
    ]
}

fn stage_13_coupling() -> Vec<Vec<Rational>> {
    vec![
        vec![],
        vec![r(2, 27)],
        vec![r(1, 36), r(1, 12)],
        vec![r(1, 24), r(0, 1), r(1, 8)],
        vec![r(5, 12), r(0, 1), r(-25, 16), r(25, 16)],
        vec![r(1, 20), r(0, 1), r(0, 1), r(1, 4), r(1, 5)],
        vec![r(-25, 108), r(0, 1), r(0, 1), r(125, 108), r(-65, 27), r(125, 54)],
        vec![r(31, 300), r(0, 1), r(0, 1), r(0, 1), r(61, 225), r(-2, 9), r(13, 900)],
        vec![r(2, 1), r(0, 1), r(0, 1), r(-53, 6), r(704, 45), r(-107, 9), r(67, 90), r(3, 1)],
        vec![
            r(-91, 108),
            r(0, 1),
            r(0, 1),
            r(23, 108),
            r(-976, 135),
            r(311, 54),
            r(-19, 60),
            r(17, 6),
            r(-1, 12),
        ],
        vec![
            r(2383, 4100),
            r(0, 1),
            r(0, 1),
            r(-341, 164),
            r(4496, 1025),
            r(-301, 82),
            r(2133, 4100),
            r(45, 82),
            r(45, 164),
            r(18, 41),
        ],
        vec![
            r(3, 205),
            r(0, 1),
            r(0, 1),
            r(0, 1),
            r(0, 1),
            r(-6, 41),
            r(-3, 205),
            r(-3, 41),
            r(3, 41),
            r(6, 41),
            r(0, 1),
        ],
        vec![
            r(-1777, 4100),
            r(0, 1),
            r(0, 1),
            r(-341, 164),
            r(4496, 1025),
            r(-289, 82),
            r(2193, 4100),
            r(51, 82),
            r(33, 164),
            r(12, 41),
            r(0, 1),
            r(1, 1),
        ],
    ]
}

/// Order-8 propagating weights (use stages 6-10 and the two correction
/// stages 12, 13).
fn order8_weights() -> Vec<Rational> {
    vec![
        r(0, 1),
        r(0, 1),
        r(0, 1),
        r(0, 1),
        r(0, 1),
        r(34, 105),
        r(9, 35),
        r(9, 35),
        r(9, 280),
        r(9, 280),
        r(0, 1),
        r(41, 840),
        r(41, 840),
    ]
}

/// Order-7 weights (use stages 1, 6-11).
fn order7_weights() -> Vec<Rational> {
    vec![
        r(41, 840),
        r(0, 1),
        r(0, 1),
        r(0, 1),
        r(0, 1),
        r(34, 105),
        r(9, 35),
        r(9, 35),
        r(9, 280),
        r(9, 280),
        r(41, 840),
        r(0, 1),
        r(0, 1),
    ]
}

/// The 13-stage 8(7) pair: order-8 solution propagates, order-7 estimates.
pub fn fehlberg_87() -> ButcherTableau {
    ButcherTableau::new(
        "rkf87",
        8,
        7,
        stage_13_nodes().iter().map(|v| v.to_f64()).collect(),
        stage_13_coupling()
            .iter()
            .map(|row| row.iter().map(|v| v.to_f64()).collect())
            .collect(),
        order8_weights().iter().map(|v| v.to_f64()).collect(),
        Some(order7_weights().iter().map(|v| v.to_f64()).collect()),
    )
    .expect("8(7) coefficients satisfy invariants")
}

/// Rational (A, b, c) of the plain order-8 method, the extrapolation base.
pub fn order8_base() -> (Vec<Vec<Rational>>, Vec<Rational>, Vec<Rational>) {
    (stage_13_coupling(), order8_weights(), stage_13_nodes())
}
