use crate::model::Table;

/// Terminal claim `g(S_T)`, paid only if the issuer has not defaulted.
#[derive(Debug, Clone, PartialEq)]
pub enum Payoff {
    Call(f64),
    Put(f64),
    /// Pays 1 when `S_T > K`.
    Digital(f64),
    Identity,
    Constant(f64),
    PiecewiseLinear(Table),
}

impl Payoff {
    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            Payoff::Call(k) => (s - k).max(0.0),
            Payoff::Put(k) => (k - s).max(0.0),
            Payoff::Digital(k) => {
                if s > *k {
                    1.0
                } else {
                    0.0
                }
            }
            Payoff::Identity => s,
            Payoff::Constant(c) => *c,
            Payoff::PiecewiseLinear(t) => t.eval(s),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Payoff::Constant(c) => *c == 0.0,
            Payoff::PiecewiseLinear(t) => t.ys().iter().all(|&y| y == 0.0),
            _ => false,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Payoff::Call(_) => "call",
            Payoff::Put(_) => "put",
            Payoff::Digital(_) => "digital",
            Payoff::Identity => "identity",
            Payoff::Constant(_) => "constant",
            Payoff::PiecewiseLinear(_) => "piecewise",
        }
    }
}
