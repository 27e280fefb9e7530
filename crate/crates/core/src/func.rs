//! Scalar coefficient functions shared by time profiles and model coefficients.
//!
//! Every coefficient in the model is a real function of some subset of
//! `(t, ξ, x, y, z)`. Built-in families are native closures; user-supplied
//! families are parsed expressions (see [`crate::expr`]).

use std::fmt;
use std::sync::Arc;

use crate::expr::Expr;

/// Arguments passed to a coefficient. Unused slots are ignored by the callee.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Args {
    pub t: f64,
    pub xi: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Args {
    pub fn new(t: f64, xi: f64, x: f64, y: f64, z: f64) -> Self {
        Args { t, xi, x, y, z }
    }
}

type NativeFn = dyn Fn(&Args) -> f64 + Send + Sync;

/// A real-valued coefficient.
#[derive(Clone)]
pub enum ScalarFn {
    Zero,
    Constant(f64),
    Native { label: String, f: Arc<NativeFn> },
    Expr(Arc<Expr>),
}

impl ScalarFn {
    pub fn native(label: impl Into<String>, f: impl Fn(&Args) -> f64 + Send + Sync + 'static) -> Self {
        ScalarFn::Native {
            label: label.into(),
            f: Arc::new(f),
        }
    }

    pub fn expr(e: Expr) -> Self {
        ScalarFn::Expr(Arc::new(e))
    }

    #[inline]
    pub fn eval(&self, a: &Args) -> f64 {
        match self {
            ScalarFn::Zero => 0.0,
            ScalarFn::Constant(c) => *c,
            ScalarFn::Native { f, .. } => f(a),
            ScalarFn::Expr(e) => e.eval(a),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ScalarFn::Zero) || matches!(self, ScalarFn::Constant(c) if *c == 0.0)
    }

    pub fn label(&self) -> String {
        match self {
            ScalarFn::Zero => "0".to_string(),
            ScalarFn::Constant(c) => format!("{c}"),
            ScalarFn::Native { label, .. } => label.clone(),
            ScalarFn::Expr(e) => e.source().to_string(),
        }
    }
}

impl fmt::Debug for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarFn({})", self.label())
    }
}
