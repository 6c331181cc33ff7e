use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Var;

/// Elementwise nonlinearity.
///
/// Textual form: `tanh`, `relu`, `softplus`, `softplus-centered`, `sigmoid`,
/// `identity`, and `prelu(<slope>)` (bare `prelu` means slope 0.25).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Activation {
    Tanh,
    Relu,
    Softplus,
    /// `softplus(s) - ln 2`, which passes through the origin.
    SoftplusCentered,
    Sigmoid,
    Identity,
    PRelu(f64),
}

impl Activation {
    pub fn eval(&self, s: f64) -> f64 {
        use crate::tensor::tape_fns::{sigmoid, softplus};
        match *self {
            Activation::Tanh => s.tanh(),
            Activation::Relu => s.max(0.0),
            Activation::Softplus => softplus(s),
            Activation::SoftplusCentered => softplus(s) - std::f64::consts::LN_2,
            Activation::Sigmoid => sigmoid(s),
            Activation::Identity => s,
            Activation::PRelu(a) => {
                if s > 0.0 {
                    s
                } else {
                    a * s
                }
            }
        }
    }

    pub fn apply_var<'t>(&self, x: Var<'t>) -> Var<'t> {
        match *self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.relu(),
            Activation::Softplus => x.softplus(),
            Activation::SoftplusCentered => x.softplus().add_scalar(-std::f64::consts::LN_2),
            Activation::Sigmoid => x.sigmoid(),
            Activation::Identity => x,
            Activation::PRelu(a) => x.prelu(a),
        }
    }

    /// `F(s) = integral of f from 0 to s`, where a closed form is available.
    pub fn antiderivative(&self, s: f64) -> Result<f64> {
        use crate::tensor::tape_fns::{logcosh, softplus};
        Ok(match *self {
            Activation::Tanh => logcosh(s),
            Activation::Relu => 0.5 * s.max(0.0).powi(2),
            Activation::Identity => 0.5 * s * s,
            Activation::PRelu(a) => {
                if s > 0.0 {
                    0.5 * s * s
                } else {
                    0.5 * a * s * s
                }
            }
            // d/ds softplus(s) = sigmoid(s), and softplus(0) = ln 2.
            Activation::Sigmoid => softplus(s) - std::f64::consts::LN_2,
            Activation::Softplus | Activation::SoftplusCentered => {
                return Err(Error::NoAntiderivative(self.to_string()))
            }
        })
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Tanh => f.write_str("tanh"),
            Activation::Relu => f.write_str("relu"),
            Activation::Softplus => f.write_str("softplus"),
            Activation::SoftplusCentered => f.write_str("softplus-centered"),
            Activation::Sigmoid => f.write_str("sigmoid"),
            Activation::Identity => f.write_str("identity"),
            Activation::PRelu(a) => write!(f, "prelu({a})"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Ok(match s.as_str() {
            "tanh" => Activation::Tanh,
            "relu" => Activation::Relu,
            "softplus" => Activation::Softplus,
            "softplus-centered" | "softplus_centered" => Activation::SoftplusCentered,
            "sigmoid" => Activation::Sigmoid,
            "identity" | "linear" => Activation::Identity,
            "prelu" => Activation::PRelu(0.25),
            other => {
                let slope = other
                    .strip_prefix("prelu(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::UnknownActivation(other.to_string()))?;
                Activation::PRelu(slope)
            }
        })
    }
}

impl TryFrom<String> for Activation {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Activation> for String {
    fn from(a: Activation) -> String {
        a.to_string()
    }
}
