use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Var;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    #[default]
    Mse,
    Mae,
}

impl std::str::FromStr for Loss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Loss::Mse),
            "mae" => Ok(Loss::Mae),
            other => Err(Error::InvalidConfig(format!("unknown loss {other}"))),
        }
    }
}

impl Loss {
    pub fn apply<'t>(&self, pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
        match self {
            Loss::Mse => mse_loss(pred, target),
            Loss::Mae => mae_loss(pred, target),
        }
    }
}

fn check<'t>(pred: &Var<'t>, target: &Var<'t>, op: &'static str) -> Result<()> {
    let (a, b) = (pred.shape(), target.shape());
    if a != b {
        return Err(Error::shape(op, &a, &b));
    }
    Ok(())
}

/// Mean of squared differences over all elements.
pub fn mse_loss<'t>(pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    check(&pred, &target, "mse_loss")?;
    Ok(pred.sub(target)?.square().mean())
}

/// Mean of absolute differences over all elements.
pub fn mae_loss<'t>(pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    check(&pred, &target, "mae_loss")?;
    Ok(pred.sub(target)?.abs().mean())
}
