use super::{ArchSpec, Variant};
use crate::error::{Error, Result};

fn with_width(template: &ArchSpec, w: usize, p: usize) -> ArchSpec {
    let mut spec = template.clone();
    spec.widths = vec![w; template.widths.len().max(1)];
    match template.variant {
        Variant::Anode => spec.p = p,
        Variant::Csode => {
            let depth = template.control_widths.as_ref().map_or(1, |c| c.len().max(1));
            spec.widths = vec![w; template.m.max(1)];
            spec.m = spec.widths.len();
            spec.control_widths = Some(vec![w; depth]);
        }
        Variant::CsodeAdapt => {
            spec.widths = vec![w; template.m.max(1)];
            spec.m = spec.widths.len();
        }
        Variant::Node | Variant::Sonode => {}
    }
    spec
}

/// Finds the architecture of the template's variant whose parameter count is
/// closest to `target`, searching one shared hidden width `w` (and the
/// augmentation size `p` for anode). Fails when the best relative deviation
/// exceeds `tolerance`.
///
/// Widths are applied as: every hidden layer for node/anode/sonode; every
/// subnet and every control-rate hidden layer for csode; every subnet for
/// csode-adapt (conv channels stay as given).
pub fn match_param_budget(target: usize, template: &ArchSpec, tolerance: f64) -> Result<ArchSpec> {
    let p_range: Vec<usize> = match template.variant {
        Variant::Anode => (1..=template.n.max(1)).collect(),
        _ => vec![template.p],
    };
    let mut best: Option<(usize, ArchSpec)> = None;
    for &p in &p_range {
        let mut w = 1usize;
        loop {
            let spec = with_width(template, w, p);
            let count = spec.param_count();
            let diff = count.abs_diff(target);
            if best.as_ref().is_none_or(|(d, _)| diff < *d) {
                best = Some((diff, spec));
            }
            // Counts grow monotonically with w, so stop once past the target.
            if count > target || w >= 1 << 24 {
                break;
            }
            w += 1;
        }
    }
    let (diff, spec) = best.expect("at least one candidate evaluated");
    if target == 0 || diff as f64 > tolerance * target as f64 {
        return Err(Error::Infeasible {
            target,
            closest: spec.param_count(),
        });
    }
    Ok(spec)
}
