use super::tape::{Tape, Var};
use crate::error::{CoreError, Result};

/// Placement of the recurrent candidate bias.
///
/// `SingleBias` applies the reset gate before the recurrent matmul:
/// cand = act(x·W_h + (r⊙h)·U_h + b_h). `ResetAfter` applies it to the
/// already-biased recurrent term, which needs a second bias vector:
/// cand = act(x·W_h + b_h + r⊙(h·U_h + b_hh)).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GruConvention {
    SingleBias,
    ResetAfter,
}

/// Parameter handles for one GRU cell. Input kernels are [in, K],
/// recurrent kernels [K, K], biases [K]. `b_hh` is only used (and
/// required) by [`GruConvention::ResetAfter`].
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub u_h: Var,
    pub b_h: Var,
    pub b_hh: Option<Var>,
}

fn gate(tape: &mut Tape, x: Var, h: Var, w: Var, u: Var, b: Var) -> Result<Var> {
    let xa = tape.matmul(x, w)?;
    let ha = tape.matmul(h, u)?;
    let s = tape.add(xa, ha)?;
    let s = tape.add(s, b)?;
    tape.sigmoid(s)
}

/// One GRU step: returns h' = h + z⊙(cand − h), algebraically equal to
/// (1−z)⊙h + z⊙cand. The candidate activation is relu.
pub fn gru_cell(
    tape: &mut Tape,
    x: Var,
    h: Var,
    vars: &GruVars,
    convention: GruConvention,
) -> Result<Var> {
    let z = gate(tape, x, h, vars.w_z, vars.u_z, vars.b_z)?;
    let r = gate(tape, x, h, vars.w_r, vars.u_r, vars.b_r)?;

    let pre = match convention {
        GruConvention::SingleBias => {
            let rh = tape.mul(r, h)?;
            let xa = tape.matmul(x, vars.w_h)?;
            let ha = tape.matmul(rh, vars.u_h)?;
            let s = tape.add(xa, ha)?;
            tape.add(s, vars.b_h)?
        }
        GruConvention::ResetAfter => {
            let b_hh = vars.b_hh.ok_or_else(|| {
                CoreError::InvalidParameter(
                    "reset-after GRU needs the second candidate bias".into(),
                )
            })?;
            let ha = tape.matmul(h, vars.u_h)?;
            let ha = tape.add(ha, b_hh)?;
            let rha = tape.mul(r, ha)?;
            let xa = tape.matmul(x, vars.w_h)?;
            let xa = tape.add(xa, vars.b_h)?;
            tape.add(xa, rha)?
        }
    };
    let cand = tape.relu(pre)?;

    let delta = tape.sub(cand, h)?;
    let step = tape.mul(z, delta)?;
    tape.add(h, step)
}
