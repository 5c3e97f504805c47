use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

/// Probabilities are kept inside `[PROB_CLAMP, 1 − PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    WganGp,
    Dcgan,
    Lsgan,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::WganGp, LossKind::Dcgan, LossKind::Lsgan];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::WganGp => "wgan_gp",
            LossKind::Dcgan => "dcgan",
            LossKind::Lsgan => "lsgan",
        }
    }
}

/// Fails with the term's name when its value is not finite.
pub fn ensure_finite(g: &Graph, v: Var, term: &str) -> Result<()> {
    if g.value(v).all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { what: term.to_string() })
    }
}

/// `mean D(x̃) − mean D(x) + λ·penalty`.
pub fn wgan_critic_loss(g: &mut Graph, d_real: Var, d_fake: Var, penalty: Option<(Var, f64)>) -> Result<Var> {
    let mr = g.mean(d_real);
    let mf = g.mean(d_fake);
    let mut loss = g.sub(mf, mr)?;
    if let Some((p, lambda)) = penalty {
        let scaled = g.scale(p, lambda);
        loss = g.add(loss, scaled)?;
    }
    ensure_finite(g, loss, "critic loss")?;
    Ok(loss)
}

/// `−mean D(x̃)`.
pub fn wgan_generator_loss(g: &mut Graph, d_fake: Var) -> Result<Var> {
    let m = g.mean(d_fake);
    let loss = g.neg(m);
    ensure_finite(g, loss, "generator loss")?;
    Ok(loss)
}

fn clamped_probability(g: &mut Graph, logits: Var) -> Var {
    let p = g.sigmoid(logits);
    let saturated = g
        .value(p)
        .data()
        .iter()
        .filter(|v| **v < PROB_CLAMP || **v > 1.0 - PROB_CLAMP)
        .count();
    if saturated > 0 {
        log::debug!("{saturated} discriminator probabilities clamped before log");
    }
    g.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// `−mean log D(x) − mean log(1 − D(x̃))` with `D = sigmoid(logits)`.
pub fn dcgan_discriminator_loss(g: &mut Graph, real_logits: Var, fake_logits: Var) -> Result<Var> {
    let pr = clamped_probability(g, real_logits);
    let pf = clamped_probability(g, fake_logits);
    let lr = g.ln(pr)?;
    let one_minus = g.neg(pf);
    let one_minus = g.add_scalar(one_minus, 1.0);
    let lf = g.ln(one_minus)?;
    let a = g.mean(lr);
    let b = g.mean(lf);
    let s = g.add(a, b)?;
    let loss = g.neg(s);
    ensure_finite(g, loss, "discriminator loss")?;
    Ok(loss)
}

/// Non-saturating `−mean log D(x̃)`, or the minimax `mean log(1 − D(x̃))`.
pub fn dcgan_generator_loss(g: &mut Graph, fake_logits: Var, minimax: bool) -> Result<Var> {
    let pf = clamped_probability(g, fake_logits);
    let loss = if minimax {
        let one_minus = g.neg(pf);
        let one_minus = g.add_scalar(one_minus, 1.0);
        let l = g.ln(one_minus)?;
        g.mean(l)
    } else {
        let l = g.ln(pf)?;
        let m = g.mean(l);
        g.neg(m)
    };
    ensure_finite(g, loss, "generator loss")?;
    Ok(loss)
}

/// `½·mean (D(x) − 1)² + ½·mean (D(x̃) + 1)²`.
pub fn lsgan_discriminator_loss(g: &mut Graph, d_real: Var, d_fake: Var) -> Result<Var> {
    let r = g.add_scalar(d_real, -1.0);
    let r = g.square(r);
    let r = g.mean(r);
    let f = g.add_scalar(d_fake, 1.0);
    let f = g.square(f);
    let f = g.mean(f);
    let s = g.add(r, f)?;
    let loss = g.scale(s, 0.5);
    ensure_finite(g, loss, "discriminator loss")?;
    Ok(loss)
}

/// `½·mean D(x̃)²`.
pub fn lsgan_generator_loss(g: &mut Graph, d_fake: Var) -> Result<Var> {
    let sq = g.square(d_fake);
    let m = g.mean(sq);
    let loss = g.scale(m, 0.5);
    ensure_finite(g, loss, "generator loss")?;
    Ok(loss)
}
