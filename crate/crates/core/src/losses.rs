//! Training objectives.
//!
//! All reductions are per-element means. Depths are clamped into
//! `[DEPTH_MIN, DEPTH_MAX]` before any logarithm.

use crate::tensor::{Graph, Result, Shape, Tensor, TensorError, Var};

pub const DEPTH_MIN: f64 = 1e-3;
pub const DEPTH_MAX: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub depth: f64,
    pub cmrc: f64,
    pub gradient: f64,
    pub normal: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            depth: 1.0,
            cmrc: 2.0,
            gradient: 1.0,
            normal: 1.0,
        }
    }
}

/// Steps at which the gradient and surface-normal terms switch on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossSchedule {
    pub gradient_on_step: usize,
    pub normal_on_step: usize,
}

impl Default for LossSchedule {
    fn default() -> Self {
        LossSchedule {
            gradient_on_step: 4000,
            normal_on_step: 8000,
        }
    }
}

impl LossSchedule {
    /// Thresholds at 1/2 and 3/4 of a run of `steps`.
    pub fn scaled(steps: usize) -> Self {
        LossSchedule {
            gradient_on_step: steps / 2,
            normal_on_step: steps * 3 / 4,
        }
    }

    pub fn gradient_active(&self, step: usize) -> bool {
        step >= self.gradient_on_step
    }

    pub fn normal_active(&self, step: usize) -> bool {
        step >= self.normal_on_step
    }
}

fn check_same(op: &'static str, g: &Graph, a: Var, b: Var) -> Result<()> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa != sb {
        return Err(TensorError::Invalid {
            op,
            reason: format!("shape {sa} vs {sb}"),
        });
    }
    Ok(())
}

/// `sqrt(mean((log d* − log d)²))`
pub fn l_depth(g: &mut Graph, d_star: Var, d: Var) -> Result<Var> {
    check_same("l_depth", g, d_star, d)?;
    let a = g.clamp(d_star, DEPTH_MIN, DEPTH_MAX)?;
    let b = g.clamp(d, DEPTH_MIN, DEPTH_MAX)?;
    let la = g.log(a)?;
    let lb = g.log(b)?;
    let diff = g.sub(la, lb)?;
    let sq = g.square(diff)?;
    let m = g.mean(sq)?;
    g.sqrt(m)
}

/// Auto-encoder reconstruction loss; same formula as [`l_depth`].
pub fn l_ae(g: &mut Graph, d_hat: Var, d: Var) -> Result<Var> {
    l_depth(g, d_hat, d)
}

/// `Σ_levels mean|Z_id − Z_d|`
pub fn l_cmrc(g: &mut Graph, z_id: &[Var], z_d: &[Var]) -> Result<Var> {
    if z_id.len() != z_d.len() || z_id.is_empty() {
        return Err(TensorError::Mismatch {
            op: "l_cmrc",
            dim: "level count",
            left: z_id.len(),
            right: z_d.len(),
        });
    }
    let mut terms = Vec::with_capacity(z_id.len());
    for (&a, &b) in z_id.iter().zip(z_d) {
        check_same("l_cmrc", g, a, b)?;
        let diff = g.sub(a, b)?;
        let abs = g.abs(diff)?;
        terms.push(g.mean(abs)?);
    }
    g.add_all(&terms)
}

/// Horizontal and vertical Sobel responses of a `[B, 1, H, W]` map, with
/// replicate padding so the outputs keep the input size.
pub fn sobel(g: &mut Graph, map: Var) -> Result<(Var, Var)> {
    let s = g.shape(map);
    if s.channels() != 1 || s.height() < 3 || s.width() < 3 {
        return Err(TensorError::Invalid {
            op: "sobel",
            reason: format!("needs a one-channel map of at least 3x3, got {s}"),
        });
    }
    #[rustfmt::skip]
    let kernel = vec![
        -1.0, 0.0, 1.0,
        -2.0, 0.0, 2.0,
        -1.0, 0.0, 1.0,
        -1.0, -2.0, -1.0,
         0.0, 0.0, 0.0,
         1.0, 2.0, 1.0,
    ];
    let k = g.constant(Tensor::from_vec(Shape::new(2, 1, 3, 3)?, kernel)?);
    let padded = g.replicate_pad(map, 1)?;
    let both = g.conv2d(padded, k, None, 1, 0)?;
    let gx = g.slice_channels(both, 0, 1)?;
    let gy = g.slice_channels(both, 1, 1)?;
    Ok((gx, gy))
}

/// Graph-free Sobel responses.
pub fn sobel_gradients(map: &Tensor) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let m = g.constant(map.clone());
    let (gx, gy) = sobel(&mut g, m)?;
    Ok((g.value(gx).clone(), g.value(gy).clone()))
}

/// `mean(|gx* − gx| + |gy* − gy|)`
pub fn l_gradient(g: &mut Graph, d_star: Var, d: Var) -> Result<Var> {
    check_same("l_gradient", g, d_star, d)?;
    let (ax, ay) = sobel(g, d_star)?;
    let (bx, by) = sobel(g, d)?;
    let dx = g.sub(ax, bx)?;
    let dy = g.sub(ay, by)?;
    let dx = g.abs(dx)?;
    let dy = g.abs(dy)?;
    let total = g.add(dx, dy)?;
    g.mean(total)
}

/// Mean cosine dissimilarity of the normals `(−gx, −gy, 1)`.
pub fn l_normal(g: &mut Graph, d_star: Var, d: Var) -> Result<Var> {
    check_same("l_normal", g, d_star, d)?;
    let (ax, ay) = sobel(g, d_star)?;
    let (bx, by) = sobel(g, d)?;
    // <n*, n> = gx*·gx + gy*·gy + 1; the signs of the first two components cancel.
    let xx = g.mul(ax, bx)?;
    let yy = g.mul(ay, by)?;
    let dot = g.add(xx, yy)?;
    let dot = g.offset(dot, 1.0)?;
    let norm = |g: &mut Graph, x: Var, y: Var| -> Result<Var> {
        let x2 = g.square(x)?;
        let y2 = g.square(y)?;
        let s = g.add(x2, y2)?;
        let s = g.offset(s, 1.0)?;
        g.sqrt(s)
    };
    let na = norm(g, ax, ay)?;
    let nb = norm(g, bx, by)?;
    let denom = g.mul(na, nb)?;
    let cos = g.div(dot, denom)?;
    let dissim = g.scale(cos, -1.0)?;
    let dissim = g.offset(dissim, 1.0)?;
    g.mean(dissim)
}

/// Loss terms of one stage-2 step. Absent terms were not evaluated.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossTerms {
    pub depth: Option<Var>,
    pub cmrc: Option<Var>,
    pub gradient: Option<Var>,
    pub normal: Option<Var>,
}

/// Weighted stage-2 objective. Scheduled terms contribute nothing before
/// their start step, whether or not they were evaluated.
pub fn total_stage2(
    g: &mut Graph,
    terms: &LossTerms,
    weights: &LossWeights,
    schedule: &LossSchedule,
    step: usize,
) -> Result<Var> {
    let mut parts = Vec::with_capacity(4);
    let gated = [
        (terms.depth, weights.depth, true),
        (terms.cmrc, weights.cmrc, true),
        (terms.gradient, weights.gradient, schedule.gradient_active(step)),
        (terms.normal, weights.normal, schedule.normal_active(step)),
    ];
    for (term, weight, active) in gated {
        if let (Some(v), true) = (term, active) {
            parts.push(g.scale(v, weight)?);
        }
    }
    if parts.is_empty() {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    g.add_all(&parts)
}
