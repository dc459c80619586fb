use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::{ConvGeometry, LayerKind};
use crate::timetree::{Condition, ConditionKind, LinearFit, SnapRule, TimeModel};

/// Grid resolution used to check a region's sign property.
pub const VERIFY_GRID: usize = 32;
/// Square edge checked for regions with no finite bound.
pub const UNBOUNDED_EXTENT: f64 = 65536.0;

const IN_CHANNEL: usize = 4;
const OUT_CHANNEL: usize = 5;

/// A leaf law restricted to one convolution geometry:
/// `uv·u·v + u·u + v·v + c` in terms of `u = in_channel`, `v = out_channel`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BilinearPoly {
    pub uv: f64,
    pub u: f64,
    pub v: f64,
    pub c: f64,
}

impl BilinearPoly {
    pub fn eval(&self, u: f64, v: f64) -> f64 {
        self.uv * u * v + self.u * u + self.v * v + self.c
    }
}

/// Time difference `A·u·v + B·u + C·v + D` between the rounded-up
/// configuration on the true branch and the original on the false branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenefitPoly {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl BenefitPoly {
    pub fn eval(&self, u: f64, v: f64) -> f64 {
        self.a * u * v + self.b * u + self.c * v + self.d
    }

    /// Value on the diagonal `u = v = x`.
    pub fn diagonal(&self, x: f64) -> f64 {
        (self.a * x + self.b + self.c) * x + self.d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    InChannel,
    OutChannel,
}

impl Axis {
    pub fn of_feature(feature: usize) -> Option<Self> {
        match feature {
            IN_CHANNEL => Some(Axis::InChannel),
            OUT_CHANNEL => Some(Axis::OutChannel),
            _ => None,
        }
    }

    pub fn feature(self) -> usize {
        match self {
            Axis::InChannel => IN_CHANNEL,
            Axis::OutChannel => OUT_CHANNEL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionBound {
    /// Expansion does not pay off even at `u = v = 1`.
    Empty,
    Finite(f64),
    Unbounded,
}

impl RegionBound {
    /// Square edge to use when snapping, or `None` for an empty region.
    pub fn edge(self) -> Option<f64> {
        match self {
            RegionBound::Empty => None,
            RegionBound::Finite(b) => Some(b),
            RegionBound::Unbounded => Some(UNBOUNDED_EXTENT),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRegion {
    pub node_id: usize,
    pub condition: Condition,
    pub geometry: ConvGeometry,
    pub axis: Axis,
    pub delta: u32,
    pub bound: RegionBound,
    pub contour: BenefitPoly,
    /// The sign property held on the verification grid.
    pub verified: bool,
}

impl ExpansionRegion {
    pub fn is_usable(&self) -> bool {
        self.verified && self.bound != RegionBound::Empty
    }
}

/// Restricts a CNN leaf law to `geometry`, leaving the channel counts free.
pub fn cnn_time_polynomial(fit: &LinearFit, geometry: &ConvGeometry) -> Result<BilinearPoly> {
    if fit.w.len() != LayerKind::Cnn.explanatory_len() {
        return Err(Error::invalid(format!("expected a CNN law with 3 coefficients, got {}", fit.w.len())));
    }
    let (oh, ow) = geometry.output_dims()?;
    let (oh, ow) = (f64::from(oh), f64::from(ow));
    let (ih, iw) = (f64::from(geometry.in_height), f64::from(geometry.in_width));
    let (kh, kw) = (f64::from(geometry.kernel_height), f64::from(geometry.kernel_width));
    let (w_flops, w_mem, w_param) = (fit.w[0], fit.w[1], fit.w[2]);
    // flops = 2·oh·ow·kh·kw·u·v; mem = ih·iw·u + oh·ow·v + oh·ow·kh·kw·u; params = kh·kw·u·v + 1
    Ok(BilinearPoly {
        uv: w_flops * 2.0 * oh * ow * kh * kw + w_param * kh * kw,
        u: w_mem * (ih * iw + oh * ow * kh * kw),
        v: w_mem * oh * ow,
        c: fit.b + w_param,
    })
}

/// `y_true(rounded) − y_false(original)` where the coordinate on `axis` is
/// rounded up by `delta`.
pub fn expansion_benefit(
    leaf_true: &LinearFit,
    leaf_false: &LinearFit,
    geometry: &ConvGeometry,
    axis: Axis,
    delta: u32,
) -> Result<BenefitPoly> {
    let t = cnn_time_polynomial(leaf_true, geometry)?;
    let f = cnn_time_polynomial(leaf_false, geometry)?;
    let delta = f64::from(delta);
    Ok(match axis {
        Axis::InChannel => BenefitPoly {
            a: t.uv - f.uv,
            b: t.u - f.u,
            c: t.uv * delta + t.v - f.v,
            d: t.u * delta + t.c - f.c,
        },
        Axis::OutChannel => BenefitPoly {
            a: t.uv - f.uv,
            b: t.uv * delta + t.u - f.u,
            c: t.v - f.v,
            d: t.v * delta + t.c - f.c,
        },
    })
}

/// Smallest `x > 1` with `diagonal(x) = 0`, if any.
fn first_diagonal_root(p: &BenefitPoly) -> Option<f64> {
    let (qa, qb, qc) = (p.a, p.b + p.c, p.d);
    let mut roots = Vec::new();
    if qa == 0.0 {
        if qb != 0.0 {
            roots.push(-qc / qb);
        }
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let q = -0.5 * (qb + qb.signum() * disc.sqrt());
            roots.push(q / qa);
            if q != 0.0 {
                roots.push(qc / q);
            }
        }
    }
    roots.into_iter().filter(|r| r.is_finite() && *r > 1.0).min_by(f64::total_cmp)
}

/// Edge of the square `[1, bound)²` on whose diagonal expansion is beneficial.
pub fn safe_region(p: &BenefitPoly) -> RegionBound {
    if p.diagonal(1.0).partial_cmp(&0.0) != Some(std::cmp::Ordering::Less) {
        return RegionBound::Empty;
    }
    let Some(estimate) = first_diagonal_root(p) else {
        return RegionBound::Unbounded;
    };
    // bracket the sign change, then bisect to machine precision
    let mut lo = 1.0;
    let mut hi = estimate;
    let mut step = estimate * 1e-9;
    while p.diagonal(hi) < 0.0 {
        lo = hi;
        hi += step;
        step *= 2.0;
    }
    if p.diagonal(lo) >= 0.0 {
        lo = 1.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if p.diagonal(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    RegionBound::Finite(hi)
}

/// Checks `benefit(u, v) < 0` on a `VERIFY_GRID²` lattice over the square
/// `[1, edge)²`; the top row and column sit just inside the edge.
pub fn verify_region(p: &BenefitPoly, bound: RegionBound) -> bool {
    let Some(edge) = bound.edge() else { return false };
    let top = edge * (1.0 - 1e-9);
    if top <= 1.0 {
        return false;
    }
    let at = |i: usize| 1.0 + (top - 1.0) * i as f64 / (VERIFY_GRID - 1) as f64;
    (0..VERIFY_GRID).all(|i| (0..VERIFY_GRID).all(|j| p.eval(at(i), at(j)) < 0.0))
}

/// Safe-expansion region for the Multiple condition at `node_id` of a CNN
/// model, comparing the node's two child laws under `geometry`.
pub fn condition_region(model: &TimeModel, node_id: usize, geometry: &ConvGeometry) -> Result<ExpansionRegion> {
    if model.kind != LayerKind::Cnn {
        return Err(Error::invalid(format!("expansion regions need a CNN model, got {}", model.kind)));
    }
    let node = model.nodes.get(node_id).ok_or_else(|| Error::invalid(format!("no node {node_id}")))?;
    let condition = node.condition.ok_or_else(|| Error::invalid(format!("node {node_id} is a leaf")))?;
    let axis = match (condition.kind, Axis::of_feature(condition.feature)) {
        (ConditionKind::Multiple, Some(axis)) => axis,
        _ => return Err(Error::invalid(format!("node {node_id} is not a channel-multiple condition"))),
    };
    let (l, r) = (node.left.expect("split node"), node.right.expect("split node"));
    let delta = condition.tau as u32 - 1;
    let contour = expansion_benefit(&model.nodes[l].fit, &model.nodes[r].fit, geometry, axis, delta)?;
    let mut bound = safe_region(&contour);
    let verified = verify_region(&contour, bound);
    if !verified {
        bound = RegionBound::Empty;
    }
    Ok(ExpansionRegion { node_id, condition, geometry: *geometry, axis, delta, bound, contour, verified })
}

/// Regions for every channel-multiple condition in a CNN model.
pub fn model_regions(model: &TimeModel, geometry: &ConvGeometry) -> Result<Vec<ExpansionRegion>> {
    if model.kind != LayerKind::Cnn {
        return Err(Error::invalid(format!("expansion regions need a CNN model, got {}", model.kind)));
    }
    model
        .nodes
        .iter()
        .filter(|n| {
            n.condition
                .is_some_and(|c| c.kind == ConditionKind::Multiple && Axis::of_feature(c.feature).is_some())
        })
        .map(|n| condition_region(model, n.id, geometry))
        .collect()
}

/// Adds snap rules so that, inside the joint verified region, channel counts
/// are rounded up to the regions' multiples before routing.
pub fn simplify_model(model: &TimeModel, regions: &[ExpansionRegion]) -> Result<TimeModel> {
    let mut out = model.clone();
    for region in regions {
        let Some(bound) = region.bound.edge() else { continue };
        if !region.verified {
            return Err(Error::invalid(format!("region at node {} was not verified", region.node_id)));
        }
        if model.kind != LayerKind::Cnn {
            return Err(Error::invalid("snap rules apply to CNN models only"));
        }
        let tau = region.condition.tau as u32;
        let rule = SnapRule { feature: region.axis.feature(), tau, geometry: region.geometry, bound };
        for existing in &out.snap_rules {
            if existing.feature == rule.feature
                && existing.geometry == rule.geometry
                && existing.tau % rule.tau != 0
                && !rule.tau.is_multiple_of(existing.tau)
            {
                return Err(Error::invalid(format!(
                    "contradictory regions: feature {} rounds to multiples of both {} and {}",
                    rule.feature, existing.tau, rule.tau
                )));
            }
        }
        if !out.snap_rules.contains(&rule) {
            out.snap_rules.push(rule);
        }
    }
    Ok(out)
}
