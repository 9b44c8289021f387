//! Corona decomposition: good/bad split of the cube tree and greedy growth
//! of coherent stopping-time regimes.

use serde::{Deserialize, Serialize};

use crate::beta::BetaField;
use crate::dyadic::DyadicTree;
use crate::error::{Error, Result};
use crate::plane::TPlane;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoronaParams {
    pub epsilon: f64,
    pub delta: f64,
    pub kappa: f64,
    pub k: f64,
    pub bilateral: bool,
    /// Slack on angle comparisons.
    pub angle_tol: f64,
}

impl CoronaParams {
    pub fn new(epsilon: f64, delta: f64) -> Self {
        CoronaParams { epsilon, delta, kappa: 2.0, k: 4.0, bilateral: false, angle_tol: 1e-9 }
    }

    /// epsilon <= delta/20, K >= 2 kappa, kappa >= 2.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.epsilon > 0.0 && self.delta > 0.0) {
            bad.push("epsilon and delta must be positive".to_string());
        }
        if self.epsilon > self.delta / 20.0 * (1.0 + 1e-12) {
            bad.push(format!("epsilon = {} exceeds delta/20 = {}", self.epsilon, self.delta / 20.0));
        }
        if self.kappa < 2.0 {
            bad.push(format!("kappa = {} is below 2", self.kappa));
        }
        if self.k < 2.0 * self.kappa {
            bad.push(format!("K = {} is below 2 kappa = {}", self.k, 2.0 * self.kappa));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Input(bad.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// A child is bad.
    BadChild,
    /// A child tilts by more than delta and the cube itself by at least delta/2.
    Tilt,
    /// A child tilts by more than delta while the cube itself is within delta/2.
    SiblingInduced,
    /// The cube has no children at the sampled resolution.
    Resolution,
    /// Bilateral subdivision: a child or one of its siblings is bilaterally bad,
    /// or the children leave the parent regime.
    Bilateral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub id: u32,
    pub root: u32,
    pub members: Vec<u32>,
    pub minimal: Vec<(u32, StopReason)>,
    pub max_angle: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Packing {
    pub bad: f64,
    pub tops: f64,
    pub m0: f64,
    pub m1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoronaResult {
    pub params: CoronaParams,
    pub regimes: Vec<Regime>,
    /// Cubes outside every regime, unresolved cubes included.
    pub bad: Vec<u32>,
    /// Regime id per cube, -1 for bad cubes.
    pub assignment: Vec<i64>,
    /// Plane P_Q per cube used for angles and graph construction.
    pub planes: Vec<TPlane>,
    pub packing: Packing,
}

impl CoronaResult {
    pub fn regime_of(&self, q: u32) -> Option<&Regime> {
        let a = self.assignment[q as usize];
        (a >= 0).then(|| &self.regimes[a as usize])
    }
}

/// Top-down greedy regime growth over cubes with `good[q]`.
fn grow(tree: &DyadicTree, good: &[bool], resolved: &[bool], planes: &[TPlane], delta: f64, tol: f64) -> (Vec<Regime>, Vec<i64>) {
    let mut assignment = vec![-1i64; tree.len()];
    let mut order: Vec<u32> = (0..tree.len() as u32).filter(|&q| good[q as usize]).collect();
    order.sort_by_key(|&q| (tree.cube(q).k, q));
    let mut regimes = Vec::new();
    for root in order {
        if assignment[root as usize] >= 0 {
            continue;
        }
        let rid = regimes.len() as u32;
        let p0 = &planes[root as usize];
        let mut members = Vec::new();
        let mut minimal = Vec::new();
        let mut max_angle = 0.0f64;
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(q) = queue.pop_front() {
            assignment[q as usize] = rid as i64;
            members.push(q);
            let aq = planes[q as usize].angle_to(p0);
            max_angle = max_angle.max(aq);
            let kids = &tree.cube(q).children;
            if kids.is_empty() || kids.iter().any(|&c| !resolved[c as usize]) {
                minimal.push((q, StopReason::Resolution));
                continue;
            }
            if kids.iter().any(|&c| !good[c as usize]) {
                minimal.push((q, StopReason::BadChild));
                continue;
            }
            if kids.iter().any(|&c| planes[c as usize].angle_to(p0) > delta + tol) {
                let reason = if aq >= delta / 2.0 - tol { StopReason::Tilt } else { StopReason::SiblingInduced };
                minimal.push((q, reason));
                continue;
            }
            queue.extend(kids.iter().copied());
        }
        members.sort_unstable();
        regimes.push(Regime { id: rid, root, members, minimal, max_angle });
    }
    (regimes, assignment)
}

fn packing(tree: &DyadicTree, regimes: &[Regime], assignment: &[i64], resolved: &[bool]) -> Packing {
    let m = tree.len();
    let mut own = [vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]];
    for q in 0..m {
        if assignment[q] < 0 && resolved[q] {
            own[0][q] = tree.cubes[q].sigma;
        }
    }
    for r in regimes {
        own[1][r.root as usize] += tree.cube(r.root).sigma;
        for &(q, why) in &r.minimal {
            match why {
                StopReason::BadChild => own[2][q as usize] += tree.cube(q).sigma,
                StopReason::Tilt => own[3][q as usize] += tree.cube(q).sigma,
                _ => {}
            }
        }
    }
    let mut best = [0.0f64; 4];
    for (k, o) in own.iter().enumerate() {
        let mut acc = vec![0.0; m];
        for c in tree.cubes.iter().rev() {
            acc[c.id as usize] = o[c.id as usize] + c.children.iter().map(|&ch| acc[ch as usize]).sum::<f64>();
            if c.sigma > 0.0 {
                best[k] = best[k].max(acc[c.id as usize] / c.sigma);
            }
        }
    }
    Packing { bad: best[0], tops: best[1], m0: best[2], m1: best[3] }
}

/// Good/bad split at epsilon and regime growth at delta.
pub fn build_regimes(tree: &DyadicTree, field: &BetaField, params: CoronaParams) -> Result<CoronaResult> {
    params.validate()?;
    if field.records.len() != tree.len() {
        return Err(Error::Input("beta field does not match the tree".into()));
    }
    let good: Vec<bool> = field.records.iter().map(|r| r.resolved && r.beta_inf < params.epsilon).collect();
    let planes: Vec<TPlane> = field.records.iter().map(|r| r.plane.clone()).collect();
    let resolved: Vec<bool> = field.records.iter().map(|r| r.resolved).collect();
    let (regimes, assignment) = grow(tree, &good, &resolved, &planes, params.delta, params.angle_tol);
    let mut result = finish(tree, params, regimes, assignment, planes, &resolved);
    if params.bilateral {
        result = bilateral_split(tree, field, &result, &resolved)?;
    }
    audit_regimes(tree, &result)?;
    Ok(result)
}

fn finish(
    tree: &DyadicTree,
    params: CoronaParams,
    regimes: Vec<Regime>,
    assignment: Vec<i64>,
    planes: Vec<TPlane>,
    resolved: &[bool],
) -> CoronaResult {
    let bad: Vec<u32> = (0..tree.len() as u32).filter(|&q| assignment[q as usize] < 0).collect();
    let packing = packing(tree, &regimes, &assignment, resolved);
    CoronaResult { params, regimes, bad, assignment, planes, packing }
}

/// Split each regime at the bilaterally bad cubes.
///
/// For a regime S, the new roots are the cubes of S that are bilaterally
/// good and either equal Q(S) or have a parent or sibling that is
/// bilaterally bad. From each root the regime grows downward and stops
/// above any generation whose cubes leave S or contain a bilaterally bad
/// cube.
fn bilateral_split(tree: &DyadicTree, field: &BetaField, uni: &CoronaResult, resolved: &[bool]) -> Result<CoronaResult> {
    let eps = uni.params.epsilon;
    let bgood: Vec<bool> = field.records.iter().map(|r| r.resolved && r.bbeta_inf.map(|b| b < eps).unwrap_or(false)).collect();
    if field.records.iter().any(|r| r.bbeta_inf.is_none()) {
        return Err(Error::Input("bilateral corona needs bilateral beta numbers".into()));
    }
    let planes: Vec<TPlane> = field.records.iter().map(|r| r.bplane.clone().unwrap_or_else(|| r.plane.clone())).collect();
    let mut assignment = vec![-1i64; tree.len()];
    let mut regimes = Vec::new();
    for s in &uni.regimes {
        let in_s = |q: u32| uni.assignment[q as usize] == s.id as i64;
        let mut roots: Vec<u32> = s
            .members
            .iter()
            .copied()
            .filter(|&q| {
                bgood[q as usize]
                    && (q == s.root || {
                        let p = tree.cube(q).parent.unwrap();
                        !bgood[p as usize] || tree.siblings(q).iter().any(|&b| !bgood[b as usize])
                    })
            })
            .collect();
        roots.sort_by_key(|&q| (tree.cube(q).k, q));
        for root in roots {
            if assignment[root as usize] >= 0 {
                continue;
            }
            let rid = regimes.len() as u32;
            let p0 = &planes[root as usize];
            let mut members = Vec::new();
            let mut minimal = Vec::new();
            let mut max_angle = 0.0f64;
            let mut queue = std::collections::VecDeque::from([root]);
            while let Some(q) = queue.pop_front() {
                assignment[q as usize] = rid as i64;
                members.push(q);
                max_angle = max_angle.max(planes[q as usize].angle_to(p0));
                let kids = &tree.cube(q).children;
                if kids.is_empty() || kids.iter().any(|&c| !resolved[c as usize]) {
                    minimal.push((q, StopReason::Resolution));
                } else if kids.iter().any(|&c| !in_s(c) || !bgood[c as usize]) {
                    minimal.push((q, StopReason::Bilateral));
                } else {
                    queue.extend(kids.iter().copied());
                }
            }
            members.sort_unstable();
            regimes.push(Regime { id: rid, root, members, minimal, max_angle });
        }
    }
    let mut params = uni.params;
    params.bilateral = true;
    Ok(finish(tree, params, regimes, assignment, planes, resolved))
}

/// Structural audit of a corona result: disjoint cover, coherence, angle
/// bound and stop certificates.
pub fn audit_regimes(tree: &DyadicTree, r: &CoronaResult) -> Result<()> {
    let angle_bound = if r.params.bilateral { 4.0 * r.params.delta } else { r.params.delta };
    let mut seen = vec![0u32; tree.len()];
    for s in &r.regimes {
        for &q in &s.members {
            seen[q as usize] += 1;
            if r.assignment[q as usize] != s.id as i64 {
                return Err(Error::RegimeIntegrity(format!("cube {q} listed in regime {} but assigned elsewhere", s.id)));
            }
            if q != s.root {
                let p = tree.cube(q).parent.unwrap();
                if r.assignment[p as usize] != s.id as i64 {
                    return Err(Error::RegimeIntegrity(format!("regime {} is not coherent above cube {q}", s.id)));
                }
                for sib in tree.siblings(q) {
                    if r.assignment[sib as usize] != s.id as i64 {
                        return Err(Error::RegimeIntegrity(format!("regime {} splits the siblings of cube {q}", s.id)));
                    }
                }
            }
            let a = r.planes[q as usize].angle_to(&r.planes[s.root as usize]);
            if a > angle_bound + r.params.angle_tol {
                return Err(Error::RegimeIntegrity(format!("cube {q} tilts {a} from the top of regime {}", s.id)));
            }
        }
        for &(q, _) in &s.minimal {
            if tree.cube(q).children.iter().any(|&c| r.assignment[c as usize] == s.id as i64) {
                return Err(Error::RegimeIntegrity(format!("minimal cube {q} has children in regime {}", s.id)));
            }
        }
    }
    for &b in &r.bad {
        seen[b as usize] += 1;
    }
    if let Some(q) = seen.iter().position(|&c| c != 1) {
        return Err(Error::RegimeIntegrity(format!("cube {q} is covered {} times", seen[q])));
    }
    Ok(())
}

/// Packing constant: max over R of sum_{Q in family, Q subset R} sigma(Q) / sigma(R).
pub fn packing_constant(tree: &DyadicTree, family: &[u32]) -> f64 {
    let m = tree.len();
    let mut own = vec![0.0; m];
    for &q in family {
        own[q as usize] += tree.cube(q).sigma;
    }
    let mut acc = vec![0.0; m];
    let mut best = 0.0f64;
    for c in tree.cubes.iter().rev() {
        acc[c.id as usize] = own[c.id as usize] + c.children.iter().map(|&ch| acc[ch as usize]).sum::<f64>();
        if c.sigma > 0.0 {
            best = best.max(acc[c.id as usize] / c.sigma);
        }
    }
    best
}
