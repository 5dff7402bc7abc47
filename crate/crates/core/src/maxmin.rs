//! Global max-min fair allocation over a multi-link topology by progressive
//! filling, plus an independent checker of the max-min property.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use thiserror::Error;

use crate::scalar::Scalar;

/// Default relative tolerance for feasibility and tie detection.
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("InvalidTopology: {0}")]
    InvalidTopology(String),
    #[error("UnknownFlow: candidate names flow `{0}` which is not in the problem")]
    UnknownFlow(String),
    #[error("MissingFlow: candidate has no allocation for flow `{0}`")]
    MissingFlow(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link<T> {
    pub id: String,
    pub capacity: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Flow<T> {
    pub id: String,
    pub route: Vec<String>,
    pub source_cap: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AllocationProblem<T> {
    pub links: Vec<Link<T>>,
    pub flows: Vec<Flow<T>>,
}

impl<T: Scalar> AllocationProblem<T> {
    pub fn new() -> Self {
        Self {
            links: Vec::new(),
            flows: Vec::new(),
        }
    }

    pub fn link(mut self, id: impl Into<String>, capacity: T) -> Self {
        self.links.push(Link {
            id: id.into(),
            capacity,
        });
        self
    }

    pub fn flow<S: Into<String>>(
        mut self,
        id: impl Into<String>,
        route: impl IntoIterator<Item = S>,
        source_cap: Option<T>,
    ) -> Self {
        self.flows.push(Flow {
            id: id.into(),
            route: route.into_iter().map(Into::into).collect(),
            source_cap,
        });
        self
    }

    /// Link indices of every flow's route.
    fn resolve(&self) -> Result<Vec<Vec<usize>>, OracleError> {
        let mut index = HashMap::with_capacity(self.links.len());
        for (i, l) in self.links.iter().enumerate() {
            if !(l.capacity > T::zero()) || !l.capacity.is_finite() {
                return Err(OracleError::InvalidTopology(format!(
                    "link `{}` has non-positive capacity",
                    l.id
                )));
            }
            if index.insert(l.id.as_str(), i).is_some() {
                return Err(OracleError::InvalidTopology(format!("duplicate link `{}`", l.id)));
            }
        }
        let mut seen = HashMap::with_capacity(self.flows.len());
        self.flows
            .iter()
            .map(|f| {
                if seen.insert(f.id.as_str(), ()).is_some() {
                    return Err(OracleError::InvalidTopology(format!("duplicate flow `{}`", f.id)));
                }
                if f.route.is_empty() {
                    return Err(OracleError::InvalidTopology(format!("flow `{}` has an empty route", f.id)));
                }
                if f.source_cap.is_some_and(|c| !(c > T::zero())) {
                    return Err(OracleError::InvalidTopology(format!(
                        "flow `{}` has a non-positive source cap",
                        f.id
                    )));
                }
                f.route
                    .iter()
                    .map(|l| {
                        index.get(l.as_str()).copied().ok_or_else(|| {
                            OracleError::InvalidTopology(format!("flow `{}` routes over unknown link `{l}`", f.id))
                        })
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Bottleneck {
    Link(String),
    Source,
}

impl fmt::Display for Bottleneck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bottleneck::Link(id) => write!(f, "link {id}"),
            Bottleneck::Source => f.write_str("source"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult<T> {
    pub per_flow: BTreeMap<String, T>,
    pub bottleneck_of: BTreeMap<String, Bottleneck>,
}

/// Progressive filling. Each round finds the constraint (link, or a flow's
/// own source cap) with the smallest residual per unfrozen flow, freezes the
/// flows it carries at that share, and charges them to every link they use.
pub fn solve_maxmin<T: Scalar>(problem: &AllocationProblem<T>) -> Result<AllocationResult<T>, OracleError> {
    solve_maxmin_with_tol(problem, T::lit(DEFAULT_TOL))
}

pub fn solve_maxmin_with_tol<T: Scalar>(
    problem: &AllocationProblem<T>,
    tol: T,
) -> Result<AllocationResult<T>, OracleError> {
    let routes = problem.resolve()?;
    let n_links = problem.links.len();
    let n_flows = problem.flows.len();

    let mut residual: Vec<T> = problem.links.iter().map(|l| l.capacity).collect();
    let mut unfrozen_on: Vec<usize> = vec![0; n_links];
    for r in &routes {
        for &l in r {
            unfrozen_on[l] += 1;
        }
    }
    let mut alloc: Vec<Option<T>> = vec![None; n_flows];
    let mut bottleneck: Vec<Option<Bottleneck>> = vec![None; n_flows];
    let mut remaining = n_flows;

    while remaining > 0 {
        let link_share = |l: usize| residual[l].max(T::zero()) / T::from_count(unfrozen_on[l]);

        let mut level = T::infinity();
        for l in (0..n_links).filter(|&l| unfrozen_on[l] > 0) {
            level = level.min(link_share(l));
        }
        for (f, flow) in problem.flows.iter().enumerate() {
            if alloc[f].is_none() {
                if let Some(cap) = flow.source_cap {
                    level = level.min(cap);
                }
            }
        }
        let limit = level + tol * level.max(T::one());

        let tight: Vec<bool> = (0..n_links)
            .map(|l| unfrozen_on[l] > 0 && link_share(l) <= limit)
            .collect();
        let mut frozen_now = Vec::new();
        for (f, flow) in problem.flows.iter().enumerate() {
            if alloc[f].is_some() {
                continue;
            }
            let on_tight = routes[f].iter().find(|&&l| tight[l]);
            let cap_tight = flow.source_cap.is_some_and(|c| c <= limit);
            let which = match (on_tight, cap_tight) {
                (Some(&l), _) => Bottleneck::Link(problem.links[l].id.clone()),
                (None, true) => Bottleneck::Source,
                (None, false) => continue,
            };
            let share = flow.source_cap.map_or(level, |c| c.min(level));
            alloc[f] = Some(share);
            bottleneck[f] = Some(which);
            frozen_now.push(f);
        }
        debug_assert!(!frozen_now.is_empty());
        for f in frozen_now {
            let share = alloc[f].unwrap();
            for &l in &routes[f] {
                residual[l] = residual[l] - share;
                unfrozen_on[l] -= 1;
            }
            remaining -= 1;
        }
    }

    let mut per_flow = BTreeMap::new();
    let mut bottleneck_of = BTreeMap::new();
    for (f, flow) in problem.flows.iter().enumerate() {
        per_flow.insert(flow.id.clone(), alloc[f].unwrap());
        bottleneck_of.insert(flow.id.clone(), bottleneck[f].clone().unwrap());
    }
    Ok(AllocationResult { per_flow, bottleneck_of })
}

/// First condition a candidate allocation fails.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation<T> {
    ExceedsSourceCap { flow: String, allocation: T, cap: T },
    LinkOverloaded { link: String, load: T, capacity: T },
    /// The flow has no bottleneck: neither its cap nor a saturated link on
    /// which it has the largest rate stops it from growing.
    IncreasePossible { flow: String },
}

impl<T: Scalar> fmt::Display for Violation<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ExceedsSourceCap { flow, allocation, cap } => {
                write!(f, "flow {flow} allocated {allocation} above its cap {cap}")
            }
            Violation::LinkOverloaded { link, load, capacity } => {
                write!(f, "link {link} carries {load} above capacity {capacity}")
            }
            Violation::IncreasePossible { flow } => write!(f, "increase possible for flow {flow}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict<T> {
    pub violation: Option<Violation<T>>,
}

impl<T> Verdict<T> {
    pub fn is_max_min(&self) -> bool {
        self.violation.is_none()
    }
}

/// Checks feasibility and the bottleneck characterization of max-min
/// fairness: every flow is stopped either by its source cap or by a
/// saturated link on which no other flow gets more.
pub fn verify_maxmin<T: Scalar>(
    problem: &AllocationProblem<T>,
    candidate: &BTreeMap<String, T>,
    tol: T,
) -> Result<Verdict<T>, OracleError> {
    let routes = problem.resolve()?;
    if let Some(extra) = candidate
        .keys()
        .find(|k| !problem.flows.iter().any(|f| &f.id == *k))
    {
        return Err(OracleError::UnknownFlow(extra.clone()));
    }
    let x: Vec<T> = problem
        .flows
        .iter()
        .map(|f| candidate.get(&f.id).copied().ok_or_else(|| OracleError::MissingFlow(f.id.clone())))
        .collect::<Result<_, _>>()?;
    let slack = |scale: T| tol * scale.max(T::one());

    for (f, flow) in problem.flows.iter().enumerate() {
        if let Some(cap) = flow.source_cap {
            if x[f] > cap + slack(cap) {
                return Ok(Verdict {
                    violation: Some(Violation::ExceedsSourceCap {
                        flow: flow.id.clone(),
                        allocation: x[f],
                        cap,
                    }),
                });
            }
        }
    }

    let mut load = vec![T::zero(); problem.links.len()];
    let mut max_on = vec![T::neg_infinity(); problem.links.len()];
    for (f, route) in routes.iter().enumerate() {
        for &l in route {
            load[l] = load[l] + x[f];
            max_on[l] = max_on[l].max(x[f]);
        }
    }
    for (l, link) in problem.links.iter().enumerate() {
        if load[l] > link.capacity + slack(link.capacity) {
            return Ok(Verdict {
                violation: Some(Violation::LinkOverloaded {
                    link: link.id.clone(),
                    load: load[l],
                    capacity: link.capacity,
                }),
            });
        }
    }

    for (f, flow) in problem.flows.iter().enumerate() {
        let capped = flow.source_cap.is_some_and(|c| x[f] >= c - slack(c));
        let link_bound = routes[f].iter().any(|&l| {
            let cap = problem.links[l].capacity;
            let saturated = load[l] >= cap - slack(cap) * T::from_count(routes.len().max(1));
            saturated && x[f] >= max_on[l] - slack(cap)
        });
        if !capped && !link_bound {
            return Ok(Verdict {
                violation: Some(Violation::IncreasePossible { flow: flow.id.clone() }),
            });
        }
    }
    Ok(Verdict { violation: None })
}
