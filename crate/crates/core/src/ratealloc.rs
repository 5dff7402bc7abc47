//! Per-interval explicit-rate computations for the ERICA family of switch
//! algorithms.
//!
//! Everything here is a pure function of its arguments. Rates are in Mbps.
//! The port that owns an [`AllocatorState`] feeds it one
//! [`IntervalMeasurement`] per measurement interval and stores whatever the
//! returned [`ErDecision`] tells it to carry forward (see
//! [`Algorithm::decide`], which does exactly that).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Fair shares at or below this (Mbps) count every VC as fully active.
pub const FAIR_SHARE_EPSILON: f64 = 1e-9;
/// Lower clamp on the effective number of active VCs.
pub const N_EFF_EPSILON: f64 = 1e-6;
/// Default width of the equalization band around unit load.
pub const DEFAULT_DELTA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct VcId(pub u32);

impl fmt::Display for VcId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "vc{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RateAllocError {
    #[error("CapacityZero: ABR capacity is zero (background usage exhausts the link)")]
    CapacityZero,
    #[error("NoActiveVcs: effective number of active VCs is zero")]
    NoActiveVcs,
    #[error("MissingRate: no switch-measured rate for {0}")]
    MissingRate(VcId),
    #[error("NoConvergence: fair share did not settle after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("AllUnderloading: every VC is underloading, no overloading VC to share the residue")]
    AllUnderloading,
    #[error("EmptyInput: at least one source is required")]
    EmptyInput,
}

pub type Result<T, E = RateAllocError> = std::result::Result<T, E>;

/// Which per-VC rate the effective-count method sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RateSource {
    /// CCR field of the last forward RM cell. For application-limited sources
    /// this is the ACR, not what the source actually sends.
    CcrFromRm,
    /// Cells counted per VC over the interval.
    MeasuredAtSwitch,
}

/// Per-VC quantities seen by a port during one interval.
#[derive(Debug, Clone, PartialEq)]
pub struct VcObservation<T> {
    pub vc_id: VcId,
    pub ccr_from_rm: Option<T>,
    pub measured_rate: Option<T>,
    pub saw_cell: bool,
}

impl<T: Scalar> VcObservation<T> {
    /// Observation carrying only a CCR; `saw_cell` is set.
    pub fn with_ccr(vc_id: VcId, ccr: T) -> Self {
        Self {
            vc_id,
            ccr_from_rm: Some(ccr),
            measured_rate: None,
            saw_cell: true,
        }
    }

    /// Observation carrying a CCR and the switch-measured rate.
    pub fn with_rates(vc_id: VcId, ccr: T, measured: T) -> Self {
        Self {
            vc_id,
            ccr_from_rm: Some(ccr),
            measured_rate: Some(measured),
            saw_cell: measured > T::zero(),
        }
    }

    pub fn idle(vc_id: VcId) -> Self {
        Self {
            vc_id,
            ccr_from_rm: None,
            measured_rate: None,
            saw_cell: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalMeasurement<T> {
    pub abr_input_rate: T,
    pub link_bandwidth: T,
    pub target_utilization: T,
    pub vbr_cbr_usage: T,
    pub per_vc: Vec<VcObservation<T>>,
}

impl<T: Scalar> IntervalMeasurement<T> {
    pub fn abr_capacity(&self) -> T {
        compute_abr_capacity(self.link_bandwidth, self.target_utilization, self.vbr_cbr_usage)
    }
}

/// State a port carries from one interval to the next.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocatorState<T> {
    pub fair_share_prev: T,
    pub max_alloc_previous: T,
    pub n_eff_prev: T,
    pub delta: T,
}

impl<T: Scalar> AllocatorState<T> {
    /// Fresh state for a port with `configured_vcs` VCs routed through it.
    /// The fair share starts at the even split of `abr_capacity`.
    pub fn seeded(abr_capacity: T, configured_vcs: usize, delta: T) -> Self {
        let n = configured_vcs.max(1);
        Self {
            fair_share_prev: abr_capacity / T::from_count(n),
            max_alloc_previous: T::zero(),
            n_eff_prev: T::from_count(configured_vcs),
            delta,
        }
    }
}

/// Feedback frozen for one measurement interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ErDecision<T> {
    pub per_vc_er: BTreeMap<VcId, T>,
    pub fair_share: T,
    pub load_factor: T,
    pub n_eff: T,
    pub abr_capacity: T,
    /// Highest allocation made this interval; the next interval's
    /// MaxAllocPrevious.
    pub max_alloc: T,
}

impl<T: Scalar> ErDecision<T> {
    fn new(per_vc_er: BTreeMap<VcId, T>, fair_share: T, load_factor: T, n_eff: T, abr_capacity: T) -> Self {
        let max_alloc = per_vc_er.values().copied().fold(T::zero(), T::max);
        Self {
            per_vc_er,
            fair_share,
            load_factor,
            n_eff,
            abr_capacity,
            max_alloc,
        }
    }

    /// Decision granting every listed VC the full capacity. Used before the
    /// first interval closes.
    pub fn open(abr_capacity: T, vcs: impl IntoIterator<Item = VcId>) -> Self {
        let per_vc_er = vcs.into_iter().map(|v| (v, abr_capacity)).collect();
        Self::new(per_vc_er, abr_capacity, T::zero(), T::zero(), abr_capacity)
    }

    pub fn er(&self, vc: VcId) -> Option<T> {
        self.per_vc_er.get(&vc).copied()
    }
}

/// The four switch configurations compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    EricaOriginal,
    EricaMaxalloc,
    EricaNeffCcr,
    EricaNeffMeasured,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::EricaOriginal,
        Algorithm::EricaMaxalloc,
        Algorithm::EricaNeffCcr,
        Algorithm::EricaNeffMeasured,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::EricaOriginal => "erica-original",
            Algorithm::EricaMaxalloc => "erica-maxalloc",
            Algorithm::EricaNeffCcr => "erica-neff-ccr",
            Algorithm::EricaNeffMeasured => "erica-neff-measured",
        }
    }

    /// Whether the port must count cells per VC for this algorithm.
    pub fn measures_source_rates(self) -> bool {
        matches!(self, Algorithm::EricaNeffMeasured)
    }

    /// Runs one interval of the algorithm and stores the carried quantities
    /// into `state`. On error `state` is left untouched.
    pub fn decide<T: Scalar>(
        self,
        meas: &IntervalMeasurement<T>,
        state: &mut AllocatorState<T>,
    ) -> Result<ErDecision<T>> {
        let decision = match self {
            Algorithm::EricaOriginal => er_original(meas, state)?,
            Algorithm::EricaMaxalloc => er_maxalloc(meas, state)?,
            Algorithm::EricaNeffCcr => er_neff(meas, state, RateSource::CcrFromRm)?,
            Algorithm::EricaNeffMeasured => er_neff(meas, state, RateSource::MeasuredAtSwitch)?,
        };
        state.fair_share_prev = decision.fair_share;
        state.n_eff_prev = decision.n_eff;
        state.max_alloc_previous = decision.max_alloc;
        Ok(decision)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown algorithm `{0}` (expected erica-original, erica-maxalloc, erica-neff-ccr or erica-neff-measured)")]
pub struct UnknownAlgorithm(pub String);

impl FromStr for Algorithm {
    type Err = UnknownAlgorithm;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| UnknownAlgorithm(s.to_owned()))
    }
}

pub fn compute_abr_capacity<T: Scalar>(link_bandwidth: T, target_utilization: T, vbr_cbr_usage: T) -> T {
    (target_utilization * link_bandwidth - vbr_cbr_usage).max(T::zero())
}

pub fn compute_load_factor<T: Scalar>(abr_input_rate: T, abr_capacity: T) -> Result<T> {
    if abr_capacity <= T::zero() {
        return Err(RateAllocError::CapacityZero);
    }
    Ok(abr_input_rate / abr_capacity)
}

/// VCs that sent at least one cell this interval, never less than one.
pub fn count_active_simple<T>(observations: &[VcObservation<T>]) -> usize {
    observations.iter().filter(|o| o.saw_cell).count().max(1)
}

pub fn activity_level<T: Scalar>(source_rate: T, fair_share: T) -> T {
    if fair_share <= T::lit(FAIR_SHARE_EPSILON) {
        return T::one();
    }
    (source_rate / fair_share).min(T::one())
}

pub fn effective_active_vcs<T: Scalar>(source_rates: &[T], fair_share: T) -> T {
    source_rates
        .iter()
        .fold(T::zero(), |acc, &r| acc + activity_level(r, fair_share))
}

pub fn fair_share_neff<T: Scalar>(abr_capacity: T, n_eff: T) -> Result<T> {
    if n_eff <= T::zero() {
        return Err(RateAllocError::NoActiveVcs);
    }
    Ok(abr_capacity / n_eff)
}

/// CCR / z, infinite on an idle link so the capacity clamp decides.
fn vc_share<T: Scalar>(rate: T, load_factor: T) -> T {
    if load_factor <= T::zero() {
        T::infinity()
    } else {
        rate / load_factor
    }
}

pub fn er_original<T: Scalar>(meas: &IntervalMeasurement<T>, _state: &AllocatorState<T>) -> Result<ErDecision<T>> {
    let capacity = meas.abr_capacity();
    let z = compute_load_factor(meas.abr_input_rate, capacity)?;
    let active = count_active_simple(&meas.per_vc);
    let fair_share = capacity / T::from_count(active);

    let per_vc_er = meas
        .per_vc
        .iter()
        .map(|o| {
            let share = o.ccr_from_rm.map_or(T::zero(), |c| vc_share(c, z));
            (o.vc_id, fair_share.max(share).min(capacity))
        })
        .collect();
    Ok(ErDecision::new(per_vc_er, fair_share, z, T::from_count(active), capacity))
}

pub fn er_maxalloc<T: Scalar>(meas: &IntervalMeasurement<T>, state: &AllocatorState<T>) -> Result<ErDecision<T>> {
    let mut decision = er_original(meas, state)?;
    if decision.load_factor > T::one() + state.delta {
        return Ok(decision);
    }
    let floor = decision.fair_share.max(state.max_alloc_previous);
    for er in decision.per_vc_er.values_mut() {
        // er is already min(max(FS, VCShare), C); raising the floor commutes
        // with the clamp.
        *er = er.max(floor).min(decision.abr_capacity);
    }
    decision.max_alloc = decision.per_vc_er.values().copied().fold(T::zero(), T::max);
    Ok(decision)
}

/// One fair-share iteration of the effective-count method.
pub fn er_neff<T: Scalar>(
    meas: &IntervalMeasurement<T>,
    state: &AllocatorState<T>,
    rate_source: RateSource,
) -> Result<ErDecision<T>> {
    let capacity = meas.abr_capacity();
    let z = compute_load_factor(meas.abr_input_rate, capacity)?;

    let rates = meas
        .per_vc
        .iter()
        .map(|o| match rate_source {
            RateSource::CcrFromRm => Ok(o.ccr_from_rm.unwrap_or_else(T::zero)),
            RateSource::MeasuredAtSwitch => o.measured_rate.ok_or(RateAllocError::MissingRate(o.vc_id)),
        })
        .collect::<Result<Vec<_>>>()?;

    let n_eff = effective_active_vcs(&rates, state.fair_share_prev).max(T::lit(N_EFF_EPSILON));
    let fair_share = fair_share_neff(capacity, n_eff)?;

    let per_vc_er = meas
        .per_vc
        .iter()
        .zip(&rates)
        .map(|(o, &r)| (o.vc_id, fair_share.max(vc_share(r, z)).min(capacity)))
        .collect();
    Ok(ErDecision::new(per_vc_er, fair_share, z, n_eff, capacity))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointConfig<T> {
    /// Relative accuracy demanded of the returned fair share.
    pub tol: T,
    pub max_iters: usize,
}

impl<T: Scalar> Default for FixedPointConfig<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-9).max(T::epsilon() * T::lit(64.0)),
            max_iters: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint<T> {
    /// Infinite when every source is capped and the caps fit in capacity.
    pub fair_share: T,
    pub allocations: Vec<T>,
    pub n_eff: T,
    pub iterations: usize,
}

impl<T: Scalar> FixedPoint<T> {
    /// Indices of sources whose cap lies below the fair share.
    pub fn underloading(&self, caps: &[Option<T>]) -> Vec<usize> {
        caps.iter()
            .enumerate()
            .filter(|(_, c)| c.is_some_and(|c| c < self.fair_share))
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn solve_fairshare_fixed_point<T: Scalar>(capacity: T, source_caps: &[Option<T>]) -> Result<FixedPoint<T>> {
    solve_fairshare_fixed_point_with(capacity, source_caps, &FixedPointConfig::default())
}

/// Iterates `fs <- capacity / sum(min(1, min(cap, fs) / fs))` from the even
/// split until it settles.
pub fn solve_fairshare_fixed_point_with<T: Scalar>(
    capacity: T,
    source_caps: &[Option<T>],
    config: &FixedPointConfig<T>,
) -> Result<FixedPoint<T>> {
    if source_caps.is_empty() {
        return Err(RateAllocError::EmptyInput);
    }
    if capacity <= T::zero() {
        return Err(RateAllocError::CapacityZero);
    }

    // All capped and the caps fit: the map grows without bound.
    if let Some(total) = source_caps
        .iter()
        .try_fold(T::zero(), |acc, c| c.map(|c| acc + c))
    {
        if total <= capacity {
            return Ok(FixedPoint {
                fair_share: T::infinity(),
                allocations: source_caps.iter().map(|c| c.unwrap()).collect(),
                n_eff: T::zero(),
                iterations: 0,
            });
        }
    }

    let n_eff_at = |fs: T| {
        source_caps.iter().fold(T::zero(), |acc, cap| {
            let r = cap.map_or(fs, |c| c.min(fs));
            acc + activity_level(r, fs)
        })
    };

    // The map converges linearly, so stop well inside the demanded accuracy.
    let stop = (config.tol * T::lit(1e-3)).max(T::epsilon() * T::lit(4.0));
    let mut fs = capacity / T::from_count(source_caps.len());
    for iteration in 1..=config.max_iters {
        let next = capacity / n_eff_at(fs);
        let settled = (next - fs).abs() <= stop * next;
        fs = next;
        if settled {
            let allocations = source_caps.iter().map(|c| c.map_or(fs, |c| c.min(fs))).collect();
            return Ok(FixedPoint {
                fair_share: fs,
                allocations,
                n_eff: n_eff_at(fs),
                iterations: iteration,
            });
        }
    }
    Err(RateAllocError::NoConvergence {
        iterations: config.max_iters,
    })
}

/// `(capacity - sum(underloading)) / (n_total - n_underloading)`.
pub fn mit_closed_form<T: Scalar>(capacity: T, underloading_rates: &[T], n_total: usize) -> Result<T> {
    let n_under = underloading_rates.len();
    if n_total <= n_under {
        return Err(RateAllocError::AllUnderloading);
    }
    let residue = underloading_rates.iter().fold(capacity, |acc, &r| acc - r);
    Ok(residue / T::from_count(n_total - n_under))
}
