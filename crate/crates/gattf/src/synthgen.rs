//! Synthetic motorway-network generator with planted lagged dependencies.
//!
//! Source sensors follow a commuter daily profile (sinusoidal floor plus
//! morning/evening peaks) modulated by a slow per-source random amplitude
//! walk; derived sensors are lag-weighted sums of their parents plus noise;
//! noise sensors are independent of everything. Edge weights below 1
//! attenuate signal down the graph, so a sensor's direct parents carry more
//! information about it than any grandparent or descendant — the property
//! the selection tests rely on.
//!
//! The default 14-sensor template mirrors a three-branch motorway with a
//! grade-separated interchange: chains `A1→…→A6`, `B1→…→B4`, `C1→…→C4`,
//! with merge edges `B4→A6` and `A4→C3`.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::{SensorDataset, SensorId, SensorSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorRole {
    Source,
    Derived,
    Noise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: SensorId,
    pub to: SensorId,
    /// Positive propagation delay in steps.
    pub lag: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthNetworkSpec {
    pub sensors: Vec<(SensorId, SensorRole)>,
    pub edges: Vec<Edge>,
    /// Peak magnitude of the source daily profile, in veh/h.
    pub seasonal_amplitude: f64,
    /// Steps per day; the daily profile repeats with this period.
    pub seasonal_period: usize,
    /// Marginal standard deviation of per-sensor additive Gaussian noise,
    /// in veh/h.
    pub noise_std: f64,
    /// AR(1) coefficient of the per-sensor noise. Demand fluctuations
    /// persist over minutes, so a lagged copy of a series stays correlated
    /// with its origin even when sampled at zero lag.
    pub noise_ar_coeff: f64,
    /// Marginal standard deviation of each source's log-demand level. The
    /// level is a slow stationary lognormal AR(1) multiplying the daily
    /// profile; it carries the branch-specific signal that makes upstream
    /// sensors genuinely informative about downstream ones.
    pub demand_log_std: f64,
    /// AR(1) coefficient of the log-demand level (persistence of a few
    /// hours at a 5-minute step).
    pub demand_ar_coeff: f64,
    pub length: usize,
    pub seed: u64,
    /// Epoch seconds of the first sample.
    pub start_epoch: i64,
    pub step_secs: i64,
}

/// Monday 2022-05-02 00:00 UTC; 19 days of 5-minute steps end on
/// Friday 2022-05-20.
pub const DEFAULT_START_EPOCH: i64 = 1_651_449_600;

impl SynthNetworkSpec {
    /// The 14-sensor three-branch interchange template.
    pub fn motorway_template(seed: u64) -> SynthNetworkSpec {
        let sid = |s: &str| SensorId::new(s).unwrap();
        // Entry ramps (sources) sit close to every mainline detector: the
        // graph is shallow, never more than two hops from a source to a hub.
        let sensors = vec![
            (sid("A1"), SensorRole::Source),
            (sid("A2"), SensorRole::Source),
            (sid("A3"), SensorRole::Source),
            (sid("A4"), SensorRole::Derived),
            (sid("A5"), SensorRole::Derived),
            (sid("A6"), SensorRole::Derived),
            (sid("B1"), SensorRole::Source),
            (sid("B2"), SensorRole::Source),
            (sid("B3"), SensorRole::Source),
            (sid("B4"), SensorRole::Derived),
            (sid("C1"), SensorRole::Source),
            (sid("C2"), SensorRole::Source),
            (sid("C3"), SensorRole::Derived),
            (sid("C4"), SensorRole::Derived),
        ];
        let edge = |from: &str, to: &str, lag: usize, weight: f64| Edge {
            from: sid(from),
            to: sid(to),
            lag,
            weight,
        };
        // Sub-unit weights attenuate signal at every hop while node noise is
        // replenished, so a sensor's direct parents always explain more of it
        // than grandparents, siblings or children do — the margin the
        // selection tests rely on. Merge nodes sit at graph leaves (or keep
        // only a weak out-edge): a merge parent is already blocked by its
        // co-parent, so a strong child would out-inform both.
        let edges = vec![
            edge("A2", "A4", 2, 0.6),
            edge("A4", "A5", 2, 0.45),
            edge("A3", "A6", 2, 0.6),
            edge("B1", "A6", 5, 0.6),
            edge("B2", "B4", 2, 0.6),
            edge("B3", "B4", 2, 0.6),
            edge("C2", "C3", 2, 0.6),
            edge("A1", "C3", 3, 0.6),
            edge("C1", "C4", 4, 0.55),
        ];
        SynthNetworkSpec {
            sensors,
            edges,
            seasonal_amplitude: 1000.0,
            seasonal_period: 288,
            noise_std: 200.0,
            noise_ar_coeff: 0.95,
            demand_log_std: 0.4,
            demand_ar_coeff: 0.97,
            length: 5472,
            seed,
            start_epoch: DEFAULT_START_EPOCH,
            step_secs: 300,
        }
    }

    /// Direct parents of a sensor in the planted graph.
    pub fn parents_of(&self, id: &SensorId) -> Vec<SensorId> {
        self.edges
            .iter()
            .filter(|e| &e.to == id)
            .map(|e| e.from.clone())
            .collect()
    }

    fn index_of(&self, id: &SensorId) -> Option<usize> {
        self.sensors.iter().position(|(s, _)| s == id)
    }

    fn validate(&self) -> Result<Vec<usize>> {
        if self.sensors.is_empty() {
            return Err(Error::Validation("spec has no sensors".into()));
        }
        if self.seasonal_period == 0 || self.step_secs <= 0 {
            return Err(Error::Validation("seasonal_period and step must be positive".into()));
        }
        if self.seasonal_amplitude <= 0.0 || self.noise_std < 0.0 {
            return Err(Error::Validation("amplitude must be positive, noise non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.noise_ar_coeff) || !(0.0..1.0).contains(&self.demand_ar_coeff) {
            return Err(Error::Validation("AR coefficients must lie in [0, 1)".into()));
        }
        if self.demand_log_std < 0.0 {
            return Err(Error::Validation("demand_log_std must be non-negative".into()));
        }
        let mut max_lag = 0usize;
        for e in &self.edges {
            let from = self
                .index_of(&e.from)
                .ok_or_else(|| Error::Validation(format!("edge from unknown sensor {}", e.from)))?;
            let to = self
                .index_of(&e.to)
                .ok_or_else(|| Error::Validation(format!("edge to unknown sensor {}", e.to)))?;
            if self.sensors[to].1 != SensorRole::Derived {
                return Err(Error::Validation(format!(
                    "edge target {} must have the derived role",
                    e.to
                )));
            }
            if e.lag == 0 {
                return Err(Error::Validation(format!(
                    "edge {}→{} must have lag ≥ 1",
                    e.from, e.to
                )));
            }
            let _ = from;
            max_lag = max_lag.max(e.lag);
        }
        for (id, role) in &self.sensors {
            if *role == SensorRole::Derived && self.parents_of(id).is_empty() {
                return Err(Error::Validation(format!("derived sensor {id} has no incoming edge")));
            }
        }
        if self.length <= max_lag + 864 {
            return Err(Error::Validation(format!(
                "length {} too short: needs more than max lag {max_lag} + 864",
                self.length
            )));
        }
        self.topological_order()
    }

    /// Kahn's algorithm over derived sensors; cycles are a validation error.
    fn topological_order(&self) -> Result<Vec<usize>> {
        let n = self.sensors.len();
        let mut indegree = vec![0usize; n];
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in &self.edges {
            let from = self.index_of(&e.from).unwrap();
            let to = self.index_of(&e.to).unwrap();
            indegree[to] += 1;
            children[from].push(to);
        }
        let mut queue: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = queue.pop() {
            order.push(i);
            for &c in &children[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push(c);
                }
            }
        }
        if order.len() != n {
            return Err(Error::Validation("dependency graph contains a cycle".into()));
        }
        Ok(order)
    }
}

/// Per-source daily profile: a sinusoidal floor with commuter peaks near
/// 08:00 and 17:30. Centers, widths and heights are jittered per source so
/// two unrelated entry ramps never share the exact same curve.
#[derive(Debug, Clone)]
struct SourceProfile {
    floor_base: f64,
    floor_amp: f64,
    floor_phase: f64,
    morning: (f64, f64, f64),
    evening: (f64, f64, f64),
}

impl SourceProfile {
    fn sample(rng: &mut impl Rng) -> SourceProfile {
        let u = |rng: &mut dyn RngCore, lo: f64, hi: f64| lo + (hi - lo) * rng.gen::<f64>();
        // Moderate commuter peaks: the time-of-day component must not carry
        // most of a series' variance. A near-noiseless rescaling (one graph
        // hop) preserves time-of-day information almost perfectly, so a
        // curve-dominated generator would make grandparents look as
        // informative as parents. Demand (the amplitude walk) dominates
        // instead and attenuates by the edge weight at every hop.
        SourceProfile {
            floor_base: u(rng, 0.38, 0.42),
            floor_amp: u(rng, 0.04, 0.06),
            floor_phase: -std::f64::consts::FRAC_PI_2 + u(rng, -0.5, 0.5),
            morning: (
                8.0 / 24.0 + u(rng, -0.035, 0.035),
                u(rng, 0.038, 0.052),
                u(rng, 0.18, 0.24),
            ),
            evening: (
                17.5 / 24.0 + u(rng, -0.035, 0.035),
                u(rng, 0.045, 0.065),
                u(rng, 0.22, 0.28),
            ),
        }
    }

    /// Shape value in roughly [0, 1] at a fraction of the day.
    fn shape(&self, frac_of_day: f64) -> f64 {
        let bump = |center: f64, width: f64| {
            let mut d = (frac_of_day - center).abs();
            d = d.min(1.0 - d); // wrap around midnight
            (-d * d / (2.0 * width * width)).exp()
        };
        self.floor_base
            + self.floor_amp * (std::f64::consts::TAU * frac_of_day + self.floor_phase).sin()
            + self.morning.2 * bump(self.morning.0, self.morning.1)
            + self.evening.2 * bump(self.evening.0, self.evening.1)
    }
}

/// Generate the dataset described by the spec; deterministic in the seed.
pub fn generate(spec: &SynthNetworkSpec) -> Result<SensorDataset> {
    let order = spec.validate()?;
    let n = spec.sensors.len();
    // Warm-up long enough for lag chains to reach steady state before t = 0.
    let warmup: usize = spec.edges.iter().map(|e| e.lag).sum::<usize>().max(64);
    let total = spec.length + warmup;

    let mut raw: Vec<Option<Vec<f64>>> = vec![None; n];
    for &i in &order {
        let (id, role) = &spec.sensors[i];
        // Independent stream per sensor so topology changes don't reshuffle
        // unrelated sensors.
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ stable_hash(id.as_str()));
        let values = match role {
            SensorRole::Source => {
                let profile = SourceProfile::sample(&mut rng);
                let mut noise = NoiseGen::new(spec.noise_std, spec.noise_ar_coeff);
                let mut demand = NoiseGen::new(spec.demand_log_std, spec.demand_ar_coeff);
                let cap = 2.0 * spec.demand_log_std;
                (0..total)
                    .map(|t| {
                        // clip tail excursions: histogram binning keys off the
                        // range, and rare spikes would blow up the bin count
                        let level = demand.next(&mut rng).clamp(-cap, cap).exp();
                        let frac = (t % spec.seasonal_period) as f64 / spec.seasonal_period as f64;
                        spec.seasonal_amplitude * profile.shape(frac) * level + noise.next(&mut rng)
                    })
                    .collect::<Vec<f64>>()
            }
            SensorRole::Noise => {
                let level = 0.3 * spec.seasonal_amplitude;
                let mut noise = NoiseGen::new(spec.noise_std, spec.noise_ar_coeff);
                (0..total).map(|_| level + noise.next(&mut rng)).collect()
            }
            SensorRole::Derived => {
                let incoming: Vec<(&Edge, &Vec<f64>)> = spec
                    .edges
                    .iter()
                    .filter(|e| &e.to == id)
                    .map(|e| {
                        let p = spec.index_of(&e.from).unwrap();
                        (e, raw[p].as_ref().expect("parents precede children in topo order"))
                    })
                    .collect();
                let mut noise = NoiseGen::new(spec.noise_std, spec.noise_ar_coeff);
                (0..total)
                    .map(|t| {
                        let mut v = 0.0;
                        for (e, parent) in &incoming {
                            // before the parent history starts, hold its first value
                            let idx = t.saturating_sub(e.lag);
                            v += e.weight * parent[idx];
                        }
                        v + noise.next(&mut rng)
                    })
                    .collect()
            }
        };
        raw[i] = Some(values);
    }

    let series = spec
        .sensors
        .iter()
        .enumerate()
        .map(|(i, (id, _))| {
            let values: Vec<f64> = raw[i].as_ref().unwrap()[warmup..]
                .iter()
                .map(|&v| v.max(0.0))
                .collect();
            SensorSeries::fully_observed(id.clone(), spec.start_epoch, spec.step_secs, values)
        })
        .collect::<Result<Vec<_>>>()?;
    SensorDataset::new(series)
}

/// Stationary AR(1) Gaussian noise with a fixed marginal standard deviation.
struct NoiseGen {
    marginal_std: f64,
    coeff: f64,
    innovation_std: f64,
    state: Option<f64>,
}

impl NoiseGen {
    fn new(marginal_std: f64, coeff: f64) -> NoiseGen {
        NoiseGen {
            marginal_std,
            coeff,
            innovation_std: marginal_std * (1.0 - coeff * coeff).sqrt(),
            state: None,
        }
    }

    fn next(&mut self, rng: &mut impl Rng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        let v = match self.state {
            None => self.marginal_std * z,
            Some(prev) => self.coeff * prev + self.innovation_std * z,
        };
        self.state = Some(v);
        v
    }
}

/// FNV-1a, stable across runs and platforms.
fn stable_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mi::{select_informative_covariates, MiMatrix};

    fn sid(s: &str) -> SensorId {
        SensorId::new(s).unwrap()
    }

    #[test]
    fn noiseless_single_edge_is_shifted_copy() {
        let spec = SynthNetworkSpec {
            sensors: vec![(sid("P"), SensorRole::Source), (sid("D"), SensorRole::Derived)],
            edges: vec![Edge { from: sid("P"), to: sid("D"), lag: 3, weight: 1.0 }],
            seasonal_amplitude: 1000.0,
            seasonal_period: 288,
            noise_std: 0.0,
            noise_ar_coeff: 0.94,
            demand_log_std: 0.4,
            demand_ar_coeff: 0.98,
            length: 2000,
            seed: 11,
            start_epoch: DEFAULT_START_EPOCH,
            step_secs: 300,
        };
        let ds = generate(&spec).unwrap();
        let p = ds.get(&sid("P")).unwrap();
        let d = ds.get(&sid("D")).unwrap();
        for t in 3..ds.len() {
            assert_eq!(d.values[t], p.values[t - 3].max(0.0));
        }
    }

    #[test]
    fn template_shape_and_non_negativity() {
        let ds = generate(&SynthNetworkSpec::motorway_template(1)).unwrap();
        assert_eq!(ds.num_sensors(), 14);
        assert_eq!(ds.len(), 5472);
        for s in ds.series() {
            assert!(s.values.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn determinism_under_seed() {
        let a = generate(&SynthNetworkSpec::motorway_template(5)).unwrap();
        let b = generate(&SynthNetworkSpec::motorway_template(5)).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthNetworkSpec::motorway_template(6)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn cycle_rejected() {
        let mut spec = SynthNetworkSpec::motorway_template(1);
        spec.sensors = vec![(sid("X"), SensorRole::Derived), (sid("Y"), SensorRole::Derived)];
        spec.edges = vec![
            Edge { from: sid("X"), to: sid("Y"), lag: 1, weight: 0.5 },
            Edge { from: sid("Y"), to: sid("X"), lag: 1, weight: 0.5 },
        ];
        assert!(matches!(generate(&spec), Err(Error::Validation(_))));
    }

    #[test]
    fn zero_lag_edge_rejected() {
        let mut spec = SynthNetworkSpec::motorway_template(1);
        spec.edges[0].lag = 0;
        assert!(matches!(generate(&spec), Err(Error::Validation(_))));
    }

    #[test]
    fn noise_sensor_uninformative_parents_informative() {
        let mut spec = SynthNetworkSpec::motorway_template(3);
        spec.sensors.push((sid("N1"), SensorRole::Noise));
        let ds = generate(&spec).unwrap();
        let matrix = MiMatrix::compute(&ds).unwrap();
        let sel = select_informative_covariates(&matrix, &[sid("C3")], 14).unwrap();
        let ranked = &sel[0].covariates;
        let pos = |id: &str| ranked.iter().position(|c| c.as_str() == id).unwrap();
        // planted parents of C3 rank ahead of the pure-noise sensor
        assert!(pos("C2") < pos("N1"));
        assert!(pos("A1") < pos("N1"));
        let noise_score = matrix.get(&sid("C3"), &sid("N1")).unwrap();
        let parent_score = matrix.get(&sid("C3"), &sid("C2")).unwrap();
        // the plug-in estimate of an independent pair stays near its bias
        // floor; planted parents sit well above it
        assert!(noise_score < 0.13, "noise MI {noise_score}");
        assert!(parent_score > 2.2 * noise_score);
    }
}
