//! Report arrival processes for the M2M traffic classes.

use rand_distr::{Beta, Distribution as _, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    Poisson,
    /// Constant-rate reporting with a uniformly random phase.
    #[serde(alias = "uniform")]
    UniformPeriodic,
    /// One activation per device, synchronised across the class by a Beta
    /// law over the activation period.
    #[serde(alias = "beta")]
    BetaAlarm,
}

impl Distribution {
    pub fn is_synchronous(self) -> bool {
        matches!(self, Distribution::BetaAlarm)
    }
}

fn default_beta() -> (f64, f64) {
    (3.0, 4.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceClass {
    pub name: String,
    /// Cell-level device count; divided by the scenario's sector fraction.
    pub count: u64,
    /// Reports per second per device. Absent for alarm classes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arrival_rate: Option<f64>,
    /// Bytes per report.
    pub payload: u32,
    pub distribution: Distribution,
    #[serde(default = "default_beta")]
    pub beta_params: (f64, f64),
    /// Seconds over which an alarm class activates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation_period: Option<f64>,
    /// Set for periodic reporters; with eUSF they hold a persistent
    /// allocation sized for `payload / reporting_interval`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reporting_interval: Option<f64>,
}

impl DeviceClass {
    pub fn poisson(name: &str, count: u64, rate: f64, payload: u32) -> Self {
        Self {
            name: name.to_string(),
            count,
            arrival_rate: Some(rate),
            payload,
            distribution: Distribution::Poisson,
            beta_params: default_beta(),
            activation_period: None,
            reporting_interval: None,
        }
    }

    pub fn uniform(name: &str, count: u64, rate: f64, payload: u32) -> Self {
        Self {
            distribution: Distribution::UniformPeriodic,
            ..Self::poisson(name, count, rate, payload)
        }
    }

    pub fn alarm(name: &str, count: u64, activation_period: f64, payload: u32) -> Self {
        Self {
            name: name.to_string(),
            count,
            arrival_rate: None,
            payload,
            distribution: Distribution::BetaAlarm,
            beta_params: default_beta(),
            activation_period: Some(activation_period),
            reporting_interval: None,
        }
    }

    /// Per-device rate, falling back to `1 / reporting_interval`.
    pub fn rate(&self) -> Option<f64> {
        self.arrival_rate
            .or_else(|| self.reporting_interval.map(|t| 1.0 / t))
    }

    pub fn is_periodic_reporter(&self) -> bool {
        self.reporting_interval.is_some()
    }

    pub fn validate(&self, geometry: &Geometry) -> Result<()> {
        if self.payload == 0 {
            return Err(Error::config(format!("class {}: payload must be >= 1 byte", self.name)));
        }
        match self.distribution {
            Distribution::BetaAlarm => {
                let period = self.activation_period.ok_or_else(|| {
                    Error::config(format!("class {}: alarm class needs activation_period", self.name))
                })?;
                if !(period > 0.0) {
                    return Err(Error::config(format!(
                        "class {}: activation_period must be positive",
                        self.name
                    )));
                }
                let (a, b) = self.beta_params;
                if !(a > 0.0 && b > 0.0) {
                    return Err(Error::config(format!("class {}: Beta parameters must be positive", self.name)));
                }
            }
            Distribution::Poisson | Distribution::UniformPeriodic => {
                let rate = self.rate().ok_or_else(|| {
                    Error::config(format!("class {}: missing arrival_rate", self.name))
                })?;
                check_rate(rate, geometry).map_err(|e| match e {
                    Error::Config(m) => Error::Config(format!("class {}: {m}", self.name)),
                    other => other,
                })?;
            }
        }
        if let Some(t) = self.reporting_interval {
            if !(t > 0.0) {
                return Err(Error::config(format!("class {}: reporting_interval must be positive", self.name)));
            }
        }
        Ok(())
    }
}

fn check_rate(rate: f64, geometry: &Geometry) -> Result<()> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::config(format!("arrival rate must be positive, got {rate}")));
    }
    if 1.0 / rate < geometry.frame_duration() {
        return Err(Error::config(format!(
            "arrival rate {rate}/s gives a mean inter-arrival below one frame"
        )));
    }
    Ok(())
}

fn default_sector_fraction() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default = "default_sector_fraction")]
    pub sector_fraction: f64,
    #[serde(default, rename = "class")]
    pub classes: Vec<DeviceClass>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            sector_fraction: default_sector_fraction(),
            classes: Vec::new(),
        }
    }
}

impl Scenario {
    /// A single Poisson class of `devices` simulated devices whose
    /// aggregate fresh rate is `total_rate`.
    pub fn poisson_population(total_rate: f64, devices: u64, payload: u32) -> Self {
        Self {
            sector_fraction: 1.0,
            classes: vec![DeviceClass::poisson(
                "poisson_population",
                devices,
                total_rate / devices as f64,
                payload,
            )],
        }
    }

    pub fn validate(&self, geometry: &Geometry) -> Result<()> {
        if !(self.sector_fraction >= 1.0) {
            return Err(Error::config("sector_fraction must be >= 1"));
        }
        for c in &self.classes {
            c.validate(geometry)?;
        }
        Ok(())
    }

    /// Devices of `class` present in the simulated sector.
    pub fn simulated_count(&self, class: &DeviceClass) -> u64 {
        (class.count as f64 / self.sector_fraction).round() as u64
    }

    pub fn total_devices(&self) -> u64 {
        self.classes.iter().map(|c| self.simulated_count(c)).sum()
    }

    /// Rescales the asynchronous classes so their aggregate rate is `total`.
    pub fn scale_async_rate(&mut self, total: f64) -> Result<()> {
        let current = aggregate_async_rate(self);
        if current <= 0.0 {
            return Err(Error::config("scenario has no asynchronous traffic to rescale"));
        }
        let factor = total / current;
        for c in self.classes.iter_mut().filter(|c| !c.distribution.is_synchronous()) {
            if let Some(r) = c.arrival_rate.as_mut() {
                *r *= factor;
            } else if let Some(t) = c.reporting_interval.as_mut() {
                *t /= factor;
            }
        }
        Ok(())
    }

    /// Sets the simulated device count of every alarm class.
    pub fn set_alarm_count(&mut self, simulated: u64) {
        let fraction = self.sector_fraction;
        for c in self.classes.iter_mut().filter(|c| c.distribution.is_synchronous()) {
            c.count = (simulated as f64 * fraction).round() as u64;
        }
    }

    pub fn set_async_payload(&mut self, payload: u32) {
        for c in self.classes.iter_mut().filter(|c| !c.distribution.is_synchronous()) {
            c.payload = payload;
        }
    }
}

/// Aggregate fresh rate of the asynchronous classes in the simulated sector.
pub fn aggregate_async_rate(scenario: &Scenario) -> f64 {
    scenario
        .classes
        .iter()
        .filter(|c| !c.distribution.is_synchronous())
        .map(|c| scenario.simulated_count(c) as f64 * c.rate().unwrap_or(0.0))
        .sum()
}

/// Candidate rates for periodic smart-meter reporting, per device.
pub const SMART_METER_PERIODIC_RATES: [f64; 7] =
    [1.67e-2, 3.33e-3, 1.11e-3, 2.78e-4, 4.63e-5, 2.32e-5, 1.16e-5];

/// Reference M2M population of a 1000 m, three-sector sub-urban cell.
/// Smart-meter message sizes are listed as "< 1000" bytes and are encoded
/// at the 1000 byte bound.
pub fn table1() -> Scenario {
    let mut periodic = DeviceClass::poisson(
        "smart_meter_periodic",
        13941,
        SMART_METER_PERIODIC_RATES[0],
        1000,
    );
    periodic.reporting_interval = Some(1.0 / SMART_METER_PERIODIC_RATES[0]);
    let mut classes = vec![periodic, DeviceClass::alarm("smart_meter_alarm", 13941, 120.0, 1000)];
    classes.extend(table1_async().classes);
    Scenario {
        sector_fraction: 3.0,
        classes,
    }
}

/// The asynchronous, non-smart-meter rows of the reference population.
pub fn table1_async() -> Scenario {
    Scenario {
        sector_fraction: 3.0,
        classes: vec![
            DeviceClass::poisson("home_security", 3098, 1.67e-3, 20),
            DeviceClass::poisson("elderly_sensor", 310, 1.67e-2, 128),
            DeviceClass::poisson("credit_machine_grocery", 72, 8.3e-3, 24),
            DeviceClass::poisson("credit_machine_shop", 1100, 5.56e-4, 24),
            DeviceClass::uniform("roadway_sign", 2963, 3.33e-2, 1),
            DeviceClass::uniform("traffic_light", 360, 1.67e-2, 1),
            DeviceClass::poisson("traffic_sensor", 360, 1.67e-2, 1),
            DeviceClass::poisson("movie_rental", 36, 1.16e-4, 152),
        ],
    }
}

/// Frame of the first report of a device of `class`.
pub fn first_arrival(class: &DeviceClass, geometry: &Geometry, rng: &mut RngStream) -> Result<Option<u64>> {
    match class.distribution {
        Distribution::Poisson => next_arrival(class, 0, geometry, rng).map(Some),
        Distribution::UniformPeriodic => {
            let period = periodic_frames(class, geometry)?;
            let phase = (rng.uniform() * period as f64) as u64;
            Ok(Some(phase.min(period - 1)))
        }
        Distribution::BetaAlarm => Ok(None),
    }
}

/// Frame of the report following one at `now`.
pub fn next_arrival(class: &DeviceClass, now: u64, geometry: &Geometry, rng: &mut RngStream) -> Result<u64> {
    match class.distribution {
        Distribution::Poisson => {
            let rate = class.rate().ok_or_else(|| Error::config("missing arrival_rate"))?;
            check_rate(rate, geometry)?;
            let exp = Exp::new(rate).map_err(|e| Error::config(e.to_string()))?;
            let gap = (exp.sample(rng) / geometry.frame_duration()).round() as u64;
            Ok(now + gap.max(1))
        }
        Distribution::UniformPeriodic => Ok(now + periodic_frames(class, geometry)?),
        Distribution::BetaAlarm => Err(Error::domain("alarm devices report once; no next arrival")),
    }
}

fn periodic_frames(class: &DeviceClass, geometry: &Geometry) -> Result<u64> {
    let rate = class.rate().ok_or_else(|| Error::config("missing arrival_rate"))?;
    check_rate(rate, geometry)?;
    Ok(geometry.seconds_to_frames(1.0 / rate).max(1))
}

/// Activation frames (relative to the start of the activation period) of
/// `n` alarm devices.
pub fn alarm_activation_times(
    n: u64,
    activation_period: f64,
    beta_params: (f64, f64),
    geometry: &Geometry,
    rng: &mut RngStream,
) -> Result<Vec<u64>> {
    if !(activation_period > 0.0) {
        return Err(Error::domain("activation_period must be positive"));
    }
    let beta = Beta::new(beta_params.0, beta_params.1).map_err(|e| Error::domain(e.to_string()))?;
    let period_frames = geometry.seconds_to_frames(activation_period).max(2);
    Ok((0..n)
        .map(|_| {
            let t = beta.sample(rng) * activation_period;
            let f = (t / geometry.frame_duration()).ceil() as u64;
            f.clamp(1, period_frames - 1)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::streams;

    #[test]
    fn poisson_mean_inter_arrival() {
        let g = Geometry::default();
        let class = DeviceClass::poisson("elderly", 1, 1.67e-2, 128);
        let mut rng = RngStream::new(11, streams::ARRIVALS_BASE);
        let n = 100_000u64;
        let mut now = 0;
        for _ in 0..n {
            now = next_arrival(&class, now, &g, &mut rng).unwrap();
        }
        let mean = g.frames_to_seconds(now) / n as f64;
        let expected = 1.0 / 1.67e-2;
        assert!((mean - 59.88).abs() / 59.88 < 0.01, "mean {mean}");
        assert!((mean - expected).abs() / expected < 0.01);
    }

    #[test]
    fn uniform_periodic_is_exactly_periodic() {
        let g = Geometry::default();
        let class = DeviceClass::uniform("sign", 1, 3.33e-2, 1);
        let mut rng = RngStream::new(3, streams::ARRIVALS_BASE);
        let first = first_arrival(&class, &g, &mut rng).unwrap().unwrap();
        let period = g.seconds_to_frames(1.0 / 3.33e-2);
        assert!(first < period);
        let mut t = first;
        for _ in 0..10 {
            let next = next_arrival(&class, t, &g, &mut rng).unwrap();
            assert!((g.frames_to_seconds(next - t) - 30.03).abs() < 1e-9);
            t = next;
        }
    }

    #[test]
    fn degenerate_rates_rejected() {
        let g = Geometry::default();
        let mut rng = RngStream::new(3, streams::ARRIVALS_BASE);
        let fast = DeviceClass::uniform("x", 1, 1000.0, 1);
        assert!(matches!(next_arrival(&fast, 0, &g, &mut rng), Err(Error::Config(_))));
        let zero = DeviceClass::poisson("x", 1, 0.0, 1);
        assert!(matches!(next_arrival(&zero, 0, &g, &mut rng), Err(Error::Config(_))));
        assert!(zero.validate(&g).is_err());
    }

    #[test]
    fn alarm_activation_mean_and_support() {
        let g = Geometry::default();
        let mut rng = RngStream::new(5, streams::ALARM_ACTIVATION);
        let n = 100_000;
        let times = alarm_activation_times(n, 120.0, (3.0, 4.0), &g, &mut rng).unwrap();
        let secs: Vec<f64> = times.iter().map(|&f| g.frames_to_seconds(f)).collect();
        assert!(secs.iter().all(|&s| s > 0.0 && s < 120.0));
        let mean = secs.iter().sum::<f64>() / n as f64;
        let expected = 120.0 * 3.0 / 7.0;
        assert!((mean - expected).abs() / expected < 0.01, "mean {mean}");
        assert!(alarm_activation_times(0, 120.0, (3.0, 4.0), &g, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn aggregate_rates() {
        let async_rate = aggregate_async_rate(&table1_async());
        // 122.26 reports/s cell-wide over three sectors.
        assert!((async_rate - 40.75).abs() < 0.05, "{async_rate}");
        let single = Scenario {
            sector_fraction: 3.0,
            classes: vec![DeviceClass::poisson("a", 300, 0.1, 10)],
        };
        assert!((aggregate_async_rate(&single) - 10.0).abs() < 1e-12);
        assert_eq!(aggregate_async_rate(&Scenario::default()), 0.0);
    }

    #[test]
    fn table1_contents() {
        let t = table1();
        assert_eq!(t.classes.len(), 10);
        assert_eq!(t.classes[0].count, 13941);
        assert_eq!(t.classes[1].distribution, Distribution::BetaAlarm);
        // Alarms do not count toward the asynchronous aggregate.
        let with_meters = aggregate_async_rate(&t);
        assert!(with_meters > aggregate_async_rate(&table1_async()));
        assert!(t.validate(&Geometry::default()).is_ok());
    }

    #[test]
    fn rescaling() {
        let mut s = table1_async();
        s.scale_async_rate(42.0).unwrap();
        assert!((aggregate_async_rate(&s) - 42.0).abs() < 1e-9);
        let mut s = Scenario {
            sector_fraction: 3.0,
            classes: vec![DeviceClass::alarm("alarm", 10, 120.0, 100)],
        };
        s.set_alarm_count(1500);
        assert_eq!(s.simulated_count(&s.classes[0]), 1500);
        assert!(s.scale_async_rate(10.0).is_err());
    }
}
