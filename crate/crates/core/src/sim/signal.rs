//! Deterministic synthetic sensor signal.
//!
//! `value(node, sensor, tick)` is a pure function of the scenario seed, so
//! any reading can be replayed or predicted offline. The shape is a sinusoid
//! around a per-sensor baseline with bounded seeded noise, which makes
//! threshold crossings controllable in tests and scenarios.

use crate::ids::{DeviceId, SensorKind, Tick};
use crate::rng::{domain, mix64, mix_str, sub_seed};
use crate::scenario::SignalConfig;

/// Sample the synthetic signal. Noise is uniform in
/// [-noise_amplitude, +noise_amplitude], derived from (seed, node, sensor,
/// tick) alone.
pub fn value(
    cfg: &SignalConfig,
    seed: u64,
    node: &DeviceId,
    sensor: &SensorKind,
    tick: Tick,
) -> f64 {
    let phase = if cfg.period_ticks == 0 {
        0.0
    } else {
        2.0 * std::f64::consts::PI * (tick % cfg.period_ticks) as f64 / cfg.period_ticks as f64
    };
    cfg.baseline
        + cfg.amplitude * phase.sin()
        + cfg.noise_amplitude * noise_unit(seed, node, sensor, tick)
}

/// Deterministic noise in [-1, 1).
fn noise_unit(seed: u64, node: &DeviceId, sensor: &SensorKind, tick: Tick) -> f64 {
    let mut h = sub_seed(seed, domain::NOISE);
    h = mix_str(h, node.as_str());
    h = mix_str(h, sensor.as_str());
    h = mix64(h ^ mix64(tick));
    // 53 uniform bits -> [0,1) -> [-1,1)
    ((h >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SignalConfig {
        SignalConfig {
            baseline: 35.0,
            amplitude: 20.0,
            period_ticks: 18_000,
            noise_amplitude: 1.0,
        }
    }

    #[test]
    fn replayable() {
        let node = DeviceId::new("n17");
        let sensor = SensorKind::new("pm25");
        let a = value(&cfg(), 42, &node, &sensor, 6000);
        let b = value(&cfg(), 42, &node, &sensor, 6000);
        assert_eq!(a, b);
    }

    #[test]
    fn noise_is_bounded_and_varies() {
        let node = DeviceId::new("n1");
        let sensor = SensorKind::new("pm25");
        let mut distinct = std::collections::BTreeSet::new();
        for t in 0..200 {
            let n = noise_unit(9, &node, &sensor, t);
            assert!((-1.0..1.0).contains(&n));
            distinct.insert(n.to_bits());
        }
        assert!(distinct.len() > 150);
    }

    #[test]
    fn sinusoid_hits_known_points() {
        let quiet = SignalConfig {
            noise_amplitude: 0.0,
            ..cfg()
        };
        let node = DeviceId::new("n0");
        let sensor = SensorKind::new("pm25");
        let at = |t| value(&quiet, 0, &node, &sensor, t);
        assert!((at(0) - 35.0).abs() < 1e-9);
        // Quarter period: baseline + amplitude.
        assert!((at(4500) - 55.0).abs() < 1e-9);
        assert!((at(13_500) - 15.0).abs() < 1e-9);
    }
}
