//! Wrench feedback: adaptive time-window smoothing of the force-torque
//! stream and the servo encoding that turns a wrench into four forearm
//! servo targets.
//!
//! Each servo angle is the no-load angle plus a weighted sum over the base
//! components `fx, fy, fz, tz`. The `fy` and `fx` terms are further scaled by
//! a dynamic coefficient driven by the torque/force ratios `tx/fy` and
//! `ty/fx`, which moves the felt contact point toward or away from the wrist.

use crate::config::{PipelineConfig, WindowConfig, WrenchConfig};
use crate::model::{ServoCommand, Wrench, SERVO_COUNT};
use std::collections::VecDeque;

/// Sliding mean whose length adapts to the signal: it snaps to
/// `window.short` samples when a sample jumps away from the current output
/// and grows back by one sample per tick up to `window.long`.
#[derive(Debug, Clone)]
pub struct WrenchFilterState {
    cfg: WindowConfig,
    history: VecDeque<Wrench>,
    window: usize,
    last: Option<Wrench>,
}

impl WrenchFilterState {
    pub fn new(cfg: WindowConfig) -> Self {
        WrenchFilterState {
            cfg,
            history: VecDeque::with_capacity(cfg.long),
            window: cfg.short,
            last: None,
        }
    }

    /// Current effective window length in samples.
    pub fn window(&self) -> usize {
        self.window
    }

    pub fn last_filtered(&self) -> Option<&Wrench> {
        self.last.as_ref()
    }

    /// Applies new window parameters, keeping as much history as still fits.
    pub fn reconfigure(&mut self, cfg: WindowConfig) {
        if cfg == self.cfg {
            return;
        }
        self.cfg = cfg;
        while self.history.len() > cfg.long {
            self.history.pop_front();
        }
        self.window = self.window.clamp(cfg.short, cfg.long);
    }

    /// Feeds one raw sample and returns the filtered wrench, stamped with the
    /// sample's timestamp.
    pub fn filter(&mut self, sample: Wrench) -> Wrench {
        if let Some(prev) = &self.last {
            let innovation = sample
                .components()
                .iter()
                .zip(prev.components())
                .map(|(s, p)| (s - p).abs())
                .fold(0.0, f64::max);
            self.window = if innovation > self.cfg.innovation_threshold {
                self.cfg.short
            } else {
                (self.window + 1).min(self.cfg.long)
            };
        }

        if self.history.len() == self.cfg.long {
            self.history.pop_front();
        }
        self.history.push_back(sample);

        let n = self.window.min(self.history.len());
        let mut sum = [0.0; 6];
        for w in self.history.iter().skip(self.history.len() - n) {
            for (acc, v) in sum.iter_mut().zip(w.components()) {
                *acc += v;
            }
        }
        let out = Wrench::from_components(sample.t_us, sum.map(|s| s / n as f64));
        self.last = Some(out);
        out
    }
}

/// Functional form of [`WrenchFilterState::filter`].
pub fn filter_wrench(state: &mut WrenchFilterState, sample: Wrench) -> Wrench {
    state.filter(sample)
}

/// Dynamic coefficient `max(c_min, 1 + σ·κ_r·(τ/f + δ))`.
///
/// A force below `weight_epsilon` in magnitude makes the ratio meaningless;
/// the coefficient is then exactly 1.
pub fn dynamic_coefficient(tau: f64, f: f64, sigma: f64, cfg: &WrenchConfig) -> f64 {
    if f.abs() < cfg.weight_epsilon {
        return 1.0;
    }
    let r = tau / f;
    cfg.c_min.max(1.0 + sigma * cfg.kappa_r * (r + cfg.delta))
}

/// Base components `(fx, fy, fz, tz)` of a wrench.
pub fn base_components(w: &Wrench) -> [f64; 4] {
    [w.fx, w.fy, w.fz, w.tz]
}

/// Share of each base component in the total magnitude, `|v_j| / Σ|v_k|`.
/// All zero when the total is below `weight_epsilon`.
pub fn component_weights(w: &Wrench, cfg: &WrenchConfig) -> [f64; 4] {
    let v = base_components(w);
    let total: f64 = v.iter().map(|x| x.abs()).sum();
    if total < cfg.weight_epsilon {
        return [0.0; 4];
    }
    v.map(|x| x.abs() / total)
}

/// Angle increment per servo before clamping.
pub fn servo_increments(w: &Wrench, cfg: &WrenchConfig) -> [f64; SERVO_COUNT] {
    let v = base_components(w);
    let weights = component_weights(w, cfg);
    let kappa = cfg.kappa.as_array();
    std::array::from_fn(|servo| {
        let coeff = [
            dynamic_coefficient(w.ty, w.fx, f64::from(cfg.sigma[servo][1]), cfg),
            dynamic_coefficient(w.tx, w.fy, f64::from(cfg.sigma[servo][0]), cfg),
            1.0,
            1.0,
        ];
        (0..4)
            .map(|j| weights[j] * kappa[j] * f64::from(cfg.sign_matrix[servo][j]) * coeff[j] * v[j])
            .sum()
    })
}

/// Encodes a (filtered) wrench as clamped servo targets.
pub fn encode_wrench(w: &Wrench, cfg: &PipelineConfig) -> ServoCommand {
    let inc = servo_increments(w, &cfg.wrench);
    let (lo, hi) = (cfg.servo.angle_min, cfg.servo.angle_max);
    let mut angles = [0.0; SERVO_COUNT];
    let mut clamped = [false; SERVO_COUNT];
    for i in 0..SERVO_COUNT {
        let raw = cfg.servo.theta_init[i] + inc[i];
        clamped[i] = !(lo..=hi).contains(&raw);
        angles[i] = raw.clamp(lo, hi);
    }
    ServoCommand {
        t_us: w.t_us,
        angles,
        clamped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> PipelineConfig {
        PipelineConfig::default()
    }

    fn fy(t_us: u64, v: f64) -> Wrench {
        Wrench {
            t_us,
            fy: v,
            ..Default::default()
        }
    }

    fn wrench_strategy(mag: f64) -> impl Strategy<Value = Wrench> {
        proptest::array::uniform6(-mag..mag).prop_map(|c| Wrench::from_components(0, c))
    }

    #[test]
    fn single_sample_passes_through() {
        let mut st = WrenchFilterState::new(cfg().wrench.window);
        let w = Wrench::from_components(5, [1.0, -2.0, 3.0, 0.1, -0.2, 0.3]);
        assert_eq!(st.filter(w), w);
    }

    #[test]
    fn constant_stream_is_exact_once_filled() {
        let mut st = WrenchFilterState::new(cfg().wrench.window);
        for t in 0..40 {
            let out = st.filter(fy(t, 2.0));
            assert_eq!(out.fy, 2.0);
        }
        assert_eq!(st.window(), 20);
    }

    #[test]
    fn step_collapses_window_and_settles() {
        // Frozen from a scratch simulation of the recurrence:
        // outputs 5/3, 10/3, 5 on the three ticks starting at the step.
        let window = cfg().wrench.window;
        let mut st = WrenchFilterState::new(window);
        for t in 0..30 {
            st.filter(fy(t, 0.0));
        }
        assert_eq!(st.window(), 20);
        let expected = [5.0 / 3.0, 10.0 / 3.0, 5.0];
        for (k, want) in expected.iter().enumerate() {
            let out = st.filter(fy(30 + k as u64, 5.0));
            assert_eq!(st.window(), 3);
            assert!((out.fy - want).abs() < 1e-12, "tick {k}: {}", out.fy);
        }
        assert!(expected.len() <= window.short);
        let out = st.filter(fy(33, 5.0));
        assert!((out.fy - 5.0).abs() <= 0.05);
        assert_eq!(st.window(), 4);
    }

    #[test]
    fn small_changes_grow_window() {
        let mut st = WrenchFilterState::new(cfg().wrench.window);
        st.filter(fy(0, 0.0));
        assert_eq!(st.window(), 3);
        st.filter(fy(1, 0.5));
        assert_eq!(st.window(), 4);
    }

    #[test]
    fn reconfigure_trims_history() {
        let mut st = WrenchFilterState::new(cfg().wrench.window);
        for t in 0..30 {
            st.filter(fy(t, 1.0));
        }
        st.reconfigure(WindowConfig {
            short: 2,
            long: 5,
            innovation_threshold: 1.0,
        });
        assert_eq!(st.window(), 5);
        assert_eq!(st.filter(fy(31, 1.0)).fy, 1.0);
    }

    #[test]
    fn coefficient_neutral_at_zero_ratio() {
        let mut w = cfg().wrench;
        w.kappa_r = 5.0;
        w.delta = 0.0;
        w.c_min = 0.2;
        assert_eq!(dynamic_coefficient(0.0, 2.0, 1.0, &w), 1.0);
    }

    #[test]
    fn coefficient_neutral_on_degenerate_force() {
        let w = cfg().wrench;
        assert_eq!(w.weight_epsilon, 1e-3);
        assert_eq!(dynamic_coefficient(123.0, 1e-9, 1.0, &w), 1.0);
        assert_eq!(dynamic_coefficient(-4.0, -1e-9, -1.0, &w), 1.0);
    }

    #[test]
    fn coefficient_floors_at_c_min() {
        // max(0.2, 1 + 5 * (-0.5 / 2)) = max(0.2, -0.25)
        let w = cfg().wrench;
        assert_eq!(dynamic_coefficient(-0.5, 2.0, 1.0, &w), 0.2);
    }

    #[test]
    fn weights_single_component() {
        let w = cfg().wrench;
        assert_eq!(component_weights(&fy(0, 2.0), &w), [0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn weights_zero_wrench() {
        let w = cfg().wrench;
        assert_eq!(component_weights(&Wrench::zero(0), &w), [0.0; 4]);
    }

    #[test]
    fn weights_symmetric() {
        let w = cfg().wrench;
        let wr = Wrench {
            fx: 1.0,
            fy: 1.0,
            fz: 1.0,
            tz: 1.0,
            ..Default::default()
        };
        assert_eq!(component_weights(&wr, &w), [0.25; 4]);
    }

    #[test]
    fn zero_wrench_encodes_to_theta_init() {
        let c = cfg();
        let cmd = encode_wrench(&Wrench::zero(0), &c);
        assert_eq!(cmd.angles, c.servo.theta_init);
        assert_eq!(cmd.clamped, [false; 4]);
    }

    #[test]
    fn fy_only_hand_evaluated() {
        // 180 + 1 * 10 * (±1) * 1 * 2
        let c = cfg();
        assert_eq!(
            [
                c.wrench.sign_matrix[0][1],
                c.wrench.sign_matrix[1][1],
                c.wrench.sign_matrix[2][1],
                c.wrench.sign_matrix[3][1]
            ],
            [1, 1, -1, -1]
        );
        let cmd = encode_wrench(&fy(0, 2.0), &c);
        assert_eq!(cmd.angles, [200.0, 200.0, 160.0, 160.0]);
        assert_eq!(cmd.clamped, [false; 4]);
    }

    #[test]
    fn clamping_sets_flags() {
        let c = cfg();
        let cmd = encode_wrench(&fy(0, 50.0), &c);
        assert_eq!(cmd.angles, [270.0, 270.0, 90.0, 90.0]);
        assert_eq!(cmd.clamped, [true; 4]);
    }

    proptest! {
        #[test]
        fn filter_output_is_window_mean(samples in proptest::collection::vec(-10.0f64..10.0, 1..80)) {
            let window = cfg().wrench.window;
            let mut st = WrenchFilterState::new(window);
            let mut seen = Vec::new();
            for (t, v) in samples.iter().enumerate() {
                let out = st.filter(fy(t as u64, *v));
                seen.push(*v);
                prop_assert!((window.short..=window.long).contains(&st.window()));
                let n = st.window().min(seen.len());
                let mean = seen[seen.len() - n..].iter().sum::<f64>() / n as f64;
                prop_assert!((out.fy - mean).abs() < 1e-12);
            }
        }

        #[test]
        fn homogeneous_in_scale(w in wrench_strategy(20.0), lambda in 0.2f64..10.0) {
            let c = cfg().wrench;
            prop_assume!(base_components(&w).iter().map(|v| v.abs()).sum::<f64>() > 0.1);
            prop_assume!(w.fx.abs() > 0.01 && w.fy.abs() > 0.01);
            let a = servo_increments(&w, &c);
            let b = servo_increments(&w.scaled(lambda), &c);
            for i in 0..4 {
                prop_assert!((b[i] - lambda * a[i]).abs() <= 1e-9 * (1.0 + (lambda * a[i]).abs()));
            }
        }

        #[test]
        fn negation_negates_increments(w in wrench_strategy(20.0)) {
            let c = cfg().wrench;
            let a = servo_increments(&w, &c);
            let b = servo_increments(&w.scaled(-1.0), &c);
            for i in 0..4 {
                prop_assert!((a[i] + b[i]).abs() <= 1e-12 * (1.0 + a[i].abs()));
            }
        }

        #[test]
        fn output_within_limits(w in wrench_strategy(100.0)) {
            let c = cfg();
            let cmd = encode_wrench(&w, &c);
            let inc = servo_increments(&w, &c.wrench);
            for (i, angle) in cmd.angles.iter().enumerate() {
                prop_assert!((c.servo.angle_min..=c.servo.angle_max).contains(angle));
                let raw = c.servo.theta_init[i] + inc[i];
                prop_assert_eq!(cmd.clamped[i], raw < c.servo.angle_min || raw > c.servo.angle_max);
            }
        }

        #[test]
        fn coefficient_bounded_and_monotone(tau in -10.0f64..10.0, dt in 0.0f64..5.0, f in prop_oneof![-20.0f64..-0.01, 0.01f64..20.0]) {
            let c = cfg().wrench;
            // r = tau / f; moving tau by dt*f raises r by dt.
            let tau2 = tau + dt * f;
            for sigma in [1.0, -1.0] {
                let lo = dynamic_coefficient(tau, f, sigma, &c);
                let hi = dynamic_coefficient(tau2, f, sigma, &c);
                prop_assert!(lo >= c.c_min && hi >= c.c_min);
                if sigma > 0.0 {
                    prop_assert!(hi >= lo - 1e-12);
                } else {
                    prop_assert!(hi <= lo + 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_wrench_fixed_point_over_ticks() {
        let c = cfg();
        let mut st = WrenchFilterState::new(c.wrench.window);
        for t in 0..100 {
            let out = st.filter(Wrench::zero(t));
            assert_eq!(encode_wrench(&out, &c).angles, c.servo.theta_init);
        }
    }
}
