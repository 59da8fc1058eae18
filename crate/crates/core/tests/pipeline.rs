use wrenchlink::session::{run_pipeline, SessionOptions};
use wrenchlink::sim_bus::{gen_synthetic, step_onset_tick, Scenario, TraceSet, TraceSource};
use wrenchlink::{PipelineConfig, PoseSample, Wrench};

fn recorded() -> SessionOptions {
    SessionOptions {
        record_commands: true,
        ..Default::default()
    }
}

#[test]
fn zero_wrench_trace_holds_theta_init() {
    let cfg = PipelineConfig::default();
    let samples = (0..100).map(|k| Wrench::zero(k * 10_000)).collect();
    let traces = TraceSet {
        ft: Some(TraceSource::new(samples).unwrap()),
        ..Default::default()
    };
    let out = run_pipeline(cfg.clone(), traces, 100, recorded()).unwrap();
    let angles: Vec<_> = out.commands.unwrap().servo_angles().collect();
    assert_eq!(angles.len(), 100);
    assert!(angles.iter().all(|(_, a)| *a == cfg.servo.theta_init));
}

#[test]
fn step_press_departs_within_short_window() {
    // Scratch oracle (filter recurrence on the noiseless ramp): the servo
    // first moves by more than 1° two ticks after the ramp starts.
    let cfg = PipelineConfig::default();
    let traces = gen_synthetic(Scenario::StepPress, 60.0, 7, &cfg).unwrap();
    let onset = step_onset_tick(60.0, &cfg);
    let out = run_pipeline(cfg.clone(), traces, 200, recorded()).unwrap();
    let departed = out
        .reports
        .iter()
        .find(|r| (0..4).any(|i| (r.servo.angles[i] - cfg.servo.theta_init[i]).abs() > 1.0))
        .map(|r| r.tick)
        .unwrap();
    assert_eq!(departed, onset + 2);
    assert!(departed - onset <= cfg.wrench.window.short as u64);
}

#[test]
fn reports_are_contiguous_with_nonnegative_stage_times() {
    let cfg = PipelineConfig::default();
    let traces = gen_synthetic(Scenario::Swing, 2.0, 1, &cfg).unwrap();
    let out = run_pipeline(cfg, traces, 250, SessionOptions::default()).unwrap();
    assert_eq!(out.reports.len(), 250);
    for (k, r) in out.reports.iter().enumerate() {
        assert_eq!(r.tick, k as u64);
        assert_eq!(r.t_us, k as u64 * 10_000);
        let s = r.stage_us;
        assert!(s.sample >= 0.0 && s.wrench >= 0.0 && s.fusion >= 0.0 && s.haptics >= 0.0);
        assert!(s.total >= s.wrench);
    }
}

#[test]
fn traces_hold_past_their_end() {
    let cfg = PipelineConfig::default();
    let traces = gen_synthetic(Scenario::StepPress, 1.0, 2, &cfg).unwrap();
    let out = run_pipeline(cfg, traces, 300, SessionOptions::default()).unwrap();
    let last = out.reports.last().unwrap();
    assert_eq!(last.tick, 299);
    assert!(last.wrench.fz > 3.5);
}

#[test]
fn pose_trace_with_wrong_length_is_rejected() {
    let pose = TraceSource::new(vec![PoseSample {
        t_us: 0,
        pose: [0.5; 12],
    }])
    .unwrap();
    let text = pose.to_text();
    assert!(TraceSource::<PoseSample>::parse(&text).is_ok());
    let short = text.replacen("[0.5,", "[", 1);
    let err = TraceSource::<PoseSample>::parse(&short).unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
}

#[test]
fn same_inputs_same_bytes() {
    let cfg = PipelineConfig::default();
    let run = || {
        let traces = gen_synthetic(Scenario::Pinch, 3.0, 4, &cfg).unwrap();
        let opts = SessionOptions {
            record_commands: true,
            record_episode: true,
            ..Default::default()
        };
        let out = run_pipeline(cfg.clone(), traces, 300, opts).unwrap();
        (
            out.commands.unwrap().to_text(),
            out.episode.unwrap().to_text(),
        )
    };
    assert_eq!(run(), run());
}
