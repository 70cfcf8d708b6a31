use mmctrl_core::scheduler::*;
use mmctrl_core::supervisor::{BppCategory, ModePeriods, SamplingModeId};
use proptest::prelude::*;
use SamplingModeId::*;

fn mode_of(i: u8) -> SamplingModeId {
    SamplingModeId::ALL[i as usize % 3]
}

#[test]
fn dwell_hand_summed() {
    // 1.5 s N0, 0.25 s E, 0.75 s N1, 0.5 s N0: total 3 s.
    let trace = [(0.0, N0), (1.5, E), (1.75, N1), (2.5, N0)];
    let d = dwell_stats(&trace, 3.0).unwrap();
    assert!((d.n0 - 2.0 / 3.0).abs() < 1e-15);
    assert!((d.e - 0.25 / 3.0).abs() < 1e-15);
    assert!((d.n1 - 0.25).abs() < 1e-15);
    assert!((d.sum() - 1.0).abs() < 1e-15);
}

#[test]
fn dwell_rejects_bad_traces() {
    assert_eq!(dwell_stats(&[], 1.0), Err(SchedulerError::EmptyTrace));
    assert_eq!(
        dwell_stats(&[(0.0, N0), (0.0, E)], 1.0),
        Err(SchedulerError::UnsortedTrace(1))
    );
    assert!(dwell_stats(&[(0.0, N0)], 0.0).is_err());
    let overlap = [
        ModeSegment {
            t_start: 0.0,
            t_end: 1.0,
            mode: N0,
        },
        ModeSegment {
            t_start: 0.5,
            t_end: 2.0,
            mode: E,
        },
    ];
    assert!(dwell_from_segments(&overlap).is_err());
}

#[test]
fn bandwidth_examples() {
    let p = ModePeriods::default();
    let r = bandwidth(&DwellFractions::only(N0), &p, 2e-5).unwrap();
    assert!((r.savings - 0.5).abs() < 1e-15);
    assert!((r.utilization - 0.1).abs() < 1e-15);
    assert!((r.baseline_utilization - 0.2).abs() < 1e-15);
    assert_eq!(bandwidth(&DwellFractions::only(E), &p, 2e-5).unwrap().savings, 0.0);
    let mixed = DwellFractions {
        n0: 0.5,
        n1: 0.3,
        e: 0.2,
    };
    assert!((bandwidth(&mixed, &p, 2e-5).unwrap().savings - 0.35).abs() < 1e-12);
    let off = DwellFractions {
        n0: 0.5,
        n1: 0.3,
        e: 0.3,
    };
    assert!(matches!(bandwidth(&off, &p, 2e-5), Err(SchedulerError::DwellSum(_))));
}

#[test]
fn fixed_bandwidth_matches_single_mode_dwell() {
    let p = ModePeriods::default();
    for m in SamplingModeId::ALL {
        let a = bandwidth_fixed(p.period(m), &p, 2e-5);
        let b = bandwidth(&DwellFractions::only(m), &p, 2e-5).unwrap();
        assert!((a.savings - b.savings).abs() < 1e-15);
        assert_eq!(a.dwell, b.dwell);
    }
}

#[test]
fn dwell_trace_csv() {
    let segs = [ModeSegment {
        t_start: 0.0,
        t_end: 0.5,
        mode: N1,
    }];
    let mut buf = Vec::new();
    write_dwell_trace(&segs, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), DWELL_TRACE_HEADER);
    assert_eq!(lines.next().unwrap(), "0.0000000000000000e0,5.0000000000000000e-1,N1");
}

#[test]
fn acc_state_policy() {
    for b in BppCategory::ALL {
        assert_eq!(acc_mode(b, false), AccMode::Idle);
        let expect = if b == BppCategory::High {
            AccMode::Suspended
        } else {
            AccMode::Active
        };
        assert_eq!(acc_mode(b, true), expect);
    }
}

#[test]
fn co_schedule_examples() {
    let p = ModePeriods::default();
    let r = RatePolicy::default();
    let s = co_schedule(E, AccMode::Suspended, &p, &r).unwrap();
    assert_eq!((s.t_abs, s.t_acc), (1e-4, Some(r.acc_slow)));
    let s = co_schedule(N0, AccMode::Active, &p, &r).unwrap();
    assert_eq!((s.t_abs, s.t_acc), (2e-4, Some(r.acc_fast)));
    assert!((s.utilization - (0.1 + 0.04)).abs() < 1e-15);
    let s = co_schedule(N0, AccMode::Idle, &p, &r).unwrap();
    assert_eq!((s.t_abs, s.t_acc), (2e-4, None));
}

#[test]
fn co_schedule_never_slows_abs() {
    let p = ModePeriods::default();
    let r = RatePolicy::default();
    for m in SamplingModeId::ALL {
        for acc in [AccMode::Active, AccMode::Suspended, AccMode::Idle] {
            let s = co_schedule(m, acc, &p, &r).unwrap();
            assert!(s.t_abs <= p.period(m));
            assert!(s.utilization <= 1.0);
        }
    }
}

#[test]
fn cyclic_examples() {
    let one = cyclic_schedule(&[ControlTask::new("abs", 2e-4, 2e-5).unwrap()]).unwrap();
    assert!((one.hyperperiod - 2e-4).abs() < 1e-18);
    assert_eq!(one.slots.len(), 1);

    let two = cyclic_schedule(&[
        ControlTask::new("b", 1.5e-4, 2e-5).unwrap(),
        ControlTask::new("a", 1e-4, 2e-5).unwrap(),
    ])
    .unwrap();
    assert!((two.hyperperiod - 3e-4).abs() < 1e-18);
    let ticks = |n: &str| -> Vec<i64> {
        two.slots
            .iter()
            .filter(|s| s.task == n)
            .map(|s| (s.release / BASE_TICK).round() as i64)
            .collect()
    };
    assert_eq!(ticks("a"), vec![0, 10, 20]);
    assert_eq!(ticks("b"), vec![0, 15]);
    // Shorter period first at a shared release.
    assert_eq!((two.slots[0].task.as_str(), two.slots[1].task.as_str()), ("a", "b"));

    match cyclic_schedule(&[
        ControlTask::new("a", 1e-4, 6e-5).unwrap(),
        ControlTask::new("b", 1.5e-4, 6e-5).unwrap(),
    ]) {
        Err(SchedulerError::InfeasibleWindow {
            t_start,
            demand,
            window,
        }) => {
            assert_eq!(t_start, 0.0);
            assert!((demand - 1.2e-4).abs() < 1e-15);
            assert!((window - 1e-4).abs() < 1e-15);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn cyclic_rejects_bad_tasks() {
    assert!(ControlTask::new("x", 1e-4, 2e-4).is_err());
    assert!(ControlTask::new("x", 1e-4, 0.0).is_err());
    let over = [
        ControlTask::new("a", 1e-4, 7e-5).unwrap(),
        ControlTask::new("b", 1e-4, 7e-5).unwrap(),
    ];
    assert!(matches!(cyclic_schedule(&over), Err(SchedulerError::Overutilized(_))));
}

const PERIODS: [f64; 6] = [1e-4, 1.5e-4, 2e-4, 5e-4, 1e-3, 2e-3];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn savings_ignores_wcet(a in 0.0f64..1.0, b in 0.0f64..1.0, w1 in 1e-6f64..1e-4, w2 in 1e-6f64..1e-4) {
        let (lo, hi) = (a.min(b), a.max(b));
        let d = DwellFractions { n0: lo, n1: hi - lo, e: 1.0 - hi };
        let p = ModePeriods::default();
        let r1 = bandwidth(&d, &p, w1).unwrap();
        let r2 = bandwidth(&d, &p, w2).unwrap();
        prop_assert!((r1.savings - r2.savings).abs() < 1e-12);
        prop_assert!(r1.savings >= -1e-12 && r1.savings < 1.0);
        prop_assert!((r1.savings - (1.0 - r1.utilization / r1.baseline_utilization)).abs() < 1e-12);
    }

    #[test]
    fn dwell_survives_resampling(
        lens in prop::collection::vec((1u32..50, 0u8..3), 1..12),
        split in 2u32..6,
    ) {
        let mut coarse = Vec::new();
        let mut fine = Vec::new();
        let mut t = 0.0;
        for &(len, m) in &lens {
            let dt = len as f64 * 0.01;
            coarse.push((t, mode_of(m)));
            for k in 0..split {
                fine.push((t + dt * k as f64 / split as f64, mode_of(m)));
            }
            t += dt;
        }
        let a = dwell_stats(&coarse, t).unwrap();
        let b = dwell_stats(&fine, t).unwrap();
        for m in SamplingModeId::ALL {
            prop_assert!((a.get(m) - b.get(m)).abs() < 1e-12);
        }
        prop_assert!((a.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cyclic_schedule_windows_hold(
        picks in prop::collection::vec((0usize..PERIODS.len(), 1u32..40), 1..4),
    ) {
        let tasks: Vec<ControlTask> = picks
            .iter()
            .enumerate()
            .map(|(i, &(pi, w))| ControlTask::new(format!("t{i}"), PERIODS[pi], w as f64 * 1e-6).unwrap())
            .collect();
        let Ok(s) = cyclic_schedule(&tasks) else { return Ok(()); };
        let wcet = |n: &str| tasks.iter().find(|t| t.name == n).unwrap().wcet;
        let period = |n: &str| tasks.iter().find(|t| t.name == n).unwrap().period;
        prop_assert!(s.slots.windows(2).all(|w| w[0].release <= w[1].release));
        for w in s.slots.windows(2) {
            prop_assert!(w[0].start + wcet(&w[0].task) <= w[1].start + 1e-15);
        }
        for t in &tasks {
            let rel: Vec<f64> = s.slots.iter().filter(|x| x.task == t.name).map(|x| x.release).collect();
            prop_assert!((rel.len() as f64 * t.period - s.hyperperiod).abs() < 1e-12);
            for w in rel.windows(2) {
                prop_assert!((w[1] - w[0] - t.period).abs() < 1e-12);
            }
        }
        let demand: f64 = s.slots.iter().map(|x| wcet(&x.task)).sum();
        prop_assert!(demand <= s.hyperperiod + 1e-15);
        for x in &s.slots {
            prop_assert!(x.start + wcet(&x.task) <= x.release + period(&x.task) + 1e-15);
        }
        // Brute-force window sweep at base-tick resolution, wrapping around.
        let hyper = (s.hyperperiod / BASE_TICK).round() as i64;
        let p_min = tasks.iter().map(|t| (t.period / BASE_TICK).round() as i64).min().unwrap();
        for t0 in 0..hyper {
            let d: f64 = s.slots.iter()
                .filter(|x| ((x.release / BASE_TICK).round() as i64 - t0).rem_euclid(hyper) < p_min)
                .map(|x| wcet(&x.task))
                .sum();
            prop_assert!(d <= p_min as f64 * BASE_TICK + 1e-15);
        }
    }
}
