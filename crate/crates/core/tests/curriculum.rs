use aae::curriculum::{default_zero_from, CurriculumSchedule, ScheduleKind};
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = ScheduleKind> {
    prop_oneof![
        Just(ScheduleKind::Cosine),
        Just(ScheduleKind::Linear),
        Just(ScheduleKind::Step)
    ]
}

fn schedule() -> impl Strategy<Value = CurriculumSchedule> {
    (kind(), 0.0f64..10.0, 1usize..200)
        .prop_flat_map(|(k, a, t)| (Just(k), Just(a), Just(t), 1..=t))
        .prop_map(|(k, a, t, z)| CurriculumSchedule::new(k, a, t, z).unwrap())
}

#[test]
fn cosine_midpoint() {
    let s = CurriculumSchedule::new(ScheduleKind::Cosine, 1.0, 12, 10).unwrap();
    assert!((s.alpha_at(5) - 0.5).abs() < 1e-15);
}

#[test]
fn linear_and_step_values() {
    let l = CurriculumSchedule::new(ScheduleKind::Linear, 2.0, 10, 4).unwrap();
    assert_eq!(
        [l.alpha_at(0), l.alpha_at(1), l.alpha_at(2), l.alpha_at(3)],
        [2.0, 1.5, 1.0, 0.5]
    );
    let s = CurriculumSchedule::new(ScheduleKind::Step, 2.0, 10, 4).unwrap();
    assert_eq!(s.alpha_at(3), 2.0);
    assert_eq!(s.alpha_at(4), 0.0);
}

#[test]
fn default_tail_is_last_fifth() {
    assert_eq!(default_zero_from(30), 24);
    assert_eq!(default_zero_from(1), 1);
    assert_eq!(default_zero_from(2), 2);
    assert_eq!(default_zero_from(10), 8);
    let s = CurriculumSchedule::with_default_tail(ScheduleKind::Cosine, 1.0, 30).unwrap();
    assert_eq!(s.zero_from(), 24);
}

#[test]
fn invalid_schedules_are_rejected() {
    assert!(CurriculumSchedule::new(ScheduleKind::Cosine, 1.0, 0, 1).is_err());
    assert!(CurriculumSchedule::new(ScheduleKind::Cosine, 1.0, 10, 0).is_err());
    assert!(CurriculumSchedule::new(ScheduleKind::Cosine, 1.0, 10, 11).is_err());
    assert!(CurriculumSchedule::new(ScheduleKind::Cosine, -1.0, 10, 5).is_err());
    assert!(CurriculumSchedule::new(ScheduleKind::Cosine, f64::NAN, 10, 5).is_err());
}

#[test]
fn kinds_parse() {
    for (s, k) in [
        ("cosine", ScheduleKind::Cosine),
        ("linear", ScheduleKind::Linear),
        ("step", ScheduleKind::Step),
    ] {
        assert_eq!(s.parse::<ScheduleKind>().unwrap(), k);
        assert_eq!(k.to_string(), s);
    }
    assert!("exp".parse::<ScheduleKind>().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn contract(s in schedule()) {
        prop_assert_eq!(s.alpha_at(0).to_bits(), s.alpha0().to_bits());
        for t in 0..=s.total_epochs() + 3 {
            let a = s.alpha_at(t);
            prop_assert!(a >= 0.0);
            prop_assert!(s.alpha_at(t + 1) <= a);
            if t >= s.zero_from() {
                prop_assert_eq!(a.to_bits(), 0.0f64.to_bits());
            }
        }
    }
}
