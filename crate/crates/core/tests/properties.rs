//! Property tests for the model invariants.

use blowuplab::dynamics::{
    coord_matrix, drift_reduced, drift_x, drift_y, fixed_points, to_x, to_y, Params, ReducedState, StateX, StateY,
};
use blowuplab::ergodic::{occupation_measure, time_average, Window};
use blowuplab::fokker_planck::{self as fp, PdeGrid};
use blowuplab::girsanov::{martingale_along, theta_l2, ThetaSpec};
use blowuplab::integrate::{
    integrate_ode, integrate_sde, integrate_z, ode_verdict, InitialState, IntegratorConfig, Method, NoiseConfig, Verdict,
};
use blowuplab::rng::RngStream;
use blowuplab::stats::mean_estimate;
use blowuplab::sweep::{sweep_ode, sweep_sde, Axis, GridSpec};
use blowuplab::Complex64 as C;
use blowuplab::integrate::Frame;
use proptest::prelude::*;

fn params() -> impl Strategy<Value = Params> {
    (0.1f64..3.0, prop_oneof![-3.0f64..-0.2, 0.2f64..3.0], prop_oneof![-3.0f64..-0.2, 0.2f64..3.0])
        .prop_map(|(nu, a, b)| Params::new(nu, a, b).unwrap())
}

fn coords(r: f64) -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(-r..r)
}

fn y0(a: [f64; 4]) -> InitialState {
    InitialState::Y(StateY::from_array(a).unwrap())
}

proptest! {
    #[test]
    fn round_trip(p in params(), x in coords(100.0)) {
        let sx = StateX::from_array(x).unwrap();
        let back = to_x(&to_y(&sx, &p), &p).to_array();
        let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs())) * p.ratio().abs().max(1.0 / p.ratio().abs());
        for k in 0..4 {
            prop_assert!((back[k] - x[k]).abs() <= 1e-13 * scale);
        }
    }

    #[test]
    fn push_forward(p in params(), x in coords(5.0)) {
        let sx = StateX::from_array(x).unwrap();
        let l = coord_matrix(&p);
        let fx = drift_x(&sx, &p);
        let fy = drift_y(&to_y(&sx, &p), &p);
        let scale = 1.0 + fy.iter().fold(0.0f64, |m, v| m.max(v.abs())) + fx.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (k, row) in l.iter().enumerate() {
            let lf: f64 = row.iter().zip(&fx).map(|(a, b)| a * b).sum();
            prop_assert!((lf - fy[k]).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn linear_components_are_autonomous(p in params(), y in coords(5.0), d1 in -5.0f64..5.0, d3 in -5.0f64..5.0) {
        let a = drift_y(&StateY::from_array(y).unwrap(), &p);
        let b = drift_y(&StateY::from_array([y[0] + d1, y[1], y[2] + d3, y[3]]).unwrap(), &p);
        prop_assert_eq!(a[1], b[1]);
        prop_assert_eq!(a[3], b[3]);
    }

    #[test]
    fn reduced_drift_is_complex_quadratic(p in params(), y1 in -5.0f64..5.0, y3 in -5.0f64..5.0, t in 0.0f64..5.0) {
        let d = drift_reduced(&ReducedState::new(t, y1, y3, 0.0, 0.0).unwrap(), &p);
        let z = C::new(y1, y3);
        let c = -p.nu() * z + p.beta() * z * z;
        prop_assert!((d[0] - c.re).abs() <= 1e-12 * (1.0 + c.norm()));
        prop_assert!((d[1] - c.im).abs() <= 1e-12 * (1.0 + c.norm()));
    }

    #[test]
    fn fixed_points_have_zero_drift(p in params()) {
        let (o, s) = fixed_points(&p);
        for v in drift_x(&o, &p).into_iter().chain(drift_x(&s, &p)) {
            prop_assert!(v.abs() <= 1e-12 * (1.0 + p.nu() * p.nu() / (p.alpha() * p.beta()).abs()));
        }
    }

    #[test]
    fn real_axis_stays_real(y1 in -3.0f64..3.0, w in -2.0f64..2.0, which in any::<bool>()) {
        // y3(0) = 0 with w purely real or purely imaginary keeps z real.
        let start = if which { [y1, w, 0.0, 0.0] } else { [y1, 0.0, 0.0, w] };
        let cfg = IntegratorConfig { dt: 1e-3, t_max: 2.0, ..Default::default() };
        let tr = integrate_ode(y0(start), &Params::unit(), &cfg).unwrap();
        prop_assert!(tr.states.iter().all(|s| s[2] == 0.0));
    }

    #[test]
    fn blowup_is_monotone_in_y1(a in 1.05f64..3.0, gap in 0.01f64..1.0) {
        let p = Params::unit();
        let cfg = IntegratorConfig { dt: 1e-3, t_max: 10.0, ..Default::default() };
        let ta = ode_verdict(y0([a, 0.0, 0.0, 0.0]), &p, &cfg).unwrap().explosion_time();
        let tb = ode_verdict(y0([a + gap, 0.0, 0.0, 0.0]), &p, &cfg).unwrap().explosion_time();
        if let Some(ta) = ta {
            prop_assert!(tb.is_some_and(|tb| tb <= ta));
        }
    }

    #[test]
    fn w_tracks_its_closed_form_under_main_noise(p in params(), w1 in -2.0f64..2.0, w2 in -2.0f64..2.0, seed in any::<u64>()) {
        let cfg = IntegratorConfig { dt: 1e-3, t_max: 1.0, ..Default::default() };
        let tr = integrate_sde(y0([0.0, w1, 0.0, w2]), &p, &cfg, &NoiseConfig::MainSde { sigma: 1.0 }, RngStream::new(seed, 0)).unwrap();
        // Euler gives (1 - nu dt)^n; its gap to exp(-nu t) stays below nu dt |w0|.
        let bound = p.nu() * cfg.dt * (w1.abs() + w2.abs()) + 1e-15;
        for (t, s) in tr.times.iter().zip(&tr.states) {
            let decay = (-p.nu() * t).exp();
            prop_assert!((s[1] - w1 * decay).abs() <= bound);
            prop_assert!((s[3] - w2 * decay).abs() <= bound);
        }
    }

    #[test]
    fn sde_runs_are_reproducible(seed in any::<u64>(), stream in any::<u64>(), y in coords(2.0)) {
        let cfg = IntegratorConfig { dt: 1e-3, t_max: 0.5, ..Default::default() };
        let run = || integrate_sde(y0(y), &Params::unit(), &cfg, &NoiseConfig::ImZ, RngStream::new(seed, stream)).unwrap();
        let (a, b) = (run(), run());
        prop_assert_eq!(a.times, b.times);
        prop_assert_eq!(a.states, b.states);
        prop_assert_eq!(a.verdict, b.verdict);
    }

    #[test]
    fn martingale_starts_at_one(re in -2.0f64..2.0, im in -2.0f64..2.0, incs in prop::collection::vec((-0.1f64..0.1, -0.1f64..0.1), 0..50)) {
        let spec = ThetaSpec::new(C::new(re, im), 1.0, 1.0, 1.0).unwrap();
        let path = martingale_along(&incs, &spec, 1e-2);
        prop_assert_eq!(path.m[0], 1.0);
        prop_assert_eq!(path.m.len(), incs.len() + 1);
    }

    #[test]
    fn theta_energy_is_monotone_and_bounded(nu in 0.1f64..3.0, beta in -3.0f64..3.0, re in -2.0f64..2.0, im in -2.0f64..2.0, t in 0.0f64..10.0, dt in 0.0f64..10.0) {
        let spec = ThetaSpec::new(C::new(re, im), beta, nu, 1.0).unwrap();
        let (a, b, inf) = (theta_l2(&spec, t), theta_l2(&spec, t + dt), theta_l2(&spec, f64::INFINITY));
        prop_assert!(a <= b && b <= inf * (1.0 + 1e-15));
    }

    #[test]
    fn adjoint_is_transpose_of_generator(p in params(), s1 in 0.3f64..2.0, s3 in 0.3f64..2.0, seed in any::<u64>()) {
        let g = PdeGrid::disk(21).unwrap();
        let op = fp::build_adjoint(&p, s1, s3, &g).unwrap();
        let gen = fp::build_generator(&p, s1, s3, &g).unwrap();
        prop_assert!(op.duality_defect(&gen, seed) <= 1e-10);
        prop_assert_eq!(op.flip_defect(), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn histograms_are_probability_vectors(seed in any::<u64>(), bins in 1usize..30, half in 0.5f64..5.0) {
        let cfg = IntegratorConfig { dt: 1e-2, t_max: 50.0, method: Method::ExactFlow, record_stride: 3, ..Default::default() };
        let tr = integrate_z(C::new(0.0, 0.0), &Params::unit(), 1.0, &cfg, RngStream::new(seed, 0)).unwrap();
        let h = occupation_measure(&tr, Window::square(half), (bins, bins), 1.0).unwrap();
        prop_assert!(h.mass.iter().all(|m| *m >= 0.0) && h.outside_mass >= 0.0);
        prop_assert!((h.total() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn thinning_moves_time_averages_by_o_dt_stride(seed in any::<u64>(), stride in 2usize..20) {
        let base = IntegratorConfig { dt: 1e-3, t_max: 20.0, method: Method::ExactFlow, ..Default::default() };
        let full = integrate_z(C::new(0.0, 0.0), &Params::unit(), 1.0, &base, RngStream::new(seed, 0)).unwrap();
        let thin = integrate_z(C::new(0.0, 0.0), &Params::unit(), 1.0, &IntegratorConfig { record_stride: stride, ..base }, RngStream::new(seed, 0)).unwrap();
        // f = arctan(Re z) is 1-Lipschitz; the path moves O(sqrt(dt stride)) between records.
        let f = |z: &C| z.re.atan();
        let a = time_average(&full, f, 1.0).unwrap();
        let b = time_average(&thin, f, 1.0).unwrap();
        prop_assert!((a - b).abs() <= 5.0 * (base.dt * stride as f64).sqrt());
    }

    #[test]
    fn certificate_holds_on_sampled_sweeps(y3 in prop_oneof![-2.0f64..-0.25, 0.25f64..2.0], y4 in -2.0f64..2.0) {
        let ax = |index| Axis { index, min: -3.0, max: 3.0, step: 0.5 };
        let g = GridSpec::new(Frame::Y, [(3, y3), (4, y4)], [ax(1), ax(2)]).unwrap();
        let cfg = IntegratorConfig { dt: 1e-2, t_max: 20.0, method: Method::ExactFlow, ..Default::default() };
        prop_assert_eq!(sweep_ode(&g, &Params::unit(), &cfg).unwrap().explosions(), 0);
    }

    #[test]
    fn explosive_sets_are_upward_closed(y2 in 0.0f64..2.0) {
        let g = GridSpec::new(
            Frame::Y,
            [(3, 0.0), (4, 0.0)],
            [Axis { index: 1, min: 0.0, max: 3.0, step: 0.1 }, Axis { index: 2, min: y2, max: y2, step: 1.0 }],
        ).unwrap();
        let cfg = IntegratorConfig { dt: 1e-3, t_max: 20.0, ..Default::default() };
        let s = sweep_ode(&g, &Params::unit(), &cfg).unwrap().survival();
        let first = s.iter().position(|v| *v == 0.0);
        if let Some(k) = first {
            prop_assert!(s[k..].iter().all(|v| *v == 0.0));
        }
    }
}

#[test]
fn stochastic_sweeps_are_reproducible() {
    let ax = |index| Axis { index, min: -1.0, max: 2.0, step: 1.0 };
    let g = GridSpec::new(Frame::Y, [(3, 0.0), (4, 0.0)], [ax(1), ax(2)]).unwrap();
    let cfg = IntegratorConfig { dt: 1e-3, t_max: 1.0, ..Default::default() };
    let run = || sweep_sde(&g, &Params::unit(), &cfg, &NoiseConfig::MainSde { sigma: 1.0 }, 5, 11).unwrap();
    assert_eq!(run(), run());
}

#[test]
fn ou_component_has_exact_mean() {
    // Noise only on w = y2 + i y4 makes w an Ornstein-Uhlenbeck process.
    let p = Params::new(0.7, 1.0, 1.0).unwrap();
    let noise = NoiseConfig::General { sigma_matrix: [[0.0, 0.0], [1.0, 0.0], [0.0, 0.0], [0.0, 1.0]] };
    let cfg = IntegratorConfig { dt: 1e-2, t_max: 1.0, ..Default::default() };
    let ends: Vec<f64> = (0..4000)
        .filter_map(|k| {
            let tr = integrate_sde(y0([0.0, 1.5, 0.0, 0.0]), &p, &cfg, &noise, RngStream::new(99, k)).unwrap();
            (tr.verdict == Verdict::Survived).then(|| tr.last_state().unwrap()[1])
        })
        .collect();
    let est = mean_estimate(&ends);
    // Euler's mean is exactly 1.5 (1 - nu dt)^n.
    let euler_mean = 1.5 * (1.0 - 0.7 * 1e-2f64).powi(100);
    assert!(ends.len() > 3900);
    assert!(est.within(euler_mean, 3.0), "{est:?} vs {euler_mean}");
    assert!((euler_mean - 1.5 * (-0.7f64).exp()).abs() < 0.01);
}
