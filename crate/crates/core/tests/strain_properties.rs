use nalgebra::Vector3;
use proptest::prelude::*;
use tactr_core::assembly::{AssemblySpec, AssignmentStrategy, StrainProfile, TendonSpec, TubeSpec};
use tactr_core::oracles::SingleTubeTendonModel;
use tactr_core::routing::{routing_eval, RoutingPath};
use tactr_core::shooting::{rk4_segment, shoot, twist_quadrature_defect, Prepared, ShooterOptions, ShootingGuess};
use tactr_core::so3::{orthonormality_defect, rot_d3, Mat3, Vec3};
use tactr_core::strain::{assemble_system, derived_strains, state_derivative, tube_strain_rates, InnerTubeState, RodState};

fn nested(n: usize, tendons: Vec<TendonSpec>) -> AssemblySpec {
    let tubes = (0..n)
        .map(|k| {
            TubeSpec::straight(0.1 + 0.05 * k as f64, 50e9 + 10e9 * k as f64, 20e9, 3e-3 - 0.6e-3 * k as f64, 2.7e-3 - 0.6e-3 * k as f64)
                .with_precurvature(StrainProfile::circular_arc(2.0 + k as f64, 0.3 * k as f64))
        })
        .collect();
    AssemblySpec::new(tubes, tendons)
}

fn tendon(tube: usize, angle: f64, tension: f64, termination: f64) -> TendonSpec {
    TendonSpec {
        routing: RoutingPath::straight_polar(2e-3, angle),
        tension,
        termination,
        tube,
    }
}

#[derive(Debug, Clone)]
struct Draw {
    u: Vec3,
    v: Vec3,
    inner: Vec<(f64, f64, f64)>,
    rotation: f64,
    position: Vec3,
}

fn draw(inner: usize) -> impl Strategy<Value = Draw> {
    (
        prop::array::uniform3(-6.0..6.0f64),
        prop::array::uniform2(-1e-3..1e-3f64),
        0.995..1.005f64,
        prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64, 0.999..1.001f64), inner),
        -3.0..3.0f64,
        prop::array::uniform3(-0.1..0.1f64),
    )
        .prop_map(|(u, vxy, vz, inner, rotation, position)| Draw {
            u: Vec3::from(u),
            v: Vec3::new(vxy[0], vxy[1], vz),
            inner,
            rotation,
            position: Vec3::from(position),
        })
}

fn state(d: &Draw, s: f64) -> RodState {
    RodState {
        s,
        p: d.position,
        r: oblique(d.rotation) * rot_d3(0.7 * d.rotation),
        u: d.u,
        v: d.v,
        reference: 0,
        inner: d
            .inner
            .iter()
            .enumerate()
            .map(|(m, &(theta, u_d3, beta))| InnerTubeState {
                tube: m + 1,
                theta,
                u_d3,
                beta,
            })
            .collect(),
    }
}

fn oblique(angle: f64) -> Mat3 {
    *nalgebra::Rotation3::from_scaled_axis(Vector3::new(1.0, 2.0, 0.5).normalize() * angle).matrix()
}

fn n_and_draw() -> impl Strategy<Value = (usize, Draw)> {
    (1usize..=4).prop_flat_map(|n| (Just(n), draw(n - 1)))
}

proptest! {
    #[test]
    fn system_dimension_is_four_plus_twice_the_tube_count((n, d) in n_and_draw(), angle in 0.0..6.3f64) {
        let a = nested(n, vec![tendon(0, angle, 1.0, 0.1)]);
        let p = Prepared::new(&a).unwrap();
        let sys = assemble_system(&state(&d, 0.05), &p.context(0)).unwrap();
        prop_assert_eq!(sys.a.shape(), (4 + 2 * n, 4 + 2 * n));
        prop_assert_eq!(sys.b.len(), 4 + 2 * n);
    }

    #[test]
    fn single_tube_rows_match_the_independent_model(
        d in draw(0),
        e in 40e9..220e9f64,
        od in 0.8e-3..2e-3f64,
        ratio in 0.0..0.85f64,
        radius in 1e-3..5e-3f64,
        angle in 0.0..6.3f64,
        tension in 0.0..2.0f64,
    ) {
        let (l, g) = (0.2, e / 2.6);
        let routing = RoutingPath::straight_polar(radius, angle);
        let offset = routing_eval(&routing, 0.0).unwrap().r;
        let a = AssemblySpec::new(
            vec![TubeSpec::straight(l, e, g, od, od * ratio)],
            vec![TendonSpec { routing, tension, termination: l, tube: 0 }],
        );
        let mut oracle = SingleTubeTendonModel::annular(l, e, g, od, od * ratio);
        oracle.tendons.push((offset, tension));
        let p = Prepared::new(&a).unwrap();
        let sys = assemble_system(&state(&d, 0.1), &p.context(0)).unwrap();
        let (m, rhs) = oracle.system(&d.u, &d.v);
        prop_assert_eq!(sys.a.shape(), (6, 6));
        for i in 0..6 {
            for j in 0..6 {
                prop_assert!((sys.a[(i, j)] - m[(i, j)]).abs() <= 1e-10 * m[(i, j)].abs().max(1.0));
            }
            prop_assert!((sys.b[i] - rhs[i]).abs() <= 1e-10 * rhs[i].abs().max(1.0));
        }
    }

    #[test]
    fn tendon_free_matrix_ignores_curvature_pose_and_torsion((n, d) in n_and_draw(), other in draw(3)) {
        let a = nested(n, vec![tendon(0, 1.0, 0.0, 0.1), tendon(n - 1, 2.0, 0.0, 0.1)]);
        let p = Prepared::new(&a).unwrap();
        // Same θ, β and v (the dilation column carries v); everything else redrawn.
        let mut e = other.clone();
        e.v = d.v;
        e.inner = d.inner.iter().zip(&other.inner).map(|(&(t, _, b), &(_, w, _))| (t, w, b)).collect();
        let first = assemble_system(&state(&d, 0.05), &p.context(0)).unwrap();
        let second = assemble_system(&state(&e, 0.07), &p.context(0)).unwrap();
        prop_assert!((&first.a - &second.a).amax() <= 1e-12 * first.a.amax());
    }

    #[test]
    fn strategies_agree_when_the_terminating_tube_is_outermost(
        (n, d) in n_and_draw(),
        angle in 0.0..6.3f64,
        tension in 0.1..3.0f64,
    ) {
        let mut a = nested(n, vec![tendon(0, angle, tension, 0.1)]);
        let pa = Prepared::new(&a).unwrap();
        a.strategy = AssignmentStrategy::TerminatingTube;
        let pb = Prepared::new(&a).unwrap();
        let x = state(&d, 0.05);
        let sa = assemble_system(&x, &pa.context(0)).unwrap();
        let sb = assemble_system(&x, &pb.context(0)).unwrap();
        prop_assert_eq!(sa.a, sb.a);
        prop_assert_eq!(sa.b, sb.b);
    }

    #[test]
    fn tube_strain_rates_match_differences_along_a_trajectory(d in draw(1), tension in 0.0..3.0f64, angle in 0.0..6.3f64) {
        let a = nested(2, vec![tendon(0, angle, tension, 0.1), tendon(1, angle + 1.0, tension, 0.15)]);
        let p = Prepared::new(&a).unwrap();
        let ctx = p.context(0);
        let h = 1e-5;
        let y0 = state(&d, 0.03);
        let traj = rk4_segment(&y0, y0.s + 2.0 * h, 2, |y| Ok(state_derivative(y, &ctx)?)).unwrap();
        let mid = &traj[1];
        let deriv = state_derivative(mid, &ctx).unwrap();
        let strains = derived_strains(mid);
        for tube in [0, 1] {
            let (du, dv) = tube_strain_rates(mid, strains.get(tube).unwrap(), &deriv);
            let at = |k: usize| {
                let s = derived_strains(&traj[k]);
                let t = s.get(tube).unwrap();
                (t.u, t.v)
            };
            let (fd_u, fd_v) = ((at(2).0 - at(0).0) / (2.0 * h), (at(2).1 - at(0).1) / (2.0 * h));
            prop_assert!((fd_u - du).norm() <= 1e-6 * du.norm().max(1.0), "tube {tube}: {fd_u} vs {du}");
            prop_assert!((fd_v - dv).norm() <= 1e-6 * dv.norm().max(1e-3), "tube {tube}: {fd_v} vs {dv}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn twist_matches_its_quadrature_on_converged_ctrs(
        twist in -3.1..3.1f64,
        k1 in 1.0..6.0f64,
        k2 in 1.0..8.0f64,
        steps in prop_oneof![Just(100usize), Just(200usize)],
    ) {
        let tube = |l: f64, od: f64, id: f64, k: f64| TubeSpec::straight(l, 50e9, 20e9, od, id).with_precurvature(StrainProfile::circular_arc(k, 0.0));
        let a = AssemblySpec::new(vec![tube(0.1, 2e-3, 1.6e-3, k1), tube(0.15, 1.4e-3, 1.0e-3, k2)], vec![])
            .with_base_twists(vec![0.0, twist]);
        let sol = shoot(&a, &ShooterOptions { steps_per_segment: steps, ..ShooterOptions::default() }).unwrap();
        let defect = twist_quadrature_defect(&sol);
        prop_assert!(defect < 1e-8, "{defect}");
    }

    #[test]
    fn frames_stay_orthonormal_over_an_integration(d in draw(2), tension in 0.0..3.0f64, angle in 0.0..6.3f64) {
        let a = nested(3, vec![tendon(0, angle, tension, 0.1), tendon(2, angle, tension, 0.2)]);
        let p = Prepared::new(&a).unwrap();
        let guess = ShootingGuess { u: d.u, v: d.v, inner: d.inner.iter().map(|&(_, w, b)| (w, b)).collect() };
        let run = p.run(&guess, 200, true).unwrap();
        for st in &run.stations {
            prop_assert!(orthonormality_defect(&st.r) < 1e-8);
        }
    }
}
