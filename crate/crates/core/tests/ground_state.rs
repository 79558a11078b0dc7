use dirac_core::radial::rhs_radial;
use dirac_core::shooting::{bracket_search, bisect, certificate_check, classify, Side, Verdict};
use dirac_core::{EventKind, Params, Tolerances};

fn reference() -> (Params, Tolerances) {
    let p = Params::new(1.0, 0.5).unwrap();
    (p, Tolerances::for_params(&p))
}

#[test]
fn ground_state_pipeline() {
    let (p, tol) = reference();
    let b = bracket_search(&p, &tol).unwrap();
    let gs = bisect(&b, &p, &tol, 1e-12).unwrap();

    assert!(gs.converged);
    assert_eq!(gs.node_count, 0);
    assert!(gs.bracket_width < 1e-10);
    assert!(gs.lambda_star > 1.0 && gs.lambda_star < b.hi);
    assert!((gs.lambda_star - 1.807896148773466).abs() < 1e-9, "{}", gs.lambda_star);
    assert!(gs.decay_slope <= -0.2, "{}", gs.decay_slope);
    assert!(gs.profile.state_at(40.0).unwrap().l1() < 1e-6);
    assert!(gs.match_residual < 1e-9, "{}", gs.match_residual);

    // history is consistent with the side rule
    for step in &gs.history {
        match step.side {
            Side::Hi => assert!(step.classification.node_count >= 1),
            Side::Lo => assert_eq!(step.classification.node_count, 0),
        }
    }

    // recorded derivatives solve the radial system
    for s in &gs.profile.samples {
        let f = rhs_radial(s.r, &s.state, &p).unwrap();
        let res = (f.u - s.derivative.u).abs() + (f.v - s.derivative.v).abs();
        assert!(res <= 1e3 * tol.rel * (1.0 + s.state.l1()), "r = {} residual {res}", s.r);
    }

    // r strictly increasing
    for w in gs.profile.samples.windows(2) {
        assert!(w[1].r > w[0].r);
    }

    // decay bound over the tail window
    let (ra, rb) = gs.decay_window;
    let rate = 0.5 * p.gap();
    for s in gs.profile.samples.iter().filter(|s| s.r >= ra && s.r <= rb) {
        let half = gs.profile.state_at(0.5 * s.r).unwrap().l1();
        assert!(s.state.l1() <= half * (-rate * 0.5 * s.r).exp() * 1.1, "r = {}", s.r);
    }
}

#[test]
fn certificate_soundness_within_horizon() {
    let (p, tol) = reference();
    for lambda in [1.5, 1.8, 1.9, 2.0, 2.5, 3.0, 5.0, 10.0] {
        let c = classify(lambda, &p, &tol).unwrap();
        if let Some(cert) = c.evidence.certificate {
            assert!(certificate_check(cert.r, &dirac_core::State::new(0.0, 0.0), &p).is_none());
            let total = c.events.iter().filter(|e| e.kind == EventKind::VSignChange).count();
            let entered = matches!(c.verdict, Verdict::A(_));
            assert!(entered || total <= cert.prior_nodes + 1, "lambda = {lambda}");
        }
    }
}

#[test]
fn classification_is_deterministic() {
    let (p, tol) = reference();
    assert_eq!(classify(1.9, &p, &tol).unwrap(), classify(1.9, &p, &tol).unwrap());
}
