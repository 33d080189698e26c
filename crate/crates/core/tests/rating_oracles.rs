use mdxkit_core::rating::{draw_probability, trueskill_update, Rating, TrueSkillParams};

fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Posterior mean and standard deviation of both skills by brute-force 2-D
/// quadrature of prior times outcome likelihood.
fn quadrature(a: Rating, b: Rating, draw: bool, p: &TrueSkillParams) -> [(f64, f64); 2] {
    let sa = (a.sigma * a.sigma + p.tau * p.tau).sqrt();
    let sb = (b.sigma * b.sigma + p.tau * p.tau).sqrt();
    let eps = p.draw_margin();
    let noise = std::f64::consts::SQRT_2 * p.beta;
    let n = 600;
    let grid =
        |mu: f64, s: f64| -> Vec<f64> { (0..n).map(|i| mu + s * (-9.0 + 18.0 * i as f64 / (n - 1) as f64)).collect() };
    let (xa, xb) = (grid(a.mu, sa), grid(b.mu, sb));
    let gauss = |x: f64, mu: f64, s: f64| (-(x - mu) * (x - mu) / (2.0 * s * s)).exp();
    let wa: Vec<f64> = xa.iter().map(|&x| gauss(x, a.mu, sa)).collect();
    let wb: Vec<f64> = xb.iter().map(|&x| gauss(x, b.mu, sb)).collect();
    let mut m = [0.0; 5];
    for (i, &u) in xa.iter().enumerate() {
        for (j, &v) in xb.iter().enumerate() {
            let d = u - v;
            let like = if draw { phi((eps - d) / noise) - phi((-eps - d) / noise) } else { phi((d - eps) / noise) };
            let w = wa[i] * wb[j] * like;
            m[0] += w;
            m[1] += w * u;
            m[2] += w * u * u;
            m[3] += w * v;
            m[4] += w * v * v;
        }
    }
    let ma = m[1] / m[0];
    let mb = m[3] / m[0];
    [(ma, (m[2] / m[0] - ma * ma).sqrt()), (mb, (m[4] / m[0] - mb * mb).sqrt())]
}

#[test]
fn update_matches_quadrature() {
    let p = TrueSkillParams::default();
    let cases = [
        (Rating::default(), Rating::default()),
        (Rating::new(30.0, 2.0), Rating::new(22.0, 5.0)),
        (Rating::new(18.0, 4.0), Rating::new(27.0, 1.5)),
        (Rating::new(25.5, 0.8), Rating::new(24.0, 0.8)),
    ];
    for (a, b) in cases {
        for draw in [false, true] {
            let (ua, ub) = trueskill_update(a, b, draw, &p).unwrap();
            let [(ma, sa), (mb, sb)] = quadrature(a, b, draw, &p);
            let tol = 1e-4 * (1.0 + a.sigma.max(b.sigma));
            assert!((ua.mu - ma).abs() < tol, "{a:?} {b:?} draw={draw}: {} vs {ma}", ua.mu);
            assert!((ub.mu - mb).abs() < tol, "{a:?} {b:?} draw={draw}: {} vs {mb}", ub.mu);
            assert!((ua.sigma - sa).abs() < tol, "{a:?} {b:?} draw={draw}: {} vs {sa}", ua.sigma);
            assert!((ub.sigma - sb).abs() < tol, "{a:?} {b:?} draw={draw}: {} vs {sb}", ub.sigma);
        }
    }
}

#[test]
fn repeated_wins_shrink_draw_probability() {
    let p = TrueSkillParams::default();
    let (mut a, mut b) = (Rating::default(), Rating::default());
    let mut last = draw_probability(&a, &b, &p);
    for _ in 0..50 {
        (a, b) = trueskill_update(a, b, false, &p).unwrap();
        let now = draw_probability(&a, &b, &p);
        assert!(now < last, "{now} >= {last}");
        last = now;
    }
    assert!(a.mu > b.mu);
}
