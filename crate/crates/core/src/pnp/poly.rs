//! Real roots of small univariate polynomials.

/// Evaluates `Σ c[i]·x^i`.
pub(crate) fn eval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

fn derivative(c: &[f64]) -> Vec<f64> {
    c.iter()
        .enumerate()
        .skip(1)
        .map(|(i, &ci)| ci * i as f64)
        .collect()
}

/// All real roots of the polynomial with ascending coefficients `c`, sorted.
///
/// Roots are isolated between consecutive real critical points (found
/// recursively) and polished by bisection to full precision. Critical points
/// where the polynomial vanishes to rounding are reported as double roots.
pub(crate) fn real_roots(c: &[f64]) -> Vec<f64> {
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return Vec::new();
    }
    let mut coeffs: Vec<f64> = c.iter().map(|v| v / scale).collect();
    while coeffs.len() > 1 && coeffs.last().unwrap().abs() < 1e-14 {
        coeffs.pop();
    }
    let degree = coeffs.len() - 1;
    match degree {
        0 => return Vec::new(),
        1 => return vec![-coeffs[0] / coeffs[1]],
        _ => {}
    }
    let lead = coeffs[degree];
    let bound = 1.0
        + coeffs[..degree]
            .iter()
            .fold(0.0f64, |m, v| m.max((v / lead).abs()));
    let mut knots = vec![-bound];
    knots.extend(
        real_roots(&derivative(&coeffs))
            .into_iter()
            .filter(|x| x.abs() < bound),
    );
    knots.push(bound);

    let magnitude = |x: f64| {
        coeffs
            .iter()
            .enumerate()
            .map(|(i, ci)| ci.abs() * x.abs().powi(i as i32))
            .sum::<f64>()
    };
    let mut roots: Vec<f64> = Vec::new();
    for pair in knots.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (fa, fb) = (eval(&coeffs, a), eval(&coeffs, b));
        if fa == 0.0 {
            roots.push(a);
        } else if fa.signum() != fb.signum() && fb != 0.0 {
            roots.push(bisect(&coeffs, a, b, fa));
        }
    }
    // tangent roots at interior critical points
    for &x in &knots[1..knots.len() - 1] {
        if eval(&coeffs, x).abs() <= 1e-12 * magnitude(x)
            && !roots
                .iter()
                .any(|r| (r - x).abs() <= 1e-9 * (1.0 + x.abs()))
        {
            roots.push(x);
        }
    }
    if let Some(&last) = knots.last() {
        if eval(&coeffs, last) == 0.0 {
            roots.push(last);
        }
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup();
    roots
}

fn bisect(c: &[f64], mut a: f64, mut b: f64, mut fa: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = eval(c, m);
        if fm == 0.0 {
            return m;
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}
