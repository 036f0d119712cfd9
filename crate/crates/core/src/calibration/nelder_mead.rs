//! Derivative-free simplex minimization.

pub(crate) struct Options {
    pub max_iterations: usize,
    pub f_tolerance: f64,
    pub x_tolerance: f64,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            max_iterations: 4000,
            f_tolerance: 1e-15,
            x_tolerance: 1e-11,
        }
    }
}

pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
}

fn centroid(simplex: &[Vec<f64>], skip: usize) -> Vec<f64> {
    let n = simplex[0].len();
    let mut c = vec![0.0; n];
    for (i, p) in simplex.iter().enumerate() {
        if i == skip {
            continue;
        }
        for (ci, pi) in c.iter_mut().zip(p) {
            *ci += pi / n as f64;
        }
    }
    c
}

fn along(from: &[f64], to: &[f64], t: f64) -> Vec<f64> {
    from.iter().zip(to).map(|(a, b)| a + t * (b - a)).collect()
}

/// Minimizes `f` from `x0` using an axis-aligned initial simplex with the
/// given per-coordinate `steps`. Non-finite objective values are treated as
/// `+inf`, which keeps the simplex inside the feasible region.
pub(crate) fn minimize<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    steps: &[f64],
    opts: &Options,
) -> Minimum {
    let n = x0.len();
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += steps[i];
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| eval(p)).collect();

    for _ in 0..opts.max_iterations {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        let extent = simplex[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread.is_finite()
            && spread <= opts.f_tolerance + 1e-12 * values[0].abs()
            && extent <= opts.x_tolerance
        {
            break;
        }

        let c = centroid(&simplex, n);
        let reflected = along(&c, &simplex[n], -1.0);
        let fr = eval(&reflected);
        if fr < values[0] {
            let expanded = along(&c, &simplex[n], -2.0);
            let fe = eval(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            let (contracted, fc) = if fr < values[n] {
                let p = along(&c, &simplex[n], -0.5);
                let v = eval(&p);
                (p, v)
            } else {
                let p = along(&c, &simplex[n], 0.5);
                let v = eval(&p);
                (p, v)
            };
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                let best = simplex[0].clone();
                for i in 1..=n {
                    simplex[i] = along(&best, &simplex[i], 0.5);
                    values[i] = eval(&simplex[i]);
                }
            }
        }
    }
    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .expect("simplex is non-empty");
    Minimum {
        x: simplex[best].clone(),
        value: values[best],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_rosenbrock_minimum() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = minimize(rosen, &[-1.2, 1.0], &[0.5, 0.5], &Options::default());
        assert!(
            (m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5,
            "{:?}",
            m.x
        );
    }

    #[test]
    fn handles_nonsmooth_l1() {
        let f = |x: &[f64]| (x[0] - 3.0).abs() + 2.0 * (x[1] + 1.0).abs();
        let m = minimize(f, &[0.0, 0.0], &[1.0, 1.0], &Options::default());
        assert!(m.value < 1e-8, "{}", m.value);
    }
}
