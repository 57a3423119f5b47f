use super::{Gradients, Parameters};

/// Central differences `(f(p + h) − f(p − h)) / 2h`, one coordinate at a time.
pub fn finite_difference_grad<P, F>(mut f: F, params: &P, h: f64) -> Gradients
where
    P: Parameters + Clone,
    F: FnMut(&P) -> f64,
{
    let mut layout = Vec::new();
    params.visit(&mut |name, t| layout.push((name.to_string(), t.len())));

    let mut grads = Gradients::new();
    for (name, len) in layout {
        let mut g = vec![0.0; len];
        for (i, gi) in g.iter_mut().enumerate() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            nudge(&mut plus, &name, i, h);
            nudge(&mut minus, &name, i, -h);
            *gi = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        grads.insert(name, g);
    }
    grads
}

fn nudge<P: Parameters>(p: &mut P, name: &str, index: usize, delta: f64) {
    p.visit_mut(&mut |n, t| {
        if n == name {
            t.data_mut()[index] += delta;
        }
    });
}

/// Largest `|a − b| / max(|a|, |b|, floor)` over all shared entries, with the
/// name of the worst tensor.
pub fn max_relative_error(a: &Gradients, b: &Gradients, floor: f64) -> (f64, String) {
    let mut worst = (0.0, String::new());
    for (name, ga) in a {
        let Some(gb) = b.get(name) else {
            return (f64::INFINITY, name.clone());
        };
        for (x, y) in ga.iter().zip(gb) {
            let rel = (x - y).abs() / x.abs().max(y.abs()).max(floor);
            if !(rel <= worst.0) {
                worst = (rel, name.clone());
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{NamedTensors, Tensor};

    #[test]
    fn sum_has_unit_gradient() {
        let mut p = NamedTensors::default();
        p.insert("p", Tensor::from_vec(vec![0.5, -1.0, 2.0]));
        let g = finite_difference_grad(|p| p.get("p").unwrap().data().iter().sum(), &p, 1e-5);
        for v in &g["p"] {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn dot_product_gradient() {
        let mut p = NamedTensors::default();
        p.insert("p", Tensor::from_vec(vec![1.0, 2.0]));
        let g = finite_difference_grad(
            |p| p.get("p").unwrap().data().iter().map(|v| v * v).sum(),
            &p,
            1e-5,
        );
        assert!((g["p"][0] - 2.0).abs() < 1e-8);
        assert!((g["p"][1] - 4.0).abs() < 1e-8);
    }
}
