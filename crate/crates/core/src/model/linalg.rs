//! Dense kernels on row-major slices.

/// `out += W x` with `W` of shape `out.len() × x.len()`.
#[inline]
pub fn matvec_acc(out: &mut [f64], w: &[f64], x: &[f64]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), out.len() * cols);
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `out += Wᵀ g` with `W` of shape `g.len() × out.len()`.
#[inline]
pub fn matvec_t_acc(out: &mut [f64], w: &[f64], g: &[f64]) {
    let cols = out.len();
    debug_assert_eq!(w.len(), g.len() * cols);
    for (gi, row) in g.iter().zip(w.chunks_exact(cols)) {
        if *gi != 0.0 {
            axpy(out, *gi, row);
        }
    }
}

/// `W += g xᵀ`
#[inline]
pub fn outer_acc(w: &mut [f64], g: &[f64], x: &[f64]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), g.len() * cols);
    for (gi, row) in g.iter().zip(w.chunks_exact_mut(cols)) {
        if *gi != 0.0 {
            axpy(row, *gi, x);
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a x`
#[inline]
pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `log Σ exp(x)`, `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposed_product_matches_explicit() {
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2 x 3
        let mut y = [0.0; 2];
        matvec_acc(&mut y, &w, &[1.0, 0.0, -1.0]);
        assert_eq!(y, [-2.0, -2.0]);
        let mut x = [0.0; 3];
        matvec_t_acc(&mut x, &w, &[1.0, -1.0]);
        assert_eq!(x, [-3.0, -3.0, -3.0]);
        let mut g = [0.0; 6];
        outer_acc(&mut g, &[1.0, 2.0], &[1.0, 0.0, 3.0]);
        assert_eq!(g, [1.0, 0.0, 3.0, 2.0, 0.0, 6.0]);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
