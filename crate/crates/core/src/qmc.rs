//! Deterministic point sets on the unit cube.

/// First `n` points of the additive recurrence (Kronecker) sequence in
/// `[0, 1)^dim` built from the generalized golden ratio. Low discrepancy in
/// any dimension and fully deterministic.
pub fn kronecker_points(n: usize, dim: usize) -> Vec<Vec<f64>> {
    if dim == 0 {
        return vec![Vec::new(); n];
    }
    // Unique positive root of x^(d+1) = x + 1.
    let mut phi = 2.0f64;
    for _ in 0..64 {
        phi = (1.0 + phi).powf(1.0 / (dim as f64 + 1.0));
    }
    let alpha: Vec<f64> = (1..=dim).map(|k| phi.powi(-(k as i32)).fract()).collect();
    (1..=n)
        .map(|i| {
            alpha
                .iter()
                .map(|a| (0.5 + a * i as f64).fract())
                .collect()
        })
        .collect()
}

/// Tensor grid with `resolution` evenly spaced points per axis, endpoints
/// included. `resolution == 1` places the single point at the centre.
/// Points are ordered with the last coordinate varying fastest.
pub fn uniform_grid(resolution: usize, dim: usize) -> Vec<Vec<f64>> {
    if dim == 0 {
        return vec![Vec::new()];
    }
    if resolution == 0 {
        return Vec::new();
    }
    let axis: Vec<f64> = if resolution == 1 {
        vec![0.5]
    } else {
        (0..resolution)
            .map(|i| i as f64 / (resolution - 1) as f64)
            .collect()
    };
    let total = resolution.pow(dim as u32);
    (0..total)
        .map(|mut flat| {
            let mut p = vec![0.0; dim];
            for c in (0..dim).rev() {
                p[c] = axis[flat % resolution];
                flat /= resolution;
            }
            p
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronecker_in_unit_cube() {
        for d in 1..6 {
            let pts = kronecker_points(500, d);
            assert_eq!(pts.len(), 500);
            assert!(pts.iter().flatten().all(|&v| (0.0..1.0).contains(&v)));
        }
    }

    #[test]
    fn kronecker_1d_is_evenly_spread() {
        let mut pts: Vec<f64> = kronecker_points(1000, 1).into_iter().map(|p| p[0]).collect();
        pts.sort_by(f64::total_cmp);
        let max_gap = pts.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        assert!(max_gap < 0.01);
        let mean = pts.iter().sum::<f64>() / 1000.0;
        assert!((mean - 0.5).abs() < 1e-2);
    }

    #[test]
    fn grid_shapes() {
        let g = uniform_grid(101, 1);
        assert_eq!(g.len(), 101);
        assert_eq!(g[0], vec![0.0]);
        assert_eq!(g[100], vec![1.0]);
        let g2 = uniform_grid(33, 2);
        assert_eq!(g2.len(), 33 * 33);
        assert_eq!(g2[1], vec![0.0, 1.0 / 32.0]);
        assert_eq!(uniform_grid(5, 0), vec![Vec::<f64>::new()]);
        assert_eq!(uniform_grid(1, 2), vec![vec![0.5, 0.5]]);
    }
}
