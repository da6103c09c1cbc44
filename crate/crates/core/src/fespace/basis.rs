//! Tensor-product Lagrange bases on [-1,1]^2.
//!
//! Local nodes are numbered lexicographically, `a = i + (p+1) j`, with `i`
//! running along x. Degree 1 has the four corners, degree 2 adds edge
//! midpoints and the center.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LagrangeBasis {
    degree: usize,
}

impl LagrangeBasis {
    pub fn new(degree: usize) -> Self {
        assert!(degree == 1 || degree == 2, "only bilinear and biquadratic elements are supported");
        LagrangeBasis { degree }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_local(&self) -> usize {
        (self.degree + 1) * (self.degree + 1)
    }

    /// Reference coordinate of 1D node `i`.
    pub fn node_1d(&self, i: usize) -> f64 {
        -1.0 + 2.0 * i as f64 / self.degree as f64
    }

    pub fn node(&self, a: usize) -> [f64; 2] {
        let n = self.degree + 1;
        [self.node_1d(a % n), self.node_1d(a / n)]
    }

    fn shape_1d(&self, i: usize, t: f64) -> (f64, f64) {
        match (self.degree, i) {
            (1, 0) => (0.5 * (1.0 - t), -0.5),
            (1, 1) => (0.5 * (1.0 + t), 0.5),
            (2, 0) => (0.5 * t * (t - 1.0), t - 0.5),
            (2, 1) => (1.0 - t * t, -2.0 * t),
            (2, 2) => (0.5 * t * (t + 1.0), t + 0.5),
            _ => unreachable!(),
        }
    }

    /// Values and reference gradients of all local shape functions.
    pub fn eval(&self, xi: [f64; 2], values: &mut [f64], grads: &mut [[f64; 2]]) {
        let n = self.degree + 1;
        let mut fx = [(0.0, 0.0); 3];
        let mut fy = [(0.0, 0.0); 3];
        for i in 0..n {
            fx[i] = self.shape_1d(i, xi[0]);
            fy[i] = self.shape_1d(i, xi[1]);
        }
        for j in 0..n {
            for i in 0..n {
                let a = i + n * j;
                values[a] = fx[i].0 * fy[j].0;
                grads[a] = [fx[i].1 * fy[j].0, fx[i].0 * fy[j].1];
            }
        }
    }

    pub fn eval_vec(&self, xi: [f64; 2]) -> (Vec<f64>, Vec<[f64; 2]>) {
        let mut v = vec![0.0; self.n_local()];
        let mut g = vec![[0.0; 2]; self.n_local()];
        self.eval(xi, &mut v, &mut g);
        (v, g)
    }
}

/// Shape values and reference gradients tabulated at quadrature points.
#[derive(Clone, Debug)]
pub struct BasisTable {
    pub n_local: usize,
    pub values: Vec<f64>,
    pub grads: Vec<[f64; 2]>,
}

impl BasisTable {
    pub fn new(basis: &LagrangeBasis, points: &[[f64; 2]]) -> Self {
        let nl = basis.n_local();
        let mut values = vec![0.0; nl * points.len()];
        let mut grads = vec![[0.0; 2]; nl * points.len()];
        for (q, p) in points.iter().enumerate() {
            basis.eval(*p, &mut values[q * nl..(q + 1) * nl], &mut grads[q * nl..(q + 1) * nl]);
        }
        BasisTable { n_local: nl, values, grads }
    }

    #[inline]
    pub fn at(&self, q: usize) -> (&[f64], &[[f64; 2]]) {
        let r = q * self.n_local..(q + 1) * self.n_local;
        (&self.values[r.clone()], &self.grads[r])
    }
}
