use nalgebra::DMatrix;

/// Affine Gaussian step `x ↦ Φ x + F ξ` in flat row-major storage.
#[derive(Debug, Clone)]
pub struct LinearStep {
    pub d: usize,
    pub rank: usize,
    pub h: f64,
    phi: Vec<f64>,
    factor: Vec<f64>,
}

impl LinearStep {
    pub fn new(phi: &DMatrix<f64>, factor: &DMatrix<f64>) -> Self {
        let d = phi.nrows();
        let rank = factor.ncols();
        let phi_flat = (0..d * d).map(|k| phi[(k / d, k % d)]).collect();
        let f_flat = (0..d * rank).map(|k| factor[(k / rank, k % rank)]).collect();
        Self { d, rank, h: 0.0, phi: phi_flat, factor: f_flat }
    }

    /// `out = Φ x + F ξ`; `xi` has `rank` entries.
    #[inline]
    pub fn apply(&self, x: &[f64], xi: &[f64], out: &mut [f64]) {
        let d = self.d;
        let r = self.rank;
        for i in 0..d {
            let row = &self.phi[i * d..(i + 1) * d];
            let mut acc = 0.0;
            for j in 0..d {
                acc += row[j] * x[j];
            }
            let frow = &self.factor[i * r..(i + 1) * r];
            for j in 0..r {
                acc += frow[j] * xi[j];
            }
            out[i] = acc;
        }
    }
}
