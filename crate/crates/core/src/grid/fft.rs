use super::PeriodicGrid;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Multidimensional FFT over the varying axes of a grid (row-major layout).
///
/// The inverse transform is normalized so that `inverse(forward(f)) == f`.
#[derive(Clone)]
pub struct FftNd {
    shape: Vec<usize>,
    forward: Vec<Option<Arc<dyn Fft<f64>>>>,
    inverse: Vec<Option<Arc<dyn Fft<f64>>>>,
    total: usize,
}

impl std::fmt::Debug for FftNd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftNd").field("shape", &self.shape).finish()
    }
}

impl FftNd {
    pub fn new(grid: &PeriodicGrid) -> Self {
        let shape = grid.shape();
        let mut planner = FftPlanner::new();
        let mut forward = Vec::new();
        let mut inverse = Vec::new();
        for &m in &shape {
            if m > 1 {
                forward.push(Some(planner.plan_fft_forward(m)));
                inverse.push(Some(planner.plan_fft_inverse(m)));
            } else {
                forward.push(None);
                inverse.push(None);
            }
        }
        let total = shape.iter().product();
        Self { shape, forward, inverse, total }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    fn transform(&self, data: &mut [Complex64], plans: &[Option<Arc<dyn Fft<f64>>>]) {
        assert_eq!(data.len(), self.total, "FFT buffer length mismatch");
        let dim = self.shape.len();
        for axis in 0..dim {
            let Some(plan) = &plans[axis] else { continue };
            let m = self.shape[axis];
            let stride: usize = self.shape[axis + 1..].iter().product();
            if stride == 1 {
                plan.process(data);
                continue;
            }
            let block = m * stride;
            let mut line = vec![Complex64::new(0.0, 0.0); m];
            let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
            for outer in (0..self.total).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    for (j, v) in line.iter_mut().enumerate() {
                        *v = data[base + j * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (j, v) in line.iter().enumerate() {
                        data[base + j * stride] = *v;
                    }
                }
            }
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.forward);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inverse);
        let s = 1.0 / self.total as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }
}
