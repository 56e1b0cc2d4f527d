//! Three-dimensional unitary DFT built from rustfft line transforms.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftDirection, FftPlanner};

type Plan = Arc<dyn Fft<f64>>;

fn plan(len: usize, direction: FftDirection) -> Plan {
    static PLANS: OnceLock<Mutex<(FftPlanner<f64>, HashMap<(usize, bool), Plan>)>> =
        OnceLock::new();
    let cache = PLANS.get_or_init(|| Mutex::new((FftPlanner::new(), HashMap::new())));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    let key = (len, direction == FftDirection::Forward);
    if let Some(p) = guard.1.get(&key) {
        return p.clone();
    }
    let p = guard.0.plan_fft(len, direction);
    guard.1.insert(key, p.clone());
    p
}

/// Lines per rayon task.
const LINE_BATCH: usize = 64;

fn transform_axis(data: &mut [Complex64], grid: [usize; 3], axis: usize, direction: FftDirection) {
    let n = grid[axis];
    if n == 1 {
        return;
    }
    let fft = plan(n, direction);
    let stride: usize = grid[axis + 1..].iter().product();
    if stride == 1 {
        data.par_chunks_mut(n * LINE_BATCH).for_each(|chunk| {
            fft.process(chunk);
        });
        return;
    }
    let total = data.len();
    let lines = total / n;
    // Gather strided lines into contiguous storage, transform, scatter back.
    let line_start = |line: usize| {
        let outer = line / stride;
        let inner = line % stride;
        outer * n * stride + inner
    };
    let mut buf = vec![Complex64::new(0.0, 0.0); total];
    buf.par_chunks_mut(n)
        .enumerate()
        .for_each(|(line, dst)| {
            let s = line_start(line);
            for (i, d) in dst.iter_mut().enumerate() {
                *d = data[s + i * stride];
            }
        });
    buf.par_chunks_mut(n * LINE_BATCH).for_each(|chunk| {
        fft.process(chunk);
    });
    for line in 0..lines {
        let s = line_start(line);
        let src = &buf[line * n..(line + 1) * n];
        for (i, v) in src.iter().enumerate() {
            data[s + i * stride] = *v;
        }
    }
}

/// Analysis direction: `F[m] = N^{-1/2} sum_j f[j] exp(+2 pi i m.j/n)`.
pub(crate) fn analysis(data: &mut [Complex64], grid: [usize; 3]) {
    for axis in 0..3 {
        transform_axis(data, grid, axis, FftDirection::Inverse);
    }
    let s = 1.0 / (data.len() as f64).sqrt();
    data.par_iter_mut().for_each(|v| *v *= s);
}

/// Synthesis direction: `f[j] = N^{-1/2} sum_m F[m] exp(-2 pi i m.j/n)`.
pub(crate) fn synthesis(data: &mut [Complex64], grid: [usize; 3]) {
    for axis in 0..3 {
        transform_axis(data, grid, axis, FftDirection::Forward);
    }
    let s = 1.0 / (data.len() as f64).sqrt();
    data.par_iter_mut().for_each(|v| *v *= s);
}
