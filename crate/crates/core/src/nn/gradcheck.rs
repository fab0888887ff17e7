//! Central finite differences used as an independent gradient oracle.

use super::{Matrix, Parameters};

/// Numerical gradient of `f` with respect to every parameter, in tensor order.
pub fn central_difference<P: Parameters + Clone>(p: &P, f: impl Fn(&P) -> f64, h: f64) -> Vec<f64> {
    let mut probe = p.clone();
    let sizes: Vec<usize> = p.tensors().iter().map(|(_, t)| t.data().len()).collect();
    let mut out = Vec::new();
    for (ti, &len) in sizes.iter().enumerate() {
        for k in 0..len {
            let orig = probe.tensors_mut()[ti].data()[k];
            probe.tensors_mut()[ti].data_mut()[k] = orig + h;
            let up = f(&probe);
            probe.tensors_mut()[ti].data_mut()[k] = orig - h;
            let down = f(&probe);
            probe.tensors_mut()[ti].data_mut()[k] = orig;
            out.push((up - down) / (2.0 * h));
        }
    }
    out
}

pub fn input_difference(x: &Matrix, f: impl Fn(&Matrix) -> f64, h: f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.data().len())
        .map(|k| {
            let orig = probe.data()[k];
            probe.data_mut()[k] = orig + h;
            let up = f(&probe);
            probe.data_mut()[k] = orig - h;
            let down = f(&probe);
            probe.data_mut()[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` over whole vectors.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
