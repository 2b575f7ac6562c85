//! Row-major dense kernels shared by the tape and plain tensors.

/// `a[m×k] · b[k×p]`
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let row = &mut out[i * p..(i + 1) * p];
        for t in 0..k {
            let av = a[i * k + t];
            if av == 0.0 {
                continue;
            }
            let brow = &b[t * p..(t + 1) * p];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a[m×k] · b[p×k]ᵀ`
pub(crate) fn matmul_a_bt(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..p {
            let brow = &b[j * k..(j + 1) * k];
            out[i * p + j] = dot(arow, brow);
        }
    }
    out
}

/// `a[k×m]ᵀ · b[k×p]`
pub(crate) fn matmul_at_b(a: &[f64], b: &[f64], k: usize, m: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for t in 0..k {
        let arow = &a[t * m..(t + 1) * m];
        let brow = &b[t * p..(t + 1) * p];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * p..(i + 1) * p];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
