//! Numeric kernels behind the graph ops. Errors are plain strings; the graph
//! wraps them with the offending node id.

use super::Tensor;

type KResult = Result<Tensor, String>;

// c[p×r] += a[p×q] · b[q×r]
fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let c_row = &mut c[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b[k * r..(k + 1) * r];
            for (cj, bj) in c_row.iter_mut().zip(b_row) {
                *cj += aik * bj;
            }
        }
    }
}

// c[p×q] += g[p×r] · b[q×r]ᵀ
fn gemm_nt(g: &[f64], b: &[f64], c: &mut [f64], p: usize, r: usize, q: usize) {
    for i in 0..p {
        let g_row = &g[i * r..(i + 1) * r];
        for k in 0..q {
            let b_row = &b[k * r..(k + 1) * r];
            let dot: f64 = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            c[i * q + k] += dot;
        }
    }
}

// c[q×r] += a[p×q]ᵀ · g[p×r]
fn gemm_tn(a: &[f64], g: &[f64], c: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let g_row = &g[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == 0.0 {
                continue;
            }
            let c_row = &mut c[k * r..(k + 1) * r];
            for (cj, gj) in c_row.iter_mut().zip(g_row) {
                *cj += aik * gj;
            }
        }
    }
}

struct MatmulPlan {
    out_shape: Vec<usize>,
    batches: usize,
    a_batched: bool,
    b_batched: bool,
    p: usize,
    q: usize,
    r: usize,
}

fn plan_matmul(a: &Tensor, b: &Tensor) -> Result<MatmulPlan, String> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() < 2 || sb.len() < 2 {
        return Err(format!("matmul needs rank >= 2 operands, got {sa:?} x {sb:?}"));
    }
    let (p, q) = (sa[sa.len() - 2], sa[sa.len() - 1]);
    let (q2, r) = (sb[sb.len() - 2], sb[sb.len() - 1]);
    if q != q2 {
        return Err(format!("matmul inner dimensions differ: {sa:?} x {sb:?}"));
    }
    let ba = &sa[..sa.len() - 2];
    let bb = &sb[..sb.len() - 2];
    let batch_dims = match (ba.is_empty(), bb.is_empty()) {
        (_, true) => ba,
        (true, false) => bb,
        (false, false) if ba == bb => ba,
        _ => return Err(format!("matmul batch dimensions differ: {sa:?} x {sb:?}")),
    };
    let mut out_shape = batch_dims.to_vec();
    out_shape.extend([p, r]);
    Ok(MatmulPlan {
        out_shape,
        batches: batch_dims.iter().product(),
        a_batched: !ba.is_empty(),
        b_batched: !bb.is_empty(),
        p,
        q,
        r,
    })
}

pub fn matmul(a: &Tensor, b: &Tensor) -> KResult {
    let pl = plan_matmul(a, b)?;
    let (p, q, r) = (pl.p, pl.q, pl.r);
    let mut c = vec![0.0; pl.batches * p * r];
    if pl.a_batched && !pl.b_batched {
        gemm_nn(a.data(), b.data(), &mut c, pl.batches * p, q, r);
    } else {
        for k in 0..pl.batches {
            let ad = if pl.a_batched { &a.data()[k * p * q..(k + 1) * p * q] } else { a.data() };
            let bd = if pl.b_batched { &b.data()[k * q * r..(k + 1) * q * r] } else { b.data() };
            gemm_nn(ad, bd, &mut c[k * p * r..(k + 1) * p * r], p, q, r);
        }
    }
    Ok(Tensor::from_parts(pl.out_shape, c))
}

pub fn matmul_backward(a: &Tensor, b: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let pl = plan_matmul(a, b).expect("shapes validated in forward");
    let (p, q, r) = (pl.p, pl.q, pl.r);
    let mut ga = vec![0.0; a.len()];
    let mut gb = vec![0.0; b.len()];
    if pl.a_batched && !pl.b_batched {
        let rows = pl.batches * p;
        gemm_nt(g.data(), b.data(), &mut ga, rows, r, q);
        gemm_tn(a.data(), g.data(), &mut gb, rows, q, r);
    } else {
        for k in 0..pl.batches {
            let gd = &g.data()[k * p * r..(k + 1) * p * r];
            let (a_off, b_off) = (
                if pl.a_batched { k * p * q } else { 0 },
                if pl.b_batched { k * q * r } else { 0 },
            );
            let ad = &a.data()[a_off..a_off + p * q];
            let bd = &b.data()[b_off..b_off + q * r];
            gemm_nt(gd, bd, &mut ga[a_off..a_off + p * q], p, r, q);
            gemm_tn(ad, gd, &mut gb[b_off..b_off + q * r], p, q, r);
        }
    }
    (
        Tensor::from_parts(a.shape().to_vec(), ga),
        Tensor::from_parts(b.shape().to_vec(), gb),
    )
}

pub fn transpose(a: &Tensor) -> KResult {
    let s = a.shape();
    if s.len() < 2 {
        return Err(format!("transpose needs rank >= 2, got {s:?}"));
    }
    let (rows, cols) = (s[s.len() - 2], s[s.len() - 1]);
    let batches = a.len() / (rows * cols);
    let mut out = vec![0.0; a.len()];
    let d = a.data();
    for k in 0..batches {
        let off = k * rows * cols;
        for i in 0..rows {
            for j in 0..cols {
                out[off + j * rows + i] = d[off + i * cols + j];
            }
        }
    }
    let mut shape = s.to_vec();
    let n = shape.len();
    shape.swap(n - 2, n - 1);
    Ok(Tensor::from_parts(shape, out))
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>, String> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(format!("cannot broadcast {a:?} with {b:?}")),
        };
    }
    Ok(out)
}

// Strides of `shape` aligned to an output of `rank` dims, zero where broadcast.
fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        let oi = i + rank - shape.len();
        strides[oi] = if shape[i] == 1 && out[oi] != 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Visit every output position of a broadcast with the matching flat offsets
/// into both operands.
fn for_each_broadcast(
    a: &[usize],
    b: &[usize],
    out: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let n: usize = out.iter().product();
    if a == b {
        for i in 0..n {
            f(i, i, i);
        }
        return;
    }
    let na: usize = a.iter().product();
    let nb: usize = b.iter().product();
    if a == out && out.ends_with(b) {
        for i in 0..n {
            f(i, i, i % nb);
        }
        return;
    }
    if b == out && out.ends_with(a) {
        for i in 0..n {
            f(i, i % na, i);
        }
        return;
    }
    let rank = out.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let sa = aligned_strides(a, out);
    let sb = aligned_strides(b, out);
    let last = rank - 1;
    let (len_last, la, lb) = (out[last], sa[last], sb[last]);
    let outer: usize = out[..last].iter().product();
    let mut idx = vec![0usize; last];
    let (mut ba, mut bb, mut o) = (0usize, 0usize, 0usize);
    for _ in 0..outer {
        for j in 0..len_last {
            f(o, ba + j * la, bb + j * lb);
            o += 1;
        }
        for d in (0..last).rev() {
            idx[d] += 1;
            ba += sa[d];
            bb += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ba -= sa[d] * out[d];
            bb -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

pub fn binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> KResult {
    let out = broadcast_shape(a.shape(), b.shape())?;
    let n: usize = out.iter().product();
    let mut data = vec![0.0; n];
    let (ad, bd) = (a.data(), b.data());
    for_each_broadcast(a.shape(), b.shape(), &out, |o, ia, ib| data[o] = f(ad[ia], bd[ib]));
    Ok(Tensor::from_parts(out, data))
}

/// Gradients of a broadcast binary op given the local partials `da(x, y)` and `db(x, y)`.
pub fn binary_backward(
    a: &Tensor,
    b: &Tensor,
    g: &Tensor,
    da: impl Fn(f64, f64) -> f64,
    db: impl Fn(f64, f64) -> f64,
) -> (Tensor, Tensor) {
    let out = g.shape().to_vec();
    let mut ga = vec![0.0; a.len()];
    let mut gb = vec![0.0; b.len()];
    let (ad, bd, gd) = (a.data(), b.data(), g.data());
    for_each_broadcast(a.shape(), b.shape(), &out, |o, ia, ib| {
        let (x, y) = (ad[ia], bd[ib]);
        ga[ia] += gd[o] * da(x, y);
        gb[ib] += gd[o] * db(x, y);
    });
    (
        Tensor::from_parts(a.shape().to_vec(), ga),
        Tensor::from_parts(b.shape().to_vec(), gb),
    )
}

pub fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize), String> {
    if axis >= shape.len() {
        return Err(format!("axis {axis} out of range for shape {shape:?}"));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

pub fn softmax(x: &Tensor, axis: usize) -> KResult {
    let (outer, n, inner) = axis_split(x.shape(), axis)?;
    let d = x.data();
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * n * inner + k * inner + i;
            let max = (0..n).map(|k| d[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..n {
                let e = (d[at(k)] - max).exp();
                out[at(k)] = e;
                total += e;
            }
            for k in 0..n {
                out[at(k)] /= total;
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

pub fn softmax_backward(y: &Tensor, g: &Tensor, axis: usize) -> Tensor {
    let (outer, n, inner) = axis_split(y.shape(), axis).expect("validated in forward");
    let (yd, gd) = (y.data(), g.data());
    let mut out = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * n * inner + k * inner + i;
            let dot: f64 = (0..n).map(|k| yd[at(k)] * gd[at(k)]).sum();
            for k in 0..n {
                out[at(k)] = yd[at(k)] * (gd[at(k)] - dot);
            }
        }
    }
    Tensor::from_parts(y.shape().to_vec(), out)
}

pub fn sum(x: &Tensor, axis: Option<usize>) -> KResult {
    let Some(axis) = axis else {
        return Ok(Tensor::scalar(x.data().iter().sum()));
    };
    let (outer, n, inner) = axis_split(x.shape(), axis)?;
    let d = x.data();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for k in 0..n {
            let src = &d[(o * n + k) * inner..(o * n + k + 1) * inner];
            for (dst, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                *dst += s;
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape.remove(axis);
    Ok(Tensor::from_parts(shape, out))
}

/// Broadcast a reduced gradient back to the pre-reduction shape.
pub fn expand(g: &Tensor, shape: &[usize], axis: Option<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    let Some(axis) = axis else {
        return Tensor::from_parts(shape.to_vec(), vec![g.data()[0]; n]);
    };
    let (outer, len, inner) = axis_split(shape, axis).expect("validated in forward");
    let gd = g.data();
    let mut out = vec![0.0; n];
    for o in 0..outer {
        for k in 0..len {
            out[(o * len + k) * inner..(o * len + k + 1) * inner]
                .copy_from_slice(&gd[o * inner..(o + 1) * inner]);
        }
    }
    Tensor::from_parts(shape.to_vec(), out)
}

pub fn slice(x: &Tensor, axis: usize, start: usize, end: usize) -> KResult {
    let (outer, n, inner) = axis_split(x.shape(), axis)?;
    if end > n || start >= end {
        return Err(format!("slice {start}..{end} out of range for axis of length {n}"));
    }
    let w = end - start;
    let d = x.data();
    let mut out = Vec::with_capacity(outer * w * inner);
    for o in 0..outer {
        out.extend_from_slice(&d[(o * n + start) * inner..(o * n + end) * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = w;
    Ok(Tensor::from_parts(shape, out))
}

pub fn slice_backward(shape: &[usize], g: &Tensor, axis: usize, start: usize, end: usize) -> Tensor {
    let (outer, n, inner) = axis_split(shape, axis).expect("validated in forward");
    let w = end - start;
    let mut out = vec![0.0; shape.iter().product()];
    let gd = g.data();
    for o in 0..outer {
        out[(o * n + start) * inner..(o * n + end) * inner]
            .copy_from_slice(&gd[o * w * inner..(o + 1) * w * inner]);
    }
    Tensor::from_parts(shape.to_vec(), out)
}

pub fn gather(x: &Tensor, indices: &[usize]) -> KResult {
    let s = x.shape();
    let Some(&n) = s.last() else {
        return Err("gather on a scalar".into());
    };
    if let Some(bad) = indices.iter().find(|&&i| i >= n) {
        return Err(format!("gather index {bad} out of range for last axis of length {n}"));
    }
    let rows = x.len() / n;
    let d = x.data();
    let mut out = Vec::with_capacity(rows * indices.len());
    for r in 0..rows {
        let row = &d[r * n..(r + 1) * n];
        out.extend(indices.iter().map(|&i| row[i]));
    }
    let mut shape = s.to_vec();
    *shape.last_mut().expect("rank >= 1") = indices.len();
    Ok(Tensor::from_parts(shape, out))
}

pub fn gather_backward(shape: &[usize], g: &Tensor, indices: &[usize]) -> Tensor {
    let n = *shape.last().expect("rank >= 1");
    let total: usize = shape.iter().product();
    let rows = total / n;
    let k = indices.len();
    let mut out = vec![0.0; total];
    let gd = g.data();
    for r in 0..rows {
        for (j, &i) in indices.iter().enumerate() {
            out[r * n + i] += gd[r * k + j];
        }
    }
    Tensor::from_parts(shape.to_vec(), out)
}

pub fn sqdist(x: &Tensor, c: &Tensor) -> KResult {
    let (sx, sc) = (x.shape(), c.shape());
    if sc.len() != 2 || sx.is_empty() || sx[sx.len() - 1] != sc[1] {
        return Err(format!("sqdist needs [.., m] and [k, m], got {sx:?} and {sc:?}"));
    }
    let (k, m) = (sc[0], sc[1]);
    let rows = x.len() / m;
    let (xd, cd) = (x.data(), c.data());
    let mut out = vec![0.0; rows * k];
    for r in 0..rows {
        let xr = &xd[r * m..(r + 1) * m];
        for j in 0..k {
            let cj = &cd[j * m..(j + 1) * m];
            out[r * k + j] = xr.iter().zip(cj).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    }
    let mut shape = sx.to_vec();
    *shape.last_mut().expect("rank >= 1") = k;
    Ok(Tensor::from_parts(shape, out))
}

pub fn sqdist_backward(x: &Tensor, c: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let (k, m) = (c.shape()[0], c.shape()[1]);
    let rows = x.len() / m;
    let (xd, cd, gd) = (x.data(), c.data(), g.data());
    let mut gx = vec![0.0; x.len()];
    let mut gc = vec![0.0; c.len()];
    for r in 0..rows {
        for j in 0..k {
            let w = 2.0 * gd[r * k + j];
            if w == 0.0 {
                continue;
            }
            for t in 0..m {
                let diff = xd[r * m + t] - cd[j * m + t];
                gx[r * m + t] += w * diff;
                gc[j * m + t] -= w * diff;
            }
        }
    }
    (
        Tensor::from_parts(x.shape().to_vec(), gx),
        Tensor::from_parts(c.shape().to_vec(), gc),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_2d() {
        let a = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let b = t(&[3, 2], &[7., 8., 9., 10., 11., 12.]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 2]);
        assert_eq!(c.data(), &[58., 64., 139., 154.]);
    }

    #[test]
    fn matmul_batched_against_shared() {
        let a = t(&[2, 1, 2], &[1., 2., 3., 4.]);
        let b = t(&[2, 1], &[10., 1.]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1, 1]);
        assert_eq!(c.data(), &[12., 34.]);
        assert!(matmul(&a, &t(&[3, 1], &[1., 1., 1.])).is_err());
    }

    #[test]
    fn broadcast_prefix_and_suffix() {
        let a = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let bias = t(&[3], &[10., 20., 30.]);
        assert_eq!(binary(&a, &bias, |x, y| x + y).unwrap().data(), &[11., 22., 33., 14., 25., 36.]);
        let col = t(&[2, 1], &[1., -1.]);
        assert_eq!(binary(&a, &col, |x, y| x * y).unwrap().data(), &[1., 2., 3., -4., -5., -6.]);
        assert!(binary(&a, &t(&[2], &[1., 1.]), |x, y| x + y).is_err());
    }

    #[test]
    fn sum_over_axis_removes_it() {
        let a = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(sum(&a, Some(0)).unwrap().data(), &[5., 7., 9.]);
        assert_eq!(sum(&a, Some(1)).unwrap().data(), &[6., 15.]);
        assert_eq!(sum(&a, None).unwrap().item(), Some(21.0));
    }

    #[test]
    fn softmax_middle_axis() {
        let a = t(&[1, 2, 2], &[0., 1., 0., 1.]);
        let s = softmax(&a, 1).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn slice_and_gather() {
        let a = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(slice(&a, 1, 1, 3).unwrap().data(), &[2., 3., 5., 6.]);
        assert_eq!(gather(&a, &[2, 0, 2]).unwrap().data(), &[3., 1., 3., 6., 4., 6.]);
        assert!(gather(&a, &[3]).is_err());
    }
}
