//! Raw forward/backward kernels on flat buffers. Shape validation happens in
//! [`crate::autograd::Graph`]; everything here assumes consistent inputs.

use matrixmultiply::sgemm;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn plane_out(&self) -> usize {
        self.ho * self.wo
    }
}

/// `c = a(m×k) · b(k×n) + beta·c`, each operand described by row/col strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides describe in-bounds views of `a`, `b` and `c`,
    // checked by the callers' shape arithmetic.
    unsafe {
        sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(x: &[f32], g: &ConvGeom, cols: &mut [f32]) {
    let plane = g.plane_out();
    for c in 0..g.cin {
        let xc = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add(cols: &[f32], g: &ConvGeom, dx: &mut [f32]) {
    let plane = g.plane_out();
    for c in 0..g.cin {
        let dxc = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut dxc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn is_pointwise(g: &ConvGeom) -> bool {
    g.k == 1 && g.stride == 1 && g.pad == 0
}

pub(crate) fn conv2d_forward(x: &[f32], weight: &[f32], bias: &[f32], g: &ConvGeom) -> Vec<f32> {
    let plane = g.plane_out();
    let patch = g.patch();
    let mut out = vec![0.0f32; g.n * g.cout * plane];
    let mut cols = if is_pointwise(g) {
        Vec::new()
    } else {
        vec![0.0f32; patch * plane]
    };
    for n in 0..g.n {
        let xn = &x[n * g.cin * g.h * g.w..(n + 1) * g.cin * g.h * g.w];
        let on = &mut out[n * g.cout * plane..(n + 1) * g.cout * plane];
        for (co, row) in on.chunks_mut(plane).enumerate() {
            row.fill(bias[co]);
        }
        let b = if is_pointwise(g) {
            xn
        } else {
            im2col(xn, g, &mut cols);
            &cols
        };
        gemm(g.cout, patch, plane, weight, (patch, 1), b, (plane, 1), 1.0, on);
    }
    out
}

/// Returns `(dx, dweight, dbias)`.
pub(crate) fn conv2d_backward(
    x: &[f32],
    weight: &[f32],
    dy: &[f32],
    g: &ConvGeom,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let plane = g.plane_out();
    let patch = g.patch();
    let in_size = g.cin * g.h * g.w;
    let mut dx = vec![0.0f32; g.n * in_size];
    let mut dw = vec![0.0f32; g.cout * patch];
    let mut db = vec![0.0f32; g.cout];
    let pointwise = is_pointwise(g);
    let mut cols = if pointwise {
        Vec::new()
    } else {
        vec![0.0f32; patch * plane]
    };
    let mut dcols = vec![0.0f32; patch * plane];
    for n in 0..g.n {
        let xn = &x[n * in_size..(n + 1) * in_size];
        let dyn_ = &dy[n * g.cout * plane..(n + 1) * g.cout * plane];
        for (co, row) in dyn_.chunks(plane).enumerate() {
            db[co] += row.iter().sum::<f32>();
        }
        let b = if pointwise {
            xn
        } else {
            im2col(xn, g, &mut cols);
            &cols
        };
        // dW += dY · colsᵀ
        gemm(g.cout, plane, patch, dyn_, (plane, 1), b, (1, plane), 1.0, &mut dw);
        // dcols = Wᵀ · dY
        gemm(patch, g.cout, plane, weight, (1, patch), dyn_, (plane, 1), 0.0, &mut dcols);
        let dxn = &mut dx[n * in_size..(n + 1) * in_size];
        if pointwise {
            dxn.iter_mut().zip(&dcols).for_each(|(a, b)| *a += b);
        } else {
            col2im_add(&dcols, g, dxn);
        }
    }
    (dx, dw, db)
}

/// Returns the pooled output and, for every output cell, the flat input index
/// of the first maximal element in its window.
pub(crate) fn maxpool_forward(
    x: &[f32],
    (nc, h, w): (usize, usize, usize),
    k: usize,
    stride: usize,
) -> (Vec<f32>, Vec<usize>, usize, usize) {
    let ho = (h - k) / stride + 1;
    let wo = (w - k) / stride + 1;
    let mut out = Vec::with_capacity(nc * ho * wo);
    let mut arg = Vec::with_capacity(nc * ho * wo);
    for p in 0..nc {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = base + oy * stride * w + ox * stride;
                for ky in 0..k {
                    for kx in 0..k {
                        let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    (out, arg, ho, wo)
}

pub(crate) fn avgpool_forward(x: &[f32], (nc, h, w): (usize, usize, usize), k: usize) -> Vec<f32> {
    let ho = h / k;
    let wo = w / k;
    let scale = 1.0 / (k * k) as f32;
    let mut out = vec![0.0f32; nc * ho * wo];
    for p in 0..nc {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0;
                for ky in 0..k {
                    let row = p * h * w + (oy * k + ky) * w + ox * k;
                    acc += x[row..row + k].iter().sum::<f32>();
                }
                out[(p * ho + oy) * wo + ox] = acc * scale;
            }
        }
    }
    out
}

pub(crate) fn avgpool_backward(dy: &[f32], (nc, h, w): (usize, usize, usize), k: usize) -> Vec<f32> {
    let ho = h / k;
    let wo = w / k;
    let scale = 1.0 / (k * k) as f32;
    let mut dx = vec![0.0f32; nc * h * w];
    for p in 0..nc {
        for oy in 0..ho {
            for ox in 0..wo {
                let g = dy[(p * ho + oy) * wo + ox] * scale;
                for ky in 0..k {
                    let row = p * h * w + (oy * k + ky) * w + ox * k;
                    dx[row..row + k].iter_mut().for_each(|v| *v += g);
                }
            }
        }
    }
    dx
}
