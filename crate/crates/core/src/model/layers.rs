//! Per-sample kernels. Feature maps are channel-major `[c][y][x]`; convolution
//! inputs are stored zero-padded by `k / 2` on every side.

use crate::Scalar;

#[inline]
pub fn leaky<S: Scalar>(z: S, slope: S) -> S {
    if z > S::zero() {
        z
    } else {
        slope * z
    }
}

#[inline]
pub fn leaky_grad<S: Scalar>(z: S, slope: S) -> S {
    if z > S::zero() {
        S::one()
    } else {
        slope
    }
}

#[inline]
pub fn softplus<S: Scalar>(z: S) -> S {
    z.max(S::zero()) + (-z.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}

/// Map geometry shared by every convolution in the DDM branch.
#[derive(Debug, Clone, Copy)]
pub struct Geom {
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl Geom {
    pub fn hp(&self) -> usize {
        self.h + self.k - 1
    }

    pub fn wp(&self) -> usize {
        self.w + self.k - 1
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn padded_plane(&self) -> usize {
        self.hp() * self.wp()
    }

    /// Copies `[c][h][w]` into the interior of a padded `[c][hp][wp]` buffer.
    pub fn pad_into<S: Scalar>(&self, src: &[S], c: usize, dst: &mut [S]) {
        let (r, wp) = (self.k / 2, self.wp());
        for ci in 0..c {
            for y in 0..self.h {
                let s = &src[ci * self.plane() + y * self.w..][..self.w];
                dst[ci * self.padded_plane() + (y + r) * wp + r..][..self.w].copy_from_slice(s);
            }
        }
    }

    /// Adds the interior of a padded gradient buffer into `[c][h][w]`.
    pub fn unpad_add<S: Scalar>(&self, src: &[S], c: usize, dst: &mut [S]) {
        let (r, wp) = (self.k / 2, self.wp());
        for ci in 0..c {
            for y in 0..self.h {
                let s = &src[ci * self.padded_plane() + (y + r) * wp + r..][..self.w];
                let d = &mut dst[ci * self.plane() + y * self.w..][..self.w];
                d.iter_mut().zip(s).for_each(|(a, b)| *a += *b);
            }
        }
    }
}

/// `out[co] = b[co] + Σ_ci w[co][ci] ⋆ p[ci]` ('same' output size).
pub fn conv_fwd<S: Scalar>(g: Geom, p: &[S], cin: usize, w: &[S], b: &[S], cout: usize, out: &mut [S]) {
    let (k, wd, wp) = (g.k, g.w, g.wp());
    for co in 0..cout {
        let o = &mut out[co * g.plane()..][..g.plane()];
        o.fill(b[co]);
        for ci in 0..cin {
            let pin = &p[ci * g.padded_plane()..][..g.padded_plane()];
            let wk = &w[(co * cin + ci) * k * k..][..k * k];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wk[ky * k + kx];
                    for y in 0..g.h {
                        let orow = &mut o[y * wd..][..wd];
                        let prow = &pin[(y + ky) * wp + kx..][..wd];
                        for x in 0..wd {
                            orow[x] += wv * prow[x];
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates weight/bias gradients and, when `gp` is given, the gradient
/// with respect to the padded input.
#[allow(clippy::too_many_arguments)]
pub fn conv_bwd<S: Scalar>(
    g: Geom,
    p: &[S],
    cin: usize,
    w: &[S],
    cout: usize,
    gz: &[S],
    gw: &mut [S],
    gb: &mut [S],
    mut gp: Option<&mut [S]>,
) {
    let (k, wd, wp) = (g.k, g.w, g.wp());
    for co in 0..cout {
        let gzc = &gz[co * g.plane()..][..g.plane()];
        gb[co] += gzc.iter().copied().sum::<S>();
        for ci in 0..cin {
            let pin = &p[ci * g.padded_plane()..][..g.padded_plane()];
            let base = (co * cin + ci) * k * k;
            for ky in 0..k {
                for kx in 0..k {
                    let mut acc = S::zero();
                    for y in 0..g.h {
                        let grow = &gzc[y * wd..][..wd];
                        let prow = &pin[(y + ky) * wp + kx..][..wd];
                        for x in 0..wd {
                            acc += grow[x] * prow[x];
                        }
                    }
                    gw[base + ky * k + kx] += acc;
                    if let Some(gp) = gp.as_deref_mut() {
                        let wv = w[base + ky * k + kx];
                        let gpin = &mut gp[ci * g.padded_plane()..][..g.padded_plane()];
                        for y in 0..g.h {
                            let grow = &gzc[y * wd..][..wd];
                            let dst = &mut gpin[(y + ky) * wp + kx..][..wd];
                            for x in 0..wd {
                                dst[x] += wv * grow[x];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `y = W x + b` with `W` row-major `[out][in]`.
pub fn dense_fwd<S: Scalar>(w: &[S], b: &[S], x: &[S], y: &mut [S]) {
    let nin = x.len();
    for (o, yo) in y.iter_mut().enumerate() {
        let row = &w[o * nin..][..nin];
        *yo = b[o] + row.iter().zip(x).map(|(a, b)| *a * *b).sum::<S>();
    }
}

pub fn dense_bwd<S: Scalar>(w: &[S], x: &[S], gz: &[S], gw: &mut [S], gb: &mut [S], gx: Option<&mut [S]>) {
    let nin = x.len();
    for (o, g) in gz.iter().enumerate() {
        gb[o] += *g;
        let row = &mut gw[o * nin..][..nin];
        row.iter_mut().zip(x).for_each(|(a, b)| *a += *g * *b);
    }
    if let Some(gx) = gx {
        for (o, g) in gz.iter().enumerate() {
            let row = &w[o * nin..][..nin];
            gx.iter_mut().zip(row).for_each(|(a, b)| *a += *g * *b);
        }
    }
}

/// Non-overlapping `s×s` max pool with floor sizing; `arg` receives the flat
/// source index of each maximum (first in scan order on ties).
pub fn maxpool_fwd<S: Scalar>(src: &[S], c: usize, h: usize, w: usize, s: usize, out: &mut [S], arg: &mut [usize]) {
    let (ph, pw) = (h / s, w / s);
    for ci in 0..c {
        for py in 0..ph {
            for px in 0..pw {
                let mut best = ci * h * w + py * s * w + px * s;
                for dy in 0..s {
                    for dx in 0..s {
                        let i = ci * h * w + (py * s + dy) * w + px * s + dx;
                        if src[i] > src[best] {
                            best = i;
                        }
                    }
                }
                let o = ci * ph * pw + py * pw + px;
                out[o] = src[best];
                arg[o] = best;
            }
        }
    }
}
