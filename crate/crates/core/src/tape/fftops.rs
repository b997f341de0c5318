//! Differentiable FFT ops on the channel-stacked spectrum layout
//! `[N, 2C, H, Wf]` (real parts in channels `0..C`, imaginary in `C..2C`).
//! The transforms are linear, so the backward passes are their adjoints;
//! both directions share the plane kernels in [`crate::fft`].

use crate::fft;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) fn rfft2_stacked<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let wf = fft::half_width(w);
    let mut out = Tensor::zeros([n, 2 * c, h, wf]);
    for ni in 0..n {
        for ci in 0..c {
            let mut re = alloc::vec![T::ZERO; h * wf];
            let mut im = alloc::vec![T::ZERO; h * wf];
            fft::rfft2_plane(x.plane(ni, ci), h, w, &mut re, &mut im);
            out.plane_mut(ni, ci).copy_from_slice(&re);
            out.plane_mut(ni, c + ci).copy_from_slice(&im);
        }
    }
    out
}

pub(crate) fn rfft2_backward<T: Scalar>(x_shape: [usize; 4], dy: &[T], dx: &mut [T]) {
    let [n, c, h, w] = x_shape;
    let wf = fft::half_width(w);
    let hw = h * w;
    let hwf = h * wf;
    let mut buf = alloc::vec![T::ZERO; hw];
    for ni in 0..n {
        for ci in 0..c {
            let re = &dy[(ni * 2 * c + ci) * hwf..(ni * 2 * c + ci + 1) * hwf];
            let im = &dy[(ni * 2 * c + c + ci) * hwf..(ni * 2 * c + c + ci + 1) * hwf];
            fft::rfft2_adjoint_plane(re, im, h, w, &mut buf);
            let base = (ni * c + ci) * hw;
            for (d, &s) in dx[base..base + hw].iter_mut().zip(buf.iter()) {
                *d += s;
            }
        }
    }
}

pub(crate) fn irfft2_stacked<T: Scalar>(z: &Tensor<T>, source_width: usize) -> Tensor<T> {
    let [n, c2, h, _] = z.shape();
    let c = c2 / 2;
    let mut out = Tensor::zeros([n, c, h, source_width]);
    for ni in 0..n {
        for ci in 0..c {
            let (re, im) = (z.plane(ni, ci).to_vec(), z.plane(ni, c + ci).to_vec());
            fft::irfft2_plane(&re, &im, h, source_width, out.plane_mut(ni, ci));
        }
    }
    out
}

pub(crate) fn irfft2_backward<T: Scalar>(
    z_shape: [usize; 4],
    source_width: usize,
    dy: &[T],
    dz: &mut [T],
) {
    let [n, c2, h, wf] = z_shape;
    let c = c2 / 2;
    let w = source_width;
    let hw = h * w;
    let hwf = h * wf;
    let mut dre = alloc::vec![T::ZERO; hwf];
    let mut dim = alloc::vec![T::ZERO; hwf];
    for ni in 0..n {
        for ci in 0..c {
            let base_y = (ni * c + ci) * hw;
            fft::irfft2_adjoint_plane(&dy[base_y..base_y + hw], h, w, &mut dre, &mut dim);
            let base_re = (ni * c2 + ci) * hwf;
            let base_im = (ni * c2 + c + ci) * hwf;
            for (d, &s) in dz[base_re..base_re + hwf].iter_mut().zip(dre.iter()) {
                *d += s;
            }
            for (d, &s) in dz[base_im..base_im + hwf].iter_mut().zip(dim.iter()) {
                *d += s;
            }
        }
    }
}
