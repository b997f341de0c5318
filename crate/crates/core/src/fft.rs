//! 2-D real FFT / inverse FFT over the spatial axes.
//!
//! Conventions: the forward transform is unnormalized, the inverse carries
//! the full 1/(H*W) factor. Real input of width W stores only the
//! non-redundant half spectrum of width `floor(W/2) + 1`; the remaining
//! columns are implied by Hermitian symmetry and reconstructed on
//! inversion.
//!
//! The 1-D kernel is an iterative radix-2 Cooley-Tukey for power-of-two
//! extents with a Bluestein chirp-z fallback for everything else, so every
//! extent >= 1 is supported. Twiddle factors are computed in f64 and cast
//! to the working precision; summation order is fixed, so results are
//! bit-identical across runs.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Axis, CoreError, CoreResult};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Width of the stored half spectrum for a real signal of width `w`.
#[inline]
pub fn half_width(w: usize) -> usize {
    w / 2 + 1
}

/// Frequency-domain image of a real tensor: paired real/imaginary parts of
/// shape `[N, C, H, floor(W/2)+1]` plus the original width needed for an
/// exact inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum<T> {
    pub real: Tensor<T>,
    pub imag: Tensor<T>,
    pub source_width: usize,
}

impl<T: Scalar> ComplexSpectrum<T> {
    fn check(&self) -> CoreResult<()> {
        let rs = self.real.shape();
        let is = self.imag.shape();
        if rs != is {
            return Err(CoreError::DimMismatch {
                op: "spectrum",
                axis: Axis::Width,
                expected: rs[3],
                got: is[3],
            });
        }
        if half_width(self.source_width) != rs[3] {
            return Err(CoreError::InconsistentSourceWidth {
                source_width: self.source_width,
                stored: rs[3],
            });
        }
        Ok(())
    }
}

// ── 1-D kernels ─────────────────────────────────────────────────────────

fn bit_reverse_permute<T>(re: &mut [T], im: &mut [T]) {
    let n = re.len();
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
}

/// In-place radix-2 transform; `re.len()` must be a power of two.
/// Unnormalized in both directions.
fn fft_pow2<T: Scalar>(re: &mut [T], im: &mut [T], inverse: bool) {
    let n = re.len();
    debug_assert!(n.is_power_of_two());
    if n <= 1 {
        return;
    }
    bit_reverse_permute(re, im);
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut tw_re = Vec::with_capacity(n / 2);
    let mut tw_im = Vec::with_capacity(n / 2);
    for k in 0..n / 2 {
        let ang = sign * 2.0 * PI * k as f64 / n as f64;
        tw_re.push(T::from_f64(libm::cos(ang)));
        tw_im.push(T::from_f64(libm::sin(ang)));
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = n / len;
        let mut start = 0;
        while start < n {
            for k in 0..half {
                let wr = tw_re[k * step];
                let wi = tw_im[k * step];
                let i = start + k;
                let j = i + half;
                let tr = re[j] * wr - im[j] * wi;
                let ti = re[j] * wi + im[j] * wr;
                re[j] = re[i] - tr;
                im[j] = im[i] - ti;
                re[i] += tr;
                im[i] += ti;
            }
            start += len;
        }
        len <<= 1;
    }
}

/// Bluestein chirp-z transform for arbitrary length, via a zero-padded
/// radix-2 circular convolution. Unnormalized in both directions.
fn fft_bluestein<T: Scalar>(re: &mut [T], im: &mut [T], inverse: bool) {
    let n = re.len();
    let m = (2 * n - 1).next_power_of_two();
    let sign = if inverse { 1.0 } else { -1.0 };

    // chirp[k] = exp(sign * i * pi * k^2 / n); k^2 taken mod 2n so the
    // angle stays small regardless of k.
    let mut ch_re = vec![T::ZERO; n];
    let mut ch_im = vec![T::ZERO; n];
    for k in 0..n {
        let kk = (k * k) % (2 * n);
        let ang = sign * PI * kk as f64 / n as f64;
        ch_re[k] = T::from_f64(libm::cos(ang));
        ch_im[k] = T::from_f64(libm::sin(ang));
    }

    let mut ar = vec![T::ZERO; m];
    let mut ai = vec![T::ZERO; m];
    for k in 0..n {
        ar[k] = re[k] * ch_re[k] - im[k] * ch_im[k];
        ai[k] = re[k] * ch_im[k] + im[k] * ch_re[k];
    }

    // b[t] = conj(chirp[|t|]) on t in -(n-1)..=(n-1), wrapped into length m.
    let mut br = vec![T::ZERO; m];
    let mut bi = vec![T::ZERO; m];
    br[0] = ch_re[0];
    bi[0] = -ch_im[0];
    for k in 1..n {
        br[k] = ch_re[k];
        bi[k] = -ch_im[k];
        br[m - k] = br[k];
        bi[m - k] = bi[k];
    }

    fft_pow2(&mut ar, &mut ai, false);
    fft_pow2(&mut br, &mut bi, false);
    for i in 0..m {
        let r = ar[i] * br[i] - ai[i] * bi[i];
        let s = ar[i] * bi[i] + ai[i] * br[i];
        ar[i] = r;
        ai[i] = s;
    }
    fft_pow2(&mut ar, &mut ai, true);

    let inv_m = T::from_f64(1.0 / m as f64);
    for j in 0..n {
        let cr = ar[j] * inv_m;
        let ci = ai[j] * inv_m;
        re[j] = cr * ch_re[j] - ci * ch_im[j];
        im[j] = cr * ch_im[j] + ci * ch_re[j];
    }
}

/// 1-D DFT of any length >= 1, unnormalized, in place.
pub fn fft_1d<T: Scalar>(re: &mut [T], im: &mut [T], inverse: bool) {
    debug_assert_eq!(re.len(), im.len());
    let n = re.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        fft_pow2(re, im, inverse);
    } else {
        fft_bluestein(re, im, inverse);
    }
}

// ── 2-D plane helpers (shared with the autodiff ops) ────────────────────

/// Full 2-D complex transform of an `[h, w]` plane, unnormalized, in place.
pub fn fft2_full<T: Scalar>(re: &mut [T], im: &mut [T], h: usize, w: usize, inverse: bool) {
    debug_assert_eq!(re.len(), h * w);
    // rows
    for y in 0..h {
        fft_1d(&mut re[y * w..(y + 1) * w], &mut im[y * w..(y + 1) * w], inverse);
    }
    // columns, through a gather/scatter buffer
    let mut cr = vec![T::ZERO; h];
    let mut ci = vec![T::ZERO; h];
    for x in 0..w {
        for y in 0..h {
            cr[y] = re[y * w + x];
            ci[y] = im[y * w + x];
        }
        fft_1d(&mut cr, &mut ci, inverse);
        for y in 0..h {
            re[y * w + x] = cr[y];
            im[y * w + x] = ci[y];
        }
    }
}

/// Forward real 2-D transform of one plane; writes the `[h, wf]` half
/// spectrum.
pub fn rfft2_plane<T: Scalar>(x: &[T], h: usize, w: usize, out_re: &mut [T], out_im: &mut [T]) {
    let wf = half_width(w);
    debug_assert_eq!(x.len(), h * w);
    debug_assert_eq!(out_re.len(), h * wf);
    let mut fr = x.to_vec();
    let mut fi = vec![T::ZERO; h * w];
    fft2_full(&mut fr, &mut fi, h, w, false);
    for y in 0..h {
        for v in 0..wf {
            out_re[y * wf + v] = fr[y * w + v];
            out_im[y * wf + v] = fi[y * w + v];
        }
    }
}

/// Expand an `[h, wf]` half spectrum to the full `[h, w]` spectrum using
/// Hermitian symmetry.
fn expand_hermitian<T: Scalar>(
    zre: &[T],
    zim: &[T],
    h: usize,
    wf: usize,
    w: usize,
    fr: &mut [T],
    fi: &mut [T],
) {
    for y in 0..h {
        for v in 0..w {
            if v < wf {
                fr[y * w + v] = zre[y * wf + v];
                fi[y * w + v] = zim[y * wf + v];
            } else {
                let y2 = (h - y) % h;
                let v2 = w - v;
                fr[y * w + v] = zre[y2 * wf + v2];
                fi[y * w + v] = -zim[y2 * wf + v2];
            }
        }
    }
}

/// Inverse real 2-D transform of one plane, with the 1/(h*w) normalization.
pub fn irfft2_plane<T: Scalar>(zre: &[T], zim: &[T], h: usize, w: usize, out: &mut [T]) {
    let wf = half_width(w);
    debug_assert_eq!(zre.len(), h * wf);
    debug_assert_eq!(out.len(), h * w);
    let mut fr = vec![T::ZERO; h * w];
    let mut fi = vec![T::ZERO; h * w];
    expand_hermitian(zre, zim, h, wf, w, &mut fr, &mut fi);
    fft2_full(&mut fr, &mut fi, h, w, true);
    let scale = T::from_f64(1.0 / (h * w) as f64);
    for i in 0..h * w {
        out[i] = fr[i] * scale;
    }
}

/// Adjoint of `rfft2_plane`: maps a half-spectrum cotangent back to the
/// spatial domain. Zero-pads the dropped columns and runs the unnormalized
/// reverse-direction transform; the real part is the input gradient.
pub fn rfft2_adjoint_plane<T: Scalar>(
    dre: &[T],
    dim: &[T],
    h: usize,
    w: usize,
    out: &mut [T],
) {
    let wf = half_width(w);
    let mut fr = vec![T::ZERO; h * w];
    let mut fi = vec![T::ZERO; h * w];
    for y in 0..h {
        for v in 0..wf {
            fr[y * w + v] = dre[y * wf + v];
            fi[y * w + v] = dim[y * wf + v];
        }
    }
    fft2_full(&mut fr, &mut fi, h, w, true);
    out.copy_from_slice(&fr);
}

/// Adjoint of `irfft2_plane`: maps a spatial cotangent to half-spectrum
/// cotangents, folding the mirrored columns back with conjugation and the
/// 1/(h*w) factor of the forward inverse.
pub fn irfft2_adjoint_plane<T: Scalar>(
    dy: &[T],
    h: usize,
    w: usize,
    out_re: &mut [T],
    out_im: &mut [T],
) {
    let wf = half_width(w);
    let mut fr = dy.to_vec();
    let mut fi = vec![T::ZERO; h * w];
    fft2_full(&mut fr, &mut fi, h, w, false);
    let scale = T::from_f64(1.0 / (h * w) as f64);
    for v in out_re.iter_mut() {
        *v = T::ZERO;
    }
    for v in out_im.iter_mut() {
        *v = T::ZERO;
    }
    for y in 0..h {
        for v in 0..w {
            let gr = fr[y * w + v] * scale;
            let gi = fi[y * w + v] * scale;
            if v < wf {
                out_re[y * wf + v] += gr;
                out_im[y * wf + v] += gi;
            } else {
                let y2 = (h - y) % h;
                let v2 = w - v;
                out_re[y2 * wf + v2] += gr;
                out_im[y2 * wf + v2] -= gi;
            }
        }
    }
}

// ── tensor-level API ────────────────────────────────────────────────────

fn check_extents<T: Scalar>(x: &Tensor<T>) -> CoreResult<()> {
    if x.h() == 0 {
        return Err(CoreError::UnsupportedFftSize {
            axis: Axis::Height,
            size: 0,
        });
    }
    if x.w() == 0 {
        return Err(CoreError::UnsupportedFftSize {
            axis: Axis::Width,
            size: 0,
        });
    }
    Ok(())
}

/// Forward unnormalized real 2-D DFT over (H, W) for every (n, c) slice.
/// Bin (0, 0) of each slice equals the spatial sum.
pub fn rfft2<T: Scalar>(x: &Tensor<T>) -> CoreResult<ComplexSpectrum<T>> {
    check_extents(x)?;
    let [n, c, h, w] = x.shape();
    let wf = half_width(w);
    let mut real = Tensor::zeros([n, c, h, wf]);
    let mut imag = Tensor::zeros([n, c, h, wf]);
    for ni in 0..n {
        for ci in 0..c {
            rfft2_plane(
                x.plane(ni, ci),
                h,
                w,
                real.plane_mut(ni, ci),
                imag.plane_mut(ni, ci),
            );
        }
    }
    Ok(ComplexSpectrum {
        real,
        imag,
        source_width: w,
    })
}

/// Inverse of [`rfft2`]; output is purely real by construction and has the
/// spectrum's `source_width`.
pub fn irfft2<T: Scalar>(s: &ComplexSpectrum<T>) -> CoreResult<Tensor<T>> {
    s.check()?;
    let [n, c, h, _] = s.real.shape();
    let w = s.source_width;
    let mut out = Tensor::zeros([n, c, h, w]);
    for ni in 0..n {
        for ci in 0..c {
            irfft2_plane(
                s.real.plane(ni, ci),
                s.imag.plane(ni, ci),
                h,
                w,
                out.plane_mut(ni, ci),
            );
        }
    }
    Ok(out)
}

#[cfg(test)]
mod adjoint_tests {
    use super::*;
    use crate::rng::Rng;

    // <A x, u> == <x, A* u> with the real inner product over (re, im) pairs
    #[test]
    fn rfft2_adjoint_identity() {
        let (h, w) = (4usize, 6usize);
        let wf = half_width(w);
        let mut rng = Rng::new(71);
        let x: alloc::vec::Vec<f64> = (0..h * w).map(|_| rng.range(-1.0, 1.0)).collect();
        let ur: alloc::vec::Vec<f64> = (0..h * wf).map(|_| rng.range(-1.0, 1.0)).collect();
        let ui: alloc::vec::Vec<f64> = (0..h * wf).map(|_| rng.range(-1.0, 1.0)).collect();
        let mut fr = alloc::vec![0.0; h * wf];
        let mut fi = alloc::vec![0.0; h * wf];
        rfft2_plane(&x, h, w, &mut fr, &mut fi);
        let lhs: f64 = fr.iter().zip(&ur).map(|(a, b)| a * b).sum::<f64>()
            + fi.iter().zip(&ui).map(|(a, b)| a * b).sum::<f64>();
        let mut adj = alloc::vec![0.0; h * w];
        rfft2_adjoint_plane(&ur, &ui, h, w, &mut adj);
        let rhs: f64 = adj.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "lhs {lhs} rhs {rhs}");
    }

    #[test]
    fn irfft2_adjoint_identity() {
        let (h, w) = (4usize, 6usize);
        let wf = half_width(w);
        let mut rng = Rng::new(72);
        let zr: alloc::vec::Vec<f64> = (0..h * wf).map(|_| rng.range(-1.0, 1.0)).collect();
        let zi: alloc::vec::Vec<f64> = (0..h * wf).map(|_| rng.range(-1.0, 1.0)).collect();
        let u: alloc::vec::Vec<f64> = (0..h * w).map(|_| rng.range(-1.0, 1.0)).collect();
        let mut y = alloc::vec![0.0; h * w];
        irfft2_plane(&zr, &zi, h, w, &mut y);
        let lhs: f64 = y.iter().zip(&u).map(|(a, b)| a * b).sum();
        let mut ar = alloc::vec![0.0; h * wf];
        let mut ai = alloc::vec![0.0; h * wf];
        irfft2_adjoint_plane(&u, h, w, &mut ar, &mut ai);
        let rhs: f64 = ar.iter().zip(&zr).map(|(a, b)| a * b).sum::<f64>()
            + ai.iter().zip(&zi).map(|(a, b)| a * b).sum::<f64>();
        assert!((lhs - rhs).abs() < 1e-9, "lhs {lhs} rhs {rhs}");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use alloc::vec::Vec;

    /// Direct O((HW)^2) double-sum DFT of one plane, in f64. Independent of
    /// the transform implementation above.
    fn dft2_oracle(x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
        let mut re = vec![0.0; h * w];
        let mut im = vec![0.0; h * w];
        for u in 0..h {
            for v in 0..w {
                let (mut sr, mut si) = (0.0, 0.0);
                for j in 0..h {
                    for k in 0..w {
                        let ang = -2.0 * PI * (u * j) as f64 / h as f64
                            - 2.0 * PI * (v * k) as f64 / w as f64;
                        sr += x[j * w + k] * libm::cos(ang);
                        si += x[j * w + k] * libm::sin(ang);
                    }
                }
                re[u * w + v] = sr;
                im[u * w + v] = si;
            }
        }
        (re, im)
    }

    fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        Tensor::from_fn(shape, |_, _, _, _| rng.range(-1.0, 1.0))
    }

    #[test]
    fn constant_input_has_only_dc() {
        let c = 0.37;
        let x = Tensor::full([1, 1, 8, 8], c);
        let s = rfft2(&x).unwrap();
        assert!((s.real.at(0, 0, 0, 0) - 64.0 * c).abs() < 1e-5);
        for y in 0..8 {
            for v in 0..5 {
                if y == 0 && v == 0 {
                    continue;
                }
                assert!(s.real.at(0, 0, y, v).abs() < 1e-5);
                assert!(s.imag.at(0, 0, y, v).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn impulse_at_origin_is_flat() {
        let mut x = Tensor::zeros([1, 1, 8, 8]);
        x.set(0, 0, 0, 0, 1.0f64);
        let s = rfft2(&x).unwrap();
        for y in 0..8 {
            for v in 0..5 {
                assert!((s.real.at(0, 0, y, v) - 1.0).abs() < 1e-9);
                assert!(s.imag.at(0, 0, y, v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn matches_direct_dft_oracle_on_all_small_sizes() {
        for h in 1..=16usize {
            for w in 1..=16usize {
                let x = random_tensor([1, 1, h, w], (h * 31 + w) as u64);
                let s = rfft2(&x).unwrap();
                let (ore, oim) = dft2_oracle(x.plane(0, 0), h, w);
                let wf = half_width(w);
                for u in 0..h {
                    for v in 0..wf {
                        let dr = (s.real.at(0, 0, u, v) - ore[u * w + v]).abs();
                        let di = (s.imag.at(0, 0, u, v) - oim[u * w + v]).abs();
                        assert!(dr < 1e-4 && di < 1e-4, "h={h} w={w} u={u} v={v}: {dr} {di}");
                    }
                }
            }
        }
    }

    #[test]
    fn round_trip_is_identity() {
        for &(h, w) in &[(8usize, 8usize), (4, 6), (8, 12), (5, 7), (16, 16), (1, 9)] {
            let x = random_tensor([2, 3, h, w], (h * 100 + w) as u64);
            let y = irfft2(&rfft2(&x).unwrap()).unwrap();
            assert!(x.max_abs_diff(&y) < 1e-5, "h={h} w={w}: {}", x.max_abs_diff(&y));
        }
    }

    #[test]
    fn dc_only_spectrum_inverts_to_constant_one() {
        let (h, w) = (8usize, 8usize);
        let mut real = Tensor::zeros([1, 1, h, half_width(w)]);
        real.set(0, 0, 0, 0, (h * w) as f64);
        let s = ComplexSpectrum {
            real,
            imag: Tensor::zeros([1, 1, h, half_width(w)]),
            source_width: w,
        };
        let y = irfft2(&s).unwrap();
        for v in y.data() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn parseval_over_expanded_spectrum() {
        for &(h, w) in &[(8usize, 8usize), (6, 10), (7, 5)] {
            let x = random_tensor([1, 2, h, w], (h + w) as u64);
            let s = rfft2(&x).unwrap();
            let wf = half_width(w);
            for c in 0..2 {
                let spatial: f64 = x.plane(0, c).iter().map(|v| v * v).sum();
                // expand the Hermitian half to the full spectrum and sum |X|^2
                let mut spectral = 0.0;
                for u in 0..h {
                    for v in 0..w {
                        let (re, im) = if v < wf {
                            (s.real.at(0, c, u, v), s.imag.at(0, c, u, v))
                        } else {
                            let u2 = (h - u) % h;
                            let v2 = w - v;
                            (s.real.at(0, c, u2, v2), -s.imag.at(0, c, u2, v2))
                        };
                        spectral += re * re + im * im;
                    }
                }
                let rel = (spatial - spectral / (h * w) as f64).abs() / spatial.abs();
                assert!(rel < 1e-5, "h={h} w={w} c={c}: rel {rel}");
            }
        }
    }

    #[test]
    fn transform_is_linear() {
        let (h, w) = (8usize, 8usize);
        let x = random_tensor([1, 1, h, w], 5);
        let y = random_tensor([1, 1, h, w], 6);
        let (a, b) = (1.7f64, -0.4f64);
        let mix = Tensor::from_fn([1, 1, h, w], |n, c, i, j| a * x.at(n, c, i, j) + b * y.at(n, c, i, j));
        let sm = rfft2(&mix).unwrap();
        let sx = rfft2(&x).unwrap();
        let sy = rfft2(&y).unwrap();
        for u in 0..h {
            for v in 0..half_width(w) {
                let er = a * sx.real.at(0, 0, u, v) + b * sy.real.at(0, 0, u, v);
                let ei = a * sx.imag.at(0, 0, u, v) + b * sy.imag.at(0, 0, u, v);
                assert!((sm.real.at(0, 0, u, v) - er).abs() < 1e-5);
                assert!((sm.imag.at(0, 0, u, v) - ei).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn zero_extent_is_rejected() {
        let x = Tensor::<f64>::zeros([1, 1, 0, 4]);
        assert!(matches!(
            rfft2(&x),
            Err(CoreError::UnsupportedFftSize { axis: Axis::Height, size: 0 })
        ));
    }

    #[test]
    fn inconsistent_source_width_is_rejected() {
        let s = ComplexSpectrum {
            real: Tensor::<f64>::zeros([1, 1, 4, 3]),
            imag: Tensor::zeros([1, 1, 4, 3]),
            source_width: 8, // would need wf = 5
        };
        assert!(matches!(
            irfft2(&s),
            Err(CoreError::InconsistentSourceWidth { .. })
        ));
    }

    #[test]
    fn frequency_multiply_equals_circular_convolution() {
        // Convolution theorem: pointwise multiply of half spectra equals
        // circular convolution in space. Brute-force oracle on 8x8.
        let (h, w) = (8usize, 8usize);
        let x = random_tensor([1, 1, h, w], 42);
        let k = random_tensor([1, 1, h, w], 43);

        // direct circular convolution
        let mut direct = vec![0.0f64; h * w];
        for m in 0..h {
            for n in 0..w {
                let mut acc = 0.0;
                for p in 0..h {
                    for q in 0..w {
                        let km = (m + h - p) % h;
                        let kn = (n + w - q) % w;
                        acc += x.at(0, 0, p, q) * k.at(0, 0, km, kn);
                    }
                }
                direct[m * w + n] = acc;
            }
        }

        // frequency route
        let sx = rfft2(&x).unwrap();
        let sk = rfft2(&k).unwrap();
        let wf = half_width(w);
        let mut pre = Tensor::zeros([1, 1, h, wf]);
        let mut pim = Tensor::zeros([1, 1, h, wf]);
        for u in 0..h {
            for v in 0..wf {
                let (ar, ai) = (sx.real.at(0, 0, u, v), sx.imag.at(0, 0, u, v));
                let (br, bi) = (sk.real.at(0, 0, u, v), sk.imag.at(0, 0, u, v));
                pre.set(0, 0, u, v, ar * br - ai * bi);
                pim.set(0, 0, u, v, ar * bi + ai * br);
            }
        }
        let y = irfft2(&ComplexSpectrum {
            real: pre,
            imag: pim,
            source_width: w,
        })
        .unwrap();
        for m in 0..h {
            for n in 0..w {
                assert!(
                    (y.at(0, 0, m, n) - direct[m * w + n]).abs() < 1e-4,
                    "({m},{n})"
                );
            }
        }
    }
}
