//! Unitary 2D DFT with the zero frequency at the array center
//! (`(width / 2, height / 2)`), built on row and column passes of
//! `rustfft`.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Complex 2D array, row-major. When holding a spectrum, index `(u, v)`
/// corresponds to frequency `((u - width/2) / width, (v - height/2) / height)`
/// in cycles per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid2 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Complex64>,
}

impl Grid2 {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![Complex64::new(0.0, 0.0); width * height],
        }
    }

    pub fn from_real(width: usize, height: usize, values: &[f64]) -> Self {
        assert_eq!(values.len(), width * height);
        Self {
            width,
            height,
            data: values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    pub fn real(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.re).collect()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Complex64 {
        self.data[y * self.width + x]
    }

    /// Frequency (cycles per sample) of spectrum index `(u, v)`.
    #[inline]
    pub fn freq(&self, u: usize, v: usize) -> (f64, f64) {
        (
            (u as f64 - (self.width / 2) as f64) / self.width as f64,
            (v as f64 - (self.height / 2) as f64) / self.height as f64,
        )
    }
}

fn roll(g: &Grid2, sx: usize, sy: usize) -> Grid2 {
    let (w, h) = (g.width, g.height);
    let mut out = Grid2::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            out.data[((y + sy) % h) * w + (x + sx) % w] = g.data[y * w + x];
        }
    }
    out
}

fn transform(g: &mut Grid2, inverse: bool) {
    let (w, h) = (g.width, g.height);
    let mut planner = FftPlanner::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    row.process(&mut g.data);
    let mut column = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = g.data[y * w + x];
        }
        col.process(&mut column);
        for y in 0..h {
            g.data[y * w + x] = column[y];
        }
    }
    let scale = 1.0 / ((w * h) as f64).sqrt();
    g.data.iter_mut().for_each(|c| *c *= scale);
}

/// Forward unitary DFT, output DC-centered.
pub fn fft2(g: &Grid2) -> Grid2 {
    let mut out = g.clone();
    transform(&mut out, false);
    roll(&out, g.width / 2, g.height / 2)
}

/// Inverse of [`fft2`].
pub fn ifft2(spectrum: &Grid2) -> Grid2 {
    let (w, h) = (spectrum.width, spectrum.height);
    let mut out = roll(spectrum, w - w / 2, h - h / 2);
    transform(&mut out, true);
    out
}

/// Embeds a centered spectrum in a larger (`new_w` x `new_h`) centered
/// spectrum, zero elsewhere. Even-sized inputs split the Nyquist row and
/// column symmetrically so real signals stay real.
pub fn zero_pad_spectrum(s: &Grid2, new_w: usize, new_h: usize) -> Grid2 {
    assert!(new_w >= s.width && new_h >= s.height);
    let mut out = Grid2::zeros(new_w, new_h);
    let (cx, cy) = ((s.width / 2) as isize, (s.height / 2) as isize);
    let (ox, oy) = ((new_w / 2) as isize, (new_h / 2) as isize);
    let grow_x = new_w > s.width && s.width % 2 == 0;
    let grow_y = new_h > s.height && s.height % 2 == 0;
    for v in 0..s.height {
        for u in 0..s.width {
            let val = s.get(u, v);
            let (du, dv) = (u as isize - cx, v as isize - cy);
            let xs: Vec<(isize, f64)> = if grow_x && du == -cx { vec![(-cx, 0.5), (cx, 0.5)] } else { vec![(du, 1.0)] };
            let ys: Vec<(isize, f64)> = if grow_y && dv == -cy { vec![(-cy, 0.5), (cy, 0.5)] } else { vec![(dv, 1.0)] };
            for &(dx, wx) in &xs {
                for &(dy, wy) in &ys {
                    let idx = ((oy + dy) as usize) * new_w + (ox + dx) as usize;
                    out.data[idx] += val * (wx * wy);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn round_trip_and_parseval() {
        let (w, h) = (12, 9);
        let vals: Vec<f64> = (0..w * h).map(|i| ((i * 37) % 11) as f64 - 3.0).collect();
        let g = Grid2::from_real(w, h, &vals);
        let s = fft2(&g);
        let energy: f64 = vals.iter().map(|v| v * v).sum();
        let spec_energy: f64 = s.data.iter().map(|c| c.norm_sqr()).sum();
        assert!((energy - spec_energy).abs() < 1e-9 * energy);
        let back = ifft2(&s);
        for (a, b) in back.data.iter().zip(&vals) {
            assert!((a.re - b).abs() < 1e-12 && a.im.abs() < 1e-12);
        }
    }

    #[test]
    fn dc_is_centered() {
        let g = Grid2::from_real(8, 6, &[2.0; 48]);
        let s = fft2(&g);
        let dc = s.get(4, 3);
        assert!((dc.re - 2.0 * 48f64.sqrt()).abs() < 1e-12);
        assert!(s.data.iter().enumerate().all(|(i, c)| i == 3 * 8 + 4 || c.norm() < 1e-12));
    }

    #[test]
    fn sinusoid_lands_on_its_frequency() {
        let (w, h) = (16, 16);
        let vals: Vec<f64> = (0..w * h)
            .map(|i| (2.0 * PI * (3.0 * (i % w) as f64 / 16.0 + 2.0 * (i / w) as f64 / 16.0)).cos())
            .collect();
        let s = fft2(&Grid2::from_real(w, h, &vals));
        let (u, v) = (8 + 3, 8 + 2);
        assert!(s.get(u, v).norm() > 7.9);
        assert_eq!(s.freq(u, v), (3.0 / 16.0, 2.0 / 16.0));
    }

    #[test]
    fn zero_padding_interpolates() {
        let (w, h) = (10, 10);
        let f = |x: f64, y: f64| (2.0 * PI * (0.2 * x + 0.1 * y)).sin() + 0.5;
        let vals: Vec<f64> = (0..w * h).map(|i| f((i % w) as f64, (i / w) as f64)).collect();
        let s = fft2(&Grid2::from_real(w, h, &vals));
        let big = ifft2(&zero_pad_spectrum(&s, 30, 30));
        let scale = 3.0; // unitary normalization: sqrt(900 / 100)
        for y in 0..30 {
            for x in 0..30 {
                let v = big.get(x, y);
                assert!((v.re * scale - f(x as f64 / 3.0, y as f64 / 3.0)).abs() < 1e-10);
                assert!(v.im.abs() < 1e-10);
            }
        }
    }
}
