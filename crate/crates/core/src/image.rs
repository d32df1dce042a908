use crate::scalar::{c, cu, Scalar};

/// Interleaved multi-channel image with values nominally in `[0, 1]`.
///
/// Pixel `(x, y)` is column `x`, row `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<S> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<S>,
}

impl<S: Scalar> Image<S> {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<S>) -> Option<Self> {
        if width == 0 || height == 0 || channels == 0 || data.len() != width * height * channels {
            return None;
        }
        Some(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: S) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    /// Builds an image from a per-pixel closure returning `channels` values.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, &mut [S]),
    ) -> Self {
        let mut data = vec![S::zero(); width * height * channels];
        for y in 0..height {
            for x in 0..width {
                let o = (y * width + x) * channels;
                f(x, y, &mut data[o..o + channels]);
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, ch: usize) -> S {
        self.data[(y * self.width + x) * self.channels + ch]
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[S] {
        let o = (y * self.width + x) * self.channels;
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, ch: usize, v: S) {
        self.data[(y * self.width + x) * self.channels + ch] = v;
    }

    /// Access with coordinates clamped to the image (replicate edge).
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize, ch: usize) -> S {
        let xi = x.clamp(0, self.width as isize - 1) as usize;
        let yi = y.clamp(0, self.height as isize - 1) as usize;
        self.get(xi, yi, ch)
    }

    /// Periodic access.
    #[inline]
    pub fn get_wrapped(&self, x: isize, y: isize, ch: usize) -> S {
        let xi = x.rem_euclid(self.width as isize) as usize;
        let yi = y.rem_euclid(self.height as isize) as usize;
        self.get(xi, yi, ch)
    }

    /// Bilinear sample at continuous pixel coordinates with replicate-edge fill.
    pub fn sample_bilinear(&self, x: S, y: S, out: &mut [S]) {
        let x0f = x.floor();
        let y0f = y.floor();
        let fx = x - x0f;
        let fy = y - y0f;
        let x0 = x0f.to_isize().unwrap_or(0);
        let y0 = y0f.to_isize().unwrap_or(0);
        for (ch, o) in out.iter_mut().enumerate().take(self.channels) {
            let a = self.get_clamped(x0, y0, ch);
            let b = self.get_clamped(x0 + 1, y0, ch);
            let cc = self.get_clamped(x0, y0 + 1, ch);
            let d = self.get_clamped(x0 + 1, y0 + 1, ch);
            let top = a + (b - a) * fx;
            let bot = cc + (d - cc) * fx;
            *o = top + (bot - top) * fy;
        }
    }

    /// Luminance (Rec. 601 weights for 3 channels, channel mean otherwise), row-major.
    pub fn luminance(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.width * self.height);
        for px in self.data.chunks(self.channels) {
            let v = if self.channels == 3 {
                c::<S>(0.299) * px[0] + c::<S>(0.587) * px[1] + c::<S>(0.114) * px[2]
            } else {
                px.iter().copied().sum::<S>() / cu::<S>(self.channels)
            };
            out.push(v);
        }
        out
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Crops a square-ish region centred at `(cx, cy)` of size `src_w × src_h`
    /// image pixels and resamples it bilinearly to `out_w × out_h`.
    pub fn extract_patch(&self, cx: S, cy: S, src_w: S, src_h: S, out_w: usize, out_h: usize) -> Self {
        let half = c::<S>(0.5);
        let sx = src_w / cu::<S>(out_w);
        let sy = src_h / cu::<S>(out_h);
        let mut px = vec![S::zero(); self.channels];
        Image::from_fn(out_w, out_h, self.channels, |x, y, dst| {
            let ix = cx + (cu::<S>(x) + half - cu::<S>(out_w) * half) * sx - half;
            let iy = cy + (cu::<S>(y) + half - cu::<S>(out_h) * half) * sy - half;
            self.sample_bilinear(ix, iy, &mut px);
            dst.copy_from_slice(&px);
        })
    }
}
