//! Global histogram equalization, one channel at a time.

use crate::dataset::PatchSample;
use crate::error::{Error, Result};

/// Lookup table `k -> round((L-1) * CDF(k))` fitted on one histogram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Equalizer {
    lut: Vec<u16>,
}

impl Equalizer {
    /// Fits on the given samples. `levels` is L, at most 65536.
    pub fn fit(values: impl IntoIterator<Item = u16>, levels: u32) -> Result<Self> {
        if levels == 0 || levels > 65536 {
            return Err(Error::Config(format!("levels must be in 1..=65536, got {levels}")));
        }
        let mut hist = vec![0u64; levels as usize];
        let mut total = 0u64;
        for v in values {
            let slot = hist
                .get_mut(v as usize)
                .ok_or_else(|| Error::Domain(format!("intensity {v} >= L = {levels}")))?;
            *slot += 1;
            total += 1;
        }
        let top = (levels - 1) as u128;
        let n = total.max(1) as u128;
        let mut cum = 0u128;
        let lut = hist
            .iter()
            .map(|&count| {
                cum += count as u128;
                // round half up of top * cum / n, in exact integer arithmetic
                ((2 * top * cum + n) / (2 * n)) as u16
            })
            .collect();
        Ok(Self { lut })
    }

    pub fn levels(&self) -> usize {
        self.lut.len()
    }

    pub fn map(&self, v: u16) -> Result<u16> {
        self.lut
            .get(v as usize)
            .copied()
            .ok_or_else(|| Error::Domain(format!("intensity {v} >= L = {}", self.lut.len())))
    }

    pub fn lut(&self) -> &[u16] {
        &self.lut
    }
}

/// Equalizes one channel of intensities in `[0, L-1]`.
pub fn equalize_histogram(band: &[u16], levels: u32) -> Result<Vec<u16>> {
    let eq = Equalizer::fit(band.iter().copied(), levels)?;
    band.iter().map(|&v| eq.map(v)).collect()
}

fn as_level(v: f32, levels: u32) -> Result<u16> {
    if v.fract() != 0.0 || v < 0.0 || v >= levels as f32 {
        return Err(Error::Domain(format!("value {v} is not an integer level below {levels}")));
    }
    Ok(v as u16)
}

/// Equalizes a raw integer-valued band in place. The histogram is fitted on
/// pixels where `fit_on` is true; every pixel is remapped.
pub fn equalize_raw_band(band: &mut [f32], levels: u32, fit_on: &[bool]) -> Result<()> {
    let levels_in = band
        .iter()
        .map(|&v| as_level(v, levels))
        .collect::<Result<Vec<u16>>>()?;
    let eq = Equalizer::fit(
        levels_in
            .iter()
            .zip(fit_on)
            .filter(|(_, &keep)| keep)
            .map(|(&v, _)| v),
        levels,
    )?;
    for (dst, &v) in band.iter_mut().zip(&levels_in) {
        *dst = eq.map(v)? as f32;
    }
    Ok(())
}

/// Equalization for real-valued (already standardized) channels: values are
/// quantized into `bins` uniform bins between the channel min and max, then
/// equalized with `L = bins` and rescaled to `[0, 1]`.
pub fn equalize_quantized(values: &mut [f32], bins: u32) -> Result<()> {
    if !(2..=65536).contains(&bins) {
        return Err(Error::Config(format!("bins must be in 2..=65536, got {bins}")));
    }
    let (lo, hi) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if values.is_empty() || !lo.is_finite() || !hi.is_finite() {
        return Ok(());
    }
    let span = (hi - lo) as f64;
    let q: Vec<u16> = values
        .iter()
        .map(|&v| {
            if span == 0.0 {
                0
            } else {
                (((v - lo) as f64 / span * bins as f64).floor() as u32).min(bins - 1) as u16
            }
        })
        .collect();
    let eq = Equalizer::fit(q.iter().copied(), bins)?;
    let top = (bins - 1) as f32;
    for (dst, &l) in values.iter_mut().zip(&q) {
        *dst = eq.map(l)? as f32 / top;
    }
    Ok(())
}

/// Quantized equalization of every channel of both dates except those named
/// in `skip` (the NDVI channel is never equalized).
pub fn equalize_sample_quantized(sample: &mut PatchSample, bins: u32, skip: &[&str]) -> Result<()> {
    let n = sample.height * sample.width;
    for k in 0..sample.channels {
        let name = sample.meta.band_names.get(k).map(String::as_str).unwrap_or("");
        if skip.contains(&name) {
            continue;
        }
        equalize_quantized(&mut sample.img1[k * n..(k + 1) * n], bins)?;
        equalize_quantized(&mut sample.img2[k * n..(k + 1) * n], bins)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_image_maps_to_top_level() {
        assert_eq!(equalize_histogram(&[7; 20], 256).unwrap(), vec![255; 20]);
    }

    #[test]
    fn two_value_fixture() {
        let mut img = vec![10u16; 50];
        img.extend(vec![200u16; 50]);
        let out = equalize_histogram(&img, 256).unwrap();
        assert_eq!(out[0], 128);
        assert_eq!(out[99], 255);
    }

    #[test]
    fn uniform_histogram() {
        let img: Vec<u16> = (0..256).collect();
        let out = equalize_histogram(&img, 256).unwrap();
        for k in 0..256usize {
            let expected = (255.0 * (k + 1) as f64 / 256.0).round() as u16;
            assert_eq!(out[k], expected, "k={k}");
        }
    }

    #[test]
    fn out_of_range_is_domain_error() {
        assert!(matches!(equalize_histogram(&[1, 256], 256), Err(Error::Domain(_))));
    }

    #[test]
    fn raw_band_fit_excludes_masked_pixels() {
        let mut band = vec![0.0, 0.0, 100.0, 200.0];
        equalize_raw_band(&mut band, 65536, &[false, false, true, true]).unwrap();
        // the two excluded zeros do not contribute to the CDF
        assert_eq!(band, vec![0.0, 0.0, 32768.0, 65535.0]);
        assert!(equalize_raw_band(&mut [1.5], 65536, &[true]).is_err());
    }

    #[test]
    fn quantized_mode_is_monotone_and_bounded() {
        let mut v: Vec<f32> = (0..500).map(|i| ((i * 7919) % 500) as f32 / 50.0 - 5.0).collect();
        let orig = v.clone();
        equalize_quantized(&mut v, 4096).unwrap();
        assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
        for i in 0..v.len() {
            for j in 0..v.len() {
                if orig[i] < orig[j] {
                    assert!(v[i] <= v[j]);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn mapping_is_monotone(img in proptest::collection::vec(0u16..=u16::MAX, 1..400)) {
            let eq = Equalizer::fit(img.iter().copied(), 65536).unwrap();
            prop_assert!(eq.lut().windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn permuting_pixels_permutes_outputs(img in proptest::collection::vec(0u16..64, 2..200), rot in 0usize..200) {
            let out = equalize_histogram(&img, 64).unwrap();
            let r = rot % img.len();
            let mut rotated = img.clone();
            rotated.rotate_left(r);
            let mut expected = out.clone();
            expected.rotate_left(r);
            prop_assert_eq!(equalize_histogram(&rotated, 64).unwrap(), expected);
        }

        #[test]
        fn equalization_is_idempotent(img in proptest::collection::vec(0u16..256, 1..300)) {
            let once = equalize_histogram(&img, 256).unwrap();
            let twice = equalize_histogram(&once, 256).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
