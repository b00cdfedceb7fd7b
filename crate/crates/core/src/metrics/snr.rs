use crate::error::{Error, Result};
use crate::image::Image;

/// `(P_n, 10 log10(P_s / P_n))` where `P_s` is the mean and `P_n` the
/// population standard deviation of `values`.
pub fn snr_of_values(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    if std == 0.0 {
        return Err(Error::InfiniteSnr);
    }
    if mean <= 0.0 {
        return Err(Error::NonPositiveSignal(mean));
    }
    Ok((std, 10.0 * (mean / std).log10()))
}

/// Noise level and SNR of an image on its 8-bit `[0, 255]` representation.
pub fn snr(img: &Image) -> Result<(f64, f64)> {
    let values: Vec<f64> = img.to_u8().into_iter().map(f64::from).collect();
    snr_of_values(&values)
}

/// Mean noise and mean SNR over a set of images.
pub fn average_snr(images: &[Image]) -> Result<(f64, f64)> {
    if images.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let mut noise = 0.0;
    let mut db = 0.0;
    for img in images {
        let (n, s) = snr(img)?;
        noise += n;
        db += s;
    }
    let k = images.len() as f64;
    Ok((noise / k, db / k))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_to_one_is_ten_decibels() {
        let img = Image::from_fn(8, 8, |x, y| if (x + y) % 2 == 0 { 90.0 / 255.0 } else { 110.0 / 255.0 });
        let (noise, db) = snr(&img).unwrap();
        assert_eq!(noise, 10.0);
        assert_eq!(db, 10.0);
    }

    #[test]
    fn equal_signal_and_noise_is_zero_decibels() {
        let img = Image::from_fn(8, 8, |x, _| if x % 2 == 0 { 0.0 } else { 200.0 / 255.0 });
        let (noise, db) = snr(&img).unwrap();
        assert_eq!(noise, 100.0);
        assert_eq!(db, 0.0);
    }

    #[test]
    fn degenerate_images() {
        assert!(matches!(snr(&Image::filled(4, 4, 0.5)), Err(Error::InfiniteSnr)));
        assert!(matches!(snr_of_values(&[-1.0, 1.0, -1.0, 0.0]), Err(Error::NonPositiveSignal(_))));
        assert!(snr_of_values(&[]).is_err());
    }

    #[test]
    fn table_two_row_is_self_consistent() {
        // Noise 23.285 at 7.170 dB implies a mean of 23.285 * 10^0.717.
        let implied_mean = 23.285 * 10f64.powf(0.717);
        assert!((implied_mean - 121.36).abs() < 0.01);
        let values = [implied_mean - 23.285, implied_mean + 23.285];
        let (noise, db) = snr_of_values(&values).unwrap();
        assert!((noise - 23.285).abs() < 1e-12);
        assert!((db - 7.170).abs() < 1e-9);
    }

    #[test]
    fn snr_falls_as_noise_grows() {
        let base = Image::from_fn(32, 32, |x, y| 0.3 + 0.2 * ((x + y) % 3) as f64 / 2.0);
        let mut rng = crate::seed::rng(4);
        let z = crate::seed::normals(&mut rng, 32 * 32);
        let mut prev = f64::INFINITY;
        for k in 0..6 {
            let s = 0.02 * k as f64;
            let noisy = Image::new(32, 32, base.pixels().iter().zip(&z).map(|(p, n)| p + s * n).collect()).unwrap();
            let (_, db) = snr(&noisy).unwrap();
            assert!(db < prev);
            prev = db;
        }
    }
}
