use ndarray::Array2;

use crate::error::{Error, Result};

use super::{MelPcenGram, SpectrogramConfig};

/// IIR smoothing coefficient `s` for the PCEN smoother, from the time
/// constant expressed in frames.
pub fn pcen_smoothing_coefficient(config: &SpectrogramConfig) -> f64 {
    let t_frames =
        config.pcen_time_constant * f64::from(config.sample_rate) / config.hop_length as f64;
    ((1.0 + 4.0 * t_frames * t_frames).sqrt() - 1.0) / (2.0 * t_frames * t_frames)
}

/// Per-channel energy normalization of a `(n_frames, n_bands)` energy matrix.
///
/// Each band is smoothed with `M[t] = (1-s) M[t-1] + s E[t]`, `M[0] = E[0]`,
/// and mapped to `(E / (eps + M)^gain + bias)^power - bias^power`.
pub fn pcen(mel: &Array2<f64>, config: &SpectrogramConfig) -> Result<MelPcenGram> {
    config.validate()?;
    if let Some(bad) = mel.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!(
            "PCEN input must be finite and nonnegative, found {bad}"
        )));
    }
    let s = pcen_smoothing_coefficient(config);
    let (n_frames, n_bands) = mel.dim();
    let bias_pow = config.pcen_bias.powf(config.pcen_power);
    let mut smooth: Vec<f64> = if n_frames > 0 {
        mel.row(0).to_vec()
    } else {
        vec![0.0; n_bands]
    };
    let mut frames = Array2::<f32>::zeros((n_frames, n_bands));

    for t in 0..n_frames {
        for f in 0..n_bands {
            let e = mel[[t, f]];
            if t > 0 {
                smooth[f] = (1.0 - s) * smooth[f] + s * e;
            }
            let gain = (-config.pcen_gain * (config.pcen_eps + smooth[f]).ln()).exp();
            let v = (e * gain + config.pcen_bias).powf(config.pcen_power) - bias_pow;
            frames[[t, f]] = v.max(0.0) as f32;
        }
    }

    Ok(MelPcenGram {
        frames,
        hop_length: config.hop_length,
        sample_rate: config.sample_rate,
        source_path: String::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SpectrogramConfig {
        SpectrogramConfig::default()
    }

    #[test]
    fn zeros_map_to_zeros() {
        let g = pcen(&Array2::zeros((10, 4)), &cfg()).unwrap();
        assert!(g.frames.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn negative_energy_is_domain_error() {
        let mut m = Array2::zeros((3, 2));
        m[[1, 1]] = -1.0;
        assert!(matches!(pcen(&m, &cfg()), Err(Error::Domain(_))));
    }

    #[test]
    fn constant_input_matches_scalar_recurrence() {
        let c = cfg();
        let e = 3.7e12;
        let n = 400;
        let g = pcen(&Array2::from_elem((n, 2), e), &c).unwrap();
        // scalar oracle of the same recurrence
        let s = pcen_smoothing_coefficient(&c);
        let mut m = e;
        let mut last = 0.0;
        for t in 0..n {
            if t > 0 {
                m = (1.0 - s) * m + s * e;
            }
            last = (e / (c.pcen_eps + m).powf(c.pcen_gain) + c.pcen_bias).powf(c.pcen_power)
                - c.pcen_bias.powf(c.pcen_power);
        }
        let limit = (e / (c.pcen_eps + e).powf(c.pcen_gain) + c.pcen_bias).powf(c.pcen_power)
            - c.pcen_bias.powf(c.pcen_power);
        let got = f64::from(g.frames[[n - 1, 0]]);
        assert!((got - last).abs() <= 1e-6 * last.abs().max(1.0));
        assert!((got - limit).abs() <= 1e-6 * limit.abs().max(1.0));
    }

    #[test]
    fn smoothing_coefficient_default() {
        let c = cfg();
        let t: f64 = 0.4 * 22050.0 / 256.0;
        let expect = ((1.0 + 4.0 * t * t).sqrt() - 1.0) / (2.0 * t * t);
        assert_eq!(pcen_smoothing_coefficient(&c), expect);
        assert!(expect > 0.0 && expect < 1.0);
    }
}
