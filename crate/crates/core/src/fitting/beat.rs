use num_complex::Complex64 as C64;
use rustfft::FftPlanner;

use crate::trace::{uniform_spacing, CorrelationTrace};

/// Dominant beat angular frequency (rad/ns) of a correlation trace, or `None`
/// when no oscillation with at least two periods on the τ ≥ 0 side is found.
///
/// The plateau (mean of the last fifth of the trace) is subtracted and the
/// cosine transform of the τ ≥ 0 part is scanned for its strongest positive
/// local maximum, refined by a parabola through the neighbouring samples.
pub fn beat_frequency_estimate(trace: &CorrelationTrace) -> Option<f64> {
    let h = uniform_spacing(&trace.tau).ok()?;
    let start = trace.tau.partition_point(|t| *t < -0.5 * h);
    let tau = &trace.tau[start..];
    let g2 = &trace.g2[start..];
    let n = tau.len();
    if n < 16 {
        return None;
    }
    let tail = (n / 5).max(1);
    let plateau = g2[n - tail..].iter().sum::<f64>() / tail as f64;
    let span = tau[n - 1] - tau[0] + h;

    // zero-padding by 8 gives a frequency step of π/(4 span)
    let m = (8 * n).next_power_of_two();
    let mut buf: Vec<C64> = g2.iter().map(|g| C64::new(g - plateau, 0.0)).collect();
    buf.resize(m, C64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    let dw = 2.0 * std::f64::consts::PI / (m as f64 * h);
    let t0 = tau[0];
    let spectrum: Vec<f64> = buf[..m / 2]
        .iter()
        .enumerate()
        .map(|(k, x)| (C64::from_polar(1.0, -(k as f64) * dw * t0) * x).re * h)
        .collect();

    let w_min = 4.0 * std::f64::consts::PI / span;
    let mut best: Option<(usize, f64)> = None;
    for k in 1..spectrum.len() - 1 {
        let f = spectrum[k];
        if k as f64 * dw < w_min || f <= 0.0 {
            continue;
        }
        if f > spectrum[k - 1] && f >= spectrum[k + 1] && best.is_none_or(|(_, b)| f > b) {
            best = Some((k, f));
        }
    }
    let (k, _) = best?;
    let (a, b, c) = (spectrum[k - 1], spectrum[k], spectrum[k + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom < 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
    Some((k as f64 + shift.clamp(-0.5, 0.5)) * dw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::{g2_model, AnalyticG2Params};
    use crate::trace::uniform_grid;
    use crate::units::energy_to_detuning;

    fn synthetic(delta_uev: f64) -> CorrelationTrace {
        let tau = uniform_grid(-10.0, 10.0, 0.0025).unwrap();
        let p = AnalyticG2Params::from_parts(&[1.0, 1.0], &[3.0, 3.0], &[0.0, energy_to_detuning(delta_uev)])
            .unwrap();
        g2_model(&p, &tau, 0.035).unwrap()
    }

    #[test]
    fn no_beat_without_detuning() {
        let tau = uniform_grid(0.0, 10.0, 0.0025).unwrap();
        let g2 = tau.iter().map(|t| 1.0 - (-2.0 * t).exp()).collect();
        let tr = CorrelationTrace::new(tau, g2, None).unwrap();
        assert_eq!(beat_frequency_estimate(&tr), None);
    }

    #[test]
    fn recovers_detunings() {
        for (uev, w) in [(19.1, 29.02), (9.5, 14.43)] {
            let est = beat_frequency_estimate(&synthetic(uev)).unwrap();
            assert!(((est - w) / w).abs() < 0.05, "{uev} ueV: {est}");
        }
    }
}
