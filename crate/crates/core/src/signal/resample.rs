use ndarray::Array2;

use super::TimeSeriesWindow;
use crate::error::{Error, Result};

/// Resamples a window to `target_hz` by linear interpolation on the original
/// time grid. The output has `round(T · target_hz / in_hz)` rows.
pub fn resample(window: &TimeSeriesWindow, target_hz: f64) -> Result<TimeSeriesWindow> {
    if !(target_hz > 0.0 && target_hz.is_finite()) {
        return Err(Error::invalid(format!("target rate must be positive, got {target_hz}")));
    }
    if window.is_empty() {
        return Err(Error::invalid("cannot resample an empty window"));
    }
    let x = window.samples();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{} window passed to resample", window.modality())));
    }
    let in_hz = window.sample_rate_hz();
    let t_in = x.nrows();
    let t_out = (t_in as f64 * target_hz / in_hz).round() as usize;
    let ratio = in_hz / target_hz;
    let last = (t_in - 1) as f64;

    let mut out = Array2::<f32>::zeros((t_out, x.ncols()));
    for (k, mut row) in out.rows_mut().into_iter().enumerate() {
        let pos = (k as f64 * ratio).min(last);
        let i0 = pos.floor() as usize;
        let frac = pos - i0 as f64;
        if frac == 0.0 || i0 + 1 >= t_in {
            row.assign(&x.row(i0));
        } else {
            for c in 0..x.ncols() {
                let a = x[[i0, c]] as f64;
                let b = x[[i0 + 1, c]] as f64;
                row[c] = (a + (b - a) * frac) as f32;
            }
        }
    }
    Ok(TimeSeriesWindow::from_parts(out, target_hz, window.modality()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Modality;
    use ndarray::Array2;
    use proptest::prelude::*;

    #[test]
    fn accel_32hz_to_50hz() {
        let w = TimeSeriesWindow::new(Array2::zeros((256, 3)), 32.0, Modality::Accel).unwrap();
        let r = resample(&w, 50.0).unwrap();
        assert_eq!(r.samples().dim(), (400, 3));
        assert_eq!(r.sample_rate_hz(), 50.0);
    }

    #[test]
    fn same_rate_is_identity() {
        let x = Array2::from_shape_fn((50, 1), |(t, _)| (t as f32 * 0.37).sin());
        let w = TimeSeriesWindow::new(x, 64.0, Modality::Ppg).unwrap();
        assert_eq!(resample(&w, 64.0).unwrap(), w);
    }

    #[test]
    fn constant_stays_constant() {
        let w = TimeSeriesWindow::new(Array2::from_elem((64, 3), 2.5), 64.0, Modality::Accel).unwrap();
        let r = resample(&w, 50.0).unwrap();
        assert!(r.samples().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn rejects_bad_rate() {
        let w = TimeSeriesWindow::new(Array2::zeros((8, 1)), 8.0, Modality::Ppg).unwrap();
        assert!(resample(&w, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn monotone_envelope_preserved(n in 2usize..200, in_hz in 4.0f64..128.0, out_hz in 4.0f64..128.0) {
            let x = Array2::from_shape_fn((n, 1), |(t, _)| (t as f32).powf(1.3));
            let w = TimeSeriesWindow::new(x.clone(), in_hz, Modality::Ppg).unwrap();
            let r = resample(&w, out_hz).unwrap();
            prop_assume!(r.len() > 0);
            let max_step = x.column(0).windows(2).into_iter().map(|p| p[1] - p[0]).fold(0f32, f32::max);
            let (lo, hi) = (x[[0, 0]], x[[n - 1, 0]]);
            let rmin = r.samples().iter().cloned().fold(f32::INFINITY, f32::min);
            let rmax = r.samples().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            prop_assert!(rmin >= lo - 1e-3 && rmin <= lo + max_step + 1e-3);
            prop_assert!(rmax <= hi + 1e-3 && rmax >= hi - max_step * (1.5 * in_hz / out_hz).ceil().max(1.0) as f32 - 1e-3);
        }
    }
}
