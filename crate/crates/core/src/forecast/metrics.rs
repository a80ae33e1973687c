use serde::{Deserialize, Serialize};

use super::ForecastError;

/// Point-forecast error summary. `r2` is `None` when the actual series is
/// constant, since the total sum of squares is then zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub r2: Option<f64>,
}

pub fn metrics(pred: &[f64], actual: &[f64]) -> Result<Metrics, ForecastError> {
    if pred.len() != actual.len() {
        return Err(ForecastError::Dimension(format!(
            "prediction has {} entries, actual has {}",
            pred.len(),
            actual.len()
        )));
    }
    if actual.len() < 2 {
        return Err(ForecastError::Insufficient(
            "metrics need at least 2 points".into(),
        ));
    }
    let n = actual.len() as f64;
    let mean = actual.iter().sum::<f64>() / n;
    let mut abs = 0.0;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (p, a) in pred.iter().zip(actual) {
        let e = p - a;
        abs += e.abs();
        ss_res += e * e;
        ss_tot += (a - mean) * (a - mean);
    }
    Ok(Metrics {
        mae: abs / n,
        rmse: (ss_res / n).sqrt(),
        r2: (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_fit() {
        let a = [1.0, 4.0, 2.5];
        assert_eq!(
            metrics(&a, &a).unwrap(),
            Metrics {
                mae: 0.0,
                rmse: 0.0,
                r2: Some(1.0)
            }
        );
    }

    #[test]
    fn hand_values() {
        let m = metrics(&[2.0, 2.0], &[0.0, 2.0]).unwrap();
        assert_eq!(m.mae, 1.0);
        assert_eq!(m.rmse, 2f64.sqrt());
        // ss_res 4, ss_tot 2
        assert_eq!(m.r2, Some(-1.0));
    }

    #[test]
    fn mean_predictor_has_zero_r2() {
        let actual = [3.0, 5.0, 7.0, 9.0];
        let m = metrics(&[6.0; 4], &actual).unwrap();
        assert_eq!(m.r2, Some(0.0));
    }

    #[test]
    fn constant_actual_leaves_r2_undefined() {
        let m = metrics(&[1.0, 2.0], &[3.0, 3.0]).unwrap();
        assert_eq!(m.r2, None);
        assert!(metrics(&[1.0], &[1.0]).is_err());
        assert!(metrics(&[1.0, 2.0], &[1.0]).is_err());
    }
}
