use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub loss: f64,
}

impl MetricsReport {
    /// Metrics from hard predictions.
    ///
    /// Macro averages run over the classes that occur in either the labels or
    /// the predictions. A class with `P + R = 0` scores F1 = 0.
    pub fn from_predictions(labels: &[usize], predictions: &[usize], n_classes: usize, loss: f64) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(Error::Contract(format!(
                "{} labels for {} predictions",
                labels.len(),
                predictions.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::EmptyInput("no predictions to score".into()));
        }
        if let Some(bad) = labels.iter().chain(predictions).find(|&&c| c >= n_classes) {
            return Err(Error::Contract(format!("class {bad} outside 0..{n_classes}")));
        }
        let mut confusion = vec![vec![0usize; n_classes]; n_classes];
        for (&t, &p) in labels.iter().zip(predictions) {
            confusion[t][p] += 1;
        }
        let correct: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
        let (mut ps, mut rs, mut fs) = (MeanOfRatios::default(), MeanOfRatios::default(), MeanOfRatios::default());
        for c in 0..n_classes {
            let tp = confusion[c][c];
            let actual: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            if actual == 0 && predicted == 0 {
                continue;
            }
            ps.push(tp, predicted);
            rs.push(tp, actual);
            // 2PR / (P + R) with the common tp factored out.
            fs.push(2 * tp, actual + predicted);
        }
        Ok(Self {
            accuracy: correct as f64 / labels.len() as f64,
            macro_precision: ps.value(),
            macro_recall: rs.value(),
            macro_f1: fs.value(),
            confusion,
            loss,
        })
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    /// Confusion matrix as CSV with a header row of predicted classes.
    pub fn confusion_csv(&self) -> String {
        let n = self.confusion.len();
        let mut out = String::from("true\\pred");
        for c in 0..n {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        for (t, row) in self.confusion.iter().enumerate() {
            out.push_str(&t.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Mean of count ratios, kept as an exact fraction while it fits so the result is correctly rounded.
#[derive(Default)]
struct MeanOfRatios {
    exact: Option<(u128, u128)>,
    float_sum: f64,
    n: u128,
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl MeanOfRatios {
    /// Adds `num / den`; a zero denominator counts as 0.
    fn push(&mut self, num: usize, den: usize) {
        let (num, den) = if den == 0 { (0, 1) } else { (num as u128, den as u128) };
        self.float_sum += num as f64 / den as f64;
        self.exact = match (self.n, self.exact) {
            (0, _) => Some((num, den)),
            (_, Some((a, b))) => (|| {
                let g = gcd(b, den);
                let lhs = a.checked_mul(den / g)?;
                let rhs = num.checked_mul(b / g)?;
                let (n, d) = (lhs.checked_add(rhs)?, (b / g).checked_mul(den)?);
                let g = gcd(n, d).max(1);
                Some((n / g, d / g))
            })(),
            (_, None) => None,
        };
        self.n += 1;
    }

    fn value(&self) -> f64 {
        const EXACT: u128 = 1 << 53;
        if let Some((a, b)) = self.exact {
            if let Some(d) = b.checked_mul(self.n) {
                let g = gcd(a, d).max(1);
                let (a, d) = (a / g, d / g);
                if a <= EXACT && d <= EXACT {
                    return a as f64 / d as f64;
                }
            }
        }
        self.float_sum / self.n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_mean_is_correctly_rounded() {
        let mut m = MeanOfRatios::default();
        m.push(2, 3);
        m.push(4, 5);
        assert_eq!(m.value(), 11.0 / 15.0);
        let mut z = MeanOfRatios::default();
        z.push(0, 0);
        z.push(1, 1);
        assert_eq!(z.value(), 0.5);
    }
}
